"""Three ways to run a stride-1, same-padded convolution.

* :func:`conv_dense` - direct evaluation over every weight; the reference.
* :func:`conv_cp` - the CP-factorized kernel as four cheap convolutions:
  1x1 (I -> r), depthwise Kx x 1, depthwise 1 x Ky, 1x1 (r -> J).
* :func:`conv_sparse` - scatter-add over the nonzeros of a packed sparse kernel.

All paths compute ``Y[j, h, w] = sum X[i, h + kx - Kx//2, w + ky - Ky//2] * W[i, j, kx, ky]``
with zeros outside the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .decomp import DecomposedLayer, SparseTensor4
from .tensor import DTYPE, CpFactors, as_tensor4

U16_LIMIT = 65535


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]

    def __post_init__(self):
        kx, ky = (int(k) for k in self.kernel)
        if kx < 1 or ky < 1 or kx % 2 == 0 or ky % 2 == 0:
            raise ValueError(f"kernel extents must be odd and positive, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        object.__setattr__(self, "kernel", (kx, ky))

    @property
    def padding(self) -> tuple[int, int]:
        return (self.kernel[0] // 2, self.kernel[1] // 2)

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.in_channels, self.out_channels, *self.kernel)

    @classmethod
    def for_dims(cls, dims) -> "ConvSpec":
        i, j, kx, ky = dims
        return cls(i, j, (kx, ky))


def as_feature_map(x, channels: int | None = None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"feature map must be (C, H, W), got {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise ValueError(f"input has {x.shape[0]} channels, layer expects {channels}")
    return x


def _resolve(spec: ConvSpec | None, dims) -> ConvSpec:
    if spec is None:
        return ConvSpec.for_dims(dims)
    if spec.weight_dims != tuple(dims):
        raise ValueError(f"weights {tuple(dims)} do not match {spec}")
    return spec


def conv_dense(x, w, spec: ConvSpec | None = None) -> np.ndarray:
    w = as_tensor4(w)
    spec = _resolve(spec, w.shape)
    x = as_feature_map(x, spec.in_channels)
    C, H, W = x.shape
    out = np.zeros((spec.out_channels, H * W), DTYPE)
    _kernels.dense_direct(x.reshape(C, H * W), w, H, W, out)
    return out.reshape(-1, H, W)


def conv_cp(x, f: CpFactors, spec: ConvSpec | None = None) -> np.ndarray:
    spec = _resolve(spec, f.dims)
    x = as_feature_map(x, spec.in_channels)
    C, H, W = x.shape
    stage_a = np.zeros((f.rank, H * W), DTYPE)
    _kernels.pointwise(x.reshape(C, H * W), f.a, stage_a)
    stage_c = np.zeros_like(stage_a)
    _kernels.depthwise(stage_a, f.c, H, W, True, stage_c)
    stage_d = np.zeros_like(stage_a)
    _kernels.depthwise(stage_c, f.d, H, W, False, stage_d)
    out = np.zeros((spec.out_channels, H * W), DTYPE)
    _kernels.pointwise(stage_d, np.ascontiguousarray(f.b.T), out)
    return out.reshape(-1, H, W)


@dataclass(frozen=True)
class SparseKernel:
    """Sparse weights grouped by input channel.

    Slice ``i`` occupies ``values[offsets[i]:offsets[i+1]]`` and the matching
    ``packed`` range, where ``packed = j * (Kx * Ky) + kx * Ky + ky``.
    ``packed`` is uint16 unless ``J * Kx * Ky`` exceeds 65535.
    """

    dims: tuple[int, int, int, int]
    offsets: np.ndarray
    values: np.ndarray
    packed: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=DTYPE)
        packed = np.ascontiguousarray(self.packed, dtype=index_dtype(dims))
        if offsets.shape != (dims[0] + 1,) or offsets[0] != 0 or np.any(np.diff(offsets) < 0):
            raise ValueError("offsets must be a non-decreasing table of I + 1 entries starting at 0")
        if values.shape != packed.shape or offsets[-1] != values.size:
            raise ValueError("values and packed indices must match the offset table")
        if packed.size and int(packed.max()) >= dims[1] * dims[2] * dims[3]:
            raise ValueError("packed index out of range")
        for name, val in (("dims", dims), ("offsets", offsets), ("values", values), ("packed", packed)):
            object.__setattr__(self, name, val)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def slice_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def slice(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return self.values[lo:hi], self.packed[lo:hi]

    def decode(self, packed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split packed indices into (out_channel, kx, ky)."""
        _, _, kx, ky = self.dims
        p = np.asarray(packed, dtype=np.int64)
        return p // (kx * ky), (p % (kx * ky)) // ky, p % ky

    def to_sparse_tensor(self) -> SparseTensor4:
        block = math.prod(self.dims[1:])
        slice_of = np.repeat(np.arange(self.dims[0], dtype=np.int64), self.slice_lengths)
        return SparseTensor4(self.dims, slice_of * block + self.packed, self.values)

    def to_dense(self) -> np.ndarray:
        return self.to_sparse_tensor().to_dense()


def index_dtype(dims) -> np.dtype:
    _, j, kx, ky = dims
    return np.dtype(np.uint32 if j * kx * ky > U16_LIMIT else np.uint16)


def pack_sparse_kernel(s: SparseTensor4) -> SparseKernel:
    block = math.prod(s.dims[1:])
    idx = s.indices.astype(np.int64)
    # indices are sorted, so entries already come grouped by input channel
    offsets = np.searchsorted(idx, np.arange(s.dims[0] + 1) * block)
    return SparseKernel(s.dims, offsets, s.values, idx % block)


def conv_sparse(x, k: SparseKernel, spec: ConvSpec | None = None) -> np.ndarray:
    spec = _resolve(spec, k.dims)
    x = as_feature_map(x, spec.in_channels)
    C, H, W = x.shape
    out = np.zeros((spec.out_channels, H * W), DTYPE)
    _kernels.sparse_scatter(x.reshape(C, H * W), k.offsets, k.values, k.packed, k.dims[2], k.dims[3], H, W, out)
    return out.reshape(-1, H, W)


def conv_decomposed(x, layer: DecomposedLayer, spec: ConvSpec | None = None,
                    kernel: SparseKernel | None = None) -> np.ndarray:
    """Low-rank path plus sparse path; pass ``kernel`` to reuse a packed sparse term."""
    spec = _resolve(spec, layer.original_dims)
    if kernel is None:
        kernel = pack_sparse_kernel(layer.sparse)
    return conv_cp(x, layer.low_rank, spec) + conv_sparse(x, kernel, spec)
