"""Binary containers for dense tensors (``LRST``) and decomposed layers (``LRSD``).

All integers and floats are little-endian.

LRST::

    b"LRST" | version u16 | dtype u8 (0 = f32) | ndim u8 | dims u32 * ndim | f32 payload (row-major)

LRSD::

    b"LRSD" | version u16 | ndim u8 (= 4) | dims u32 * 4 | rank u32 | achieved_epsilon f64
    | factors A, B, C, D as f32 row-major (dims[n] x rank each)
    | nnz u32 | nnz * (index u32, value f32), sorted by index
    | index width u8 (2 or 4) | slice lengths u32 * dims[0]
    | slice values f32 * nnz | packed indices (u16 or u32) * nnz
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .conv import SparseKernel, index_dtype, pack_sparse_kernel
from .decomp import DecomposedLayer, SparseTensor4
from .tensor import CpFactors

TENSOR_MAGIC = b"LRST"
LAYER_MAGIC = b"LRSD"
VERSION = 1
DTYPE_F32 = 0

_PAIR = np.dtype([("index", "<u4"), ("value", "<f4")])


class FormatError(ValueError):
    """Raised for malformed or unsupported container bytes."""


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated container: need {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes")


def _header(r: _Reader, magic: bytes):
    got = bytes(r.take(4))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("H")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def tensor_to_bytes(t) -> bytes:
    arr = np.ascontiguousarray(t, dtype="<f4")
    if arr.ndim > 255 or arr.ndim == 0:
        raise ValueError("tensor rank must be 1..255")
    head = TENSOR_MAGIC + struct.pack("<HBB", VERSION, DTYPE_F32, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    r = _Reader(buf)
    _header(r, TENSOR_MAGIC)
    dtype, ndim = r.unpack("BB")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype tag {dtype}")
    dims = r.unpack(f"{ndim}I")
    if ndim == 0 or min(dims) < 1:
        raise FormatError(f"bad dims {dims}")
    data = r.array("<f4", math.prod(dims))
    r.finish()
    return data.astype(np.float32).reshape(dims)


def layer_to_bytes(layer: DecomposedLayer) -> bytes:
    dims = layer.original_dims
    parts = [LAYER_MAGIC, struct.pack("<HB4IId", VERSION, 4, *dims, layer.rank, layer.achieved_epsilon)]
    parts += [np.ascontiguousarray(m, dtype="<f4").tobytes() for m in layer.low_rank.matrices]
    pairs = np.empty(layer.sparse.nnz, _PAIR)
    pairs["index"] = layer.sparse.indices
    pairs["value"] = layer.sparse.values
    parts += [struct.pack("<I", layer.sparse.nnz), pairs.tobytes()]
    kernel = pack_sparse_kernel(layer.sparse)
    parts += [
        struct.pack("<B", kernel.packed.dtype.itemsize),
        kernel.slice_lengths.astype("<u4").tobytes(),
        kernel.values.astype("<f4").tobytes(),
        kernel.packed.astype(kernel.packed.dtype.newbyteorder("<")).tobytes(),
    ]
    return b"".join(parts)


def layer_from_bytes(buf: bytes, with_kernel: bool = False):
    """Decode an LRSD container; with ``with_kernel`` also return the stored packed kernel."""
    r = _Reader(buf)
    _header(r, LAYER_MAGIC)
    (ndim,) = r.unpack("B")
    if ndim != 4:
        raise FormatError(f"layer containers hold order-4 tensors, got ndim {ndim}")
    dims = r.unpack("4I")
    rank, eps = r.unpack("Id")
    if min(dims) < 1 or rank < 1:
        raise FormatError(f"bad dims {dims} or rank {rank}")
    mats = [r.array("<f4", n * rank).reshape(n, rank) for n in dims]
    (nnz,) = r.unpack("I")
    pairs = r.array(_PAIR, nnz)
    (width,) = r.unpack("B")
    expected = index_dtype(dims)
    if width != expected.itemsize:
        raise FormatError(f"index width {width} does not match dims {dims}")
    lengths = r.array("<u4", dims[0]).astype(np.int64)
    values = r.array("<f4", nnz)
    packed = r.array(expected.newbyteorder("<"), nnz)
    r.finish()

    try:
        sparse = SparseTensor4(dims, pairs["index"], pairs["value"])
        kernel = SparseKernel(dims, np.concatenate([[0], np.cumsum(lengths)]), values, packed)
        layer = DecomposedLayer(CpFactors(*mats), sparse, eps, dims)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if not (np.array_equal(kernel.to_sparse_tensor().indices, sparse.indices)
            and np.array_equal(kernel.values.view(np.uint32), sparse.values.view(np.uint32))):
        raise FormatError("packed kernel section disagrees with the sparse entries")
    return (layer, kernel) if with_kernel else layer


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_layer(path, layer: DecomposedLayer) -> None:
    Path(path).write_bytes(layer_to_bytes(layer))


def load_layer(path, with_kernel: bool = False):
    return layer_from_bytes(Path(path).read_bytes(), with_kernel)
