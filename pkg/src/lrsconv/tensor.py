"""Dense order-4 tensors, unfoldings, Khatri-Rao products and CP reconstruction.

Tensors are plain ``float32`` numpy arrays. Weight tensors use the index
order ``(I, J, K, T)`` = (in-channels, out-channels, kernel-x, kernel-y).
Modes are numbered 1..4, as in the usual tensor-algebra notation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


def as_tensor4(t) -> np.ndarray:
    """Validate and return ``t`` as a C-contiguous float32 order-4 array."""
    arr = np.ascontiguousarray(t, dtype=DTYPE)
    if arr.ndim != 4:
        raise ValueError(f"expected an order-4 tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
    return arr


def frobenius_norm(t) -> float:
    # accumulate in float64 so large tensors do not lose digits
    x = np.asarray(t, dtype=np.float64).ravel()
    return float(np.sqrt(np.dot(x, x)))


def _check_mode(mode: int, ndim: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 1 <= mode <= ndim:
        raise ValueError(f"mode must be in 1..{ndim}, got {mode!r}")
    return int(mode) - 1


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization.

    Rows are indexed by the chosen mode. Columns run over the remaining modes
    in ascending order with the lowest remaining mode varying fastest, so that

        unfold(L, 1) == A @ khatri_rao([D, C, B]).T

    for ``L = reconstruct_cp(CpFactors(A, B, C, D))``.
    """
    t = np.asarray(t)
    axis = _check_mode(mode, t.ndim)
    return np.reshape(np.moveaxis(t, axis, 0), (t.shape[axis], -1), order="F")


def fold(m, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    dims = tuple(int(d) for d in dims)
    axis = _check_mode(mode, len(dims))
    m = np.asarray(m)
    moved = (dims[axis],) + dims[:axis] + dims[axis + 1:]
    if m.shape != (moved[0], int(np.prod(moved[1:]))):
        raise ValueError(f"matrix of shape {m.shape} cannot fold to {dims} along mode {mode}")
    return np.ascontiguousarray(np.moveaxis(np.reshape(m, moved, order="F"), 0, axis))


def khatri_rao(ms) -> np.ndarray:
    """Column-wise Kronecker product of matrices, taken in list order."""
    ms = [np.asarray(m) for m in ms]
    if not ms:
        raise ValueError("khatri_rao needs at least one matrix")
    if any(m.ndim != 2 for m in ms):
        raise ValueError("khatri_rao inputs must be matrices")
    r = ms[0].shape[1]
    if any(m.shape[1] != r for m in ms):
        raise ValueError(f"column counts differ: {[m.shape[1] for m in ms]}")
    out = ms[0]
    for m in ms[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, r)
    return out


@dataclass(frozen=True)
class CpFactors:
    """Factor matrices of a rank-``r`` CP model ``L[i,j,k,t] = sum_r a[i,r] b[j,r] c[k,r] d[t,r]``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        mats = []
        for name in "abcd":
            m = np.ascontiguousarray(getattr(self, name), dtype=DTYPE)
            if m.ndim != 2 or m.shape[0] < 1:
                raise ValueError(f"factor {name} must be a non-empty matrix, got {m.shape}")
            object.__setattr__(self, name, m)
            mats.append(m)
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1 or 0 in ranks:
            raise ValueError(f"factors must share a column count >= 1, got {[m.shape for m in mats]}")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0], self.d.shape[0])

    @property
    def matrices(self) -> tuple[np.ndarray, ...]:
        return (self.a, self.b, self.c, self.d)

    @classmethod
    def zeros(cls, dims, rank: int = 1) -> "CpFactors":
        return cls(*(np.zeros((n, rank), DTYPE) for n in dims))


def reconstruct_cp(f: CpFactors, dims=None) -> np.ndarray:
    """Dense tensor represented by ``f``; ``dims`` optionally asserts the target shape."""
    if dims is not None and tuple(dims) != f.dims:
        raise ValueError(f"factor rows {f.dims} do not match target dims {tuple(dims)}")
    a, b, c, d = (m.astype(np.float64) for m in f.matrices)
    return np.einsum("ir,jr,kr,tr->ijkt", a, b, c, d, optimize=True).astype(DTYPE)
