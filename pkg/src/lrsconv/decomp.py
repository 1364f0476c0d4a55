"""Low-rank + sparse decomposition ``W ~ L + S`` of order-4 weight tensors.

``L`` is a CP model fitted by alternating least squares, ``S`` keeps a fixed
fraction of entries chosen by largest magnitude. The two are updated in turn:

    L_i = one ALS sweep fitted to (W - S_{i-1})
    S_i = top-magnitude projection of (W - L_i)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, CpFactors, as_tensor4, fold, frobenius_norm, khatri_rao, reconstruct_cp, unfold

log = logging.getLogger(__name__)

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class SparseTensor4:
    """Coordinate-format sparse tensor: sorted linear indices and their values."""

    dims: tuple[int, int, int, int]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        idx = np.ascontiguousarray(self.indices, dtype=np.uint32)
        val = np.ascontiguousarray(self.values, dtype=DTYPE)
        if len(dims) != 4 or min(dims) < 1:
            raise ValueError(f"bad dims {dims}")
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D arrays of equal length")
        if idx.size and (np.any(np.diff(idx.astype(np.int64)) <= 0) or int(idx[-1]) >= math.prod(dims)):
            raise ValueError("indices must be strictly increasing and in range")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @classmethod
    def empty(cls, dims) -> "SparseTensor4":
        return cls(dims, np.zeros(0, np.uint32), np.zeros(0, DTYPE))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(math.prod(self.dims), DTYPE)
        out[self.indices] = self.values
        return out.reshape(self.dims)


@dataclass(frozen=True)
class DecompConfig:
    epsilon: float = 0.1
    cardinality: float = 0.01
    max_rank: int = 64
    als_max_iters: int = 100
    als_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if not 0 <= self.cardinality < 1:
            raise ValueError(f"cardinality must be in [0, 1), got {self.cardinality}")
        if self.max_rank < 1 or self.als_max_iters < 1:
            raise ValueError("max_rank and als_max_iters must be positive")


def sparse_count(numel: int, cardinality: float) -> int:
    """Number of entries kept at a given cardinality fraction (half rounds up)."""
    return int(math.floor(cardinality * numel + 0.5))


def sparse_param_count(nnz: int, in_channels: int) -> int:
    """Storage cost of the sparse term in 32-bit words: value + 16-bit index per entry, plus slice offsets."""
    return (3 * nnz + 1) // 2 + in_channels


def lowrank_param_count(rank: int, dims) -> int:
    return rank * sum(dims)


@dataclass(frozen=True)
class DecomposedLayer:
    low_rank: CpFactors
    sparse: SparseTensor4
    achieved_epsilon: float
    original_dims: tuple[int, int, int, int] = field(default=None)

    def __post_init__(self):
        dims = self.low_rank.dims if self.original_dims is None else tuple(int(d) for d in self.original_dims)
        if dims != self.low_rank.dims or dims != self.sparse.dims:
            raise ValueError("factor, sparse and original dims disagree")
        object.__setattr__(self, "original_dims", dims)

    @property
    def rank(self) -> int:
        return self.low_rank.rank

    @property
    def param_counts(self) -> tuple[int, int, int]:
        """(P(W), P(L), P(S))."""
        dims = self.original_dims
        return (
            math.prod(dims),
            lowrank_param_count(self.rank, dims),
            sparse_param_count(self.sparse.nnz, dims[0]),
        )

    @property
    def compressed_params(self) -> int:
        _, p_l, p_s = self.param_counts
        return p_l + p_s

    @property
    def compressed(self) -> bool:
        """False when the decomposed form is not smaller than the dense tensor."""
        return self.compressed_params < self.param_counts[0]

    @property
    def compression_ratio(self) -> float:
        return self.param_counts[0] / self.compressed_params

    def dense_weight(self) -> np.ndarray:
        return reconstruct_cp(self.low_rank) + self.sparse.to_dense()


def _top_magnitude(flat: np.ndarray, n: int) -> np.ndarray:
    """Sorted indices of the ``n`` largest |values|; ties go to the smaller index."""
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    if n >= flat.size:
        return np.arange(flat.size)
    mag = np.abs(flat)
    thresh = np.partition(mag, flat.size - n)[flat.size - n]
    above = np.flatnonzero(mag > thresh)
    ties = np.flatnonzero(mag == thresh)[: n - above.size]
    return np.sort(np.concatenate([above, ties]))


def project_sparse(t, cardinality: float) -> SparseTensor4:
    """Keep the ``round(cardinality * numel)`` entries of largest magnitude."""
    if not 0 <= cardinality < 1:
        raise ValueError(f"cardinality must be in [0, 1), got {cardinality}")
    t = np.asarray(t)
    flat = t.ravel()
    keep = _top_magnitude(flat, sparse_count(flat.size, cardinality))
    return SparseTensor4(t.shape, keep, flat[keep])


def _als_sweep(mats: list[np.ndarray], target: np.ndarray) -> list[np.ndarray]:
    # mats are float64 and updated in place, one mode at a time
    for n in range(4):
        others = [mats[m] for m in reversed(range(4)) if m != n]
        gram = np.ones((mats[0].shape[1],) * 2)
        for m in others:
            gram *= m.T @ m
        mttkrp = unfold(target, n + 1) @ khatri_rao(others)
        mats[n] = mttkrp @ np.linalg.pinv(gram, rcond=PINV_RCOND)
    return mats


def cp_als_step(factors: CpFactors, target) -> CpFactors:
    """One ALS sweep over A, B, C, D against ``target``."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != factors.dims:
        raise ValueError(f"factor dims {factors.dims} do not match target {target.shape}")
    mats = _als_sweep([m.astype(np.float64) for m in factors.matrices], target)
    return CpFactors(*mats)


def _leading_vectors(m: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    u, _, _ = np.linalg.svd(m, full_matrices=False)
    u = u[:, :count]
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])])
    u = u * np.where(flip == 0, 1.0, flip)
    if u.shape[1] < count:
        extra = rng.standard_normal((m.shape[0], count - u.shape[1]))
        u = np.hstack([u, extra / np.linalg.norm(extra, axis=0)])
    return u


def init_factors(w, rank: int, seed: int = 0) -> list[np.ndarray]:
    """Leading left singular vectors of each unfolding, random columns past the row count.

    Signs are fixed so the largest-magnitude entry of every column is positive.
    """
    w = np.asarray(w, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return [_leading_vectors(unfold(w, n + 1), rank, rng) for n in range(4)]


def _extend_factors(prev: CpFactors, resid: np.ndarray, rank: int, seed: int) -> list[np.ndarray]:
    # keep the previous columns and add new ones from the residual's leading subspaces
    rng = np.random.default_rng(seed)
    extra = rank - prev.rank
    mats = [m.astype(np.float64) for m in prev.matrices]
    if extra <= 0:
        return [m[:, :rank] for m in mats]
    return [np.hstack([m, _leading_vectors(unfold(resid, n + 1), extra, rng)]) for n, m in enumerate(mats)]


def _lrs_run(w64, mats, keep, sparse_vals, n_keep, cfg, norm_w, history=None):
    """Alternate ALS sweeps and sparse projections from a given start until the fit stalls."""
    prev = np.inf
    for it in range(cfg.als_max_iters):
        target = w64.copy()
        target.ravel()[keep] -= sparse_vals
        mats = _als_sweep(mats, target)
        low = fold(mats[0] @ khatri_rao(mats[:0:-1]).T, 1, w64.shape)
        resid = (w64 - low).ravel()
        keep = _top_magnitude(resid, n_keep)
        sparse_vals = resid[keep]
        resid[keep] = 0.0
        eps = math.sqrt(float(resid @ resid)) / norm_w
        if history is not None:
            history.append(eps)
        if prev - eps < cfg.als_tol:
            break
        prev = eps
    return mats, keep, sparse_vals, eps, it + 1


# sparse warm starts tried from scratch, as multiples of the kept-entry count
WARM_START_MULTIPLES = (0, 1, 2, 4)


def decompose_lrs(w, rank: int, cfg: DecompConfig, init: DecomposedLayer | None = None,
                  history: list | None = None) -> tuple[CpFactors, SparseTensor4, float]:
    """Fit ``W ~ L + S`` at a fixed CP rank; returns (factors, sparse term, relative residual).

    Several deterministic starts are run and the lowest residual wins: the
    singular-vector initialization of ``W - S0`` for ``S0`` the top
    ``m * n_keep`` entries of ``W`` (``m`` in ``WARM_START_MULTIPLES``), and,
    when ``init`` is given, its factors padded with residual directions up to
    ``rank`` columns. Each start alternates one ALS sweep on ``W - S`` with a
    sparse projection of ``W - L``, which never increases the residual.
    ``history`` (if given) receives the per-iteration residuals of the
    winning start.
    """
    w = as_tensor4(w)
    if rank < 1 or rank > cfg.max_rank:
        raise ValueError(f"rank must be in [1, {cfg.max_rank}], got {rank}")
    norm_w = frobenius_norm(w)
    if norm_w == 0.0:
        return CpFactors.zeros(w.shape, rank), SparseTensor4.empty(w.shape), 0.0

    w64 = w.astype(np.float64)
    n_keep = sparse_count(w.size, cfg.cardinality)
    starts = []
    for m in sorted({min(m * n_keep, w.size) for m in WARM_START_MULTIPLES}):
        keep0 = _top_magnitude(w64.ravel(), m)
        target = w64.copy()
        target.ravel()[keep0] = 0.0
        starts.append((init_factors(target, rank, cfg.seed), keep0, w64.ravel()[keep0]))
    if init is not None:
        if init.original_dims != w.shape:
            raise ValueError("warm start dims do not match the tensor")
        resid = w64 - init.dense_weight()
        starts.append((_extend_factors(init.low_rank, resid, rank, cfg.seed),
                       init.sparse.indices.astype(np.int64), init.sparse.values.astype(np.float64)))

    best = None
    for mats, keep0, vals0 in starts:
        trace = []
        run = _lrs_run(w64, mats, keep0, vals0, n_keep, cfg, norm_w, trace)
        if best is None or run[3] < best[0][3]:
            best = (run, trace)
    (mats, keep, sparse_vals, _, iters), trace = best
    if history is not None:
        history.extend(trace)
    log.debug("rank %d: %d iterations, eps %.3g", rank, iters, trace[-1])

    factors = CpFactors(*mats)
    sparse = SparseTensor4(w.shape, keep, sparse_vals)
    achieved = frobenius_norm(w64 - reconstruct_cp(factors) - sparse.to_dense()) / norm_w
    return factors, sparse, achieved


def search_min_rank(w, cfg: DecompConfig) -> DecomposedLayer:
    """Smallest rank in [1, max_rank] whose decomposition meets ``cfg.epsilon``.

    Doubles the rank until the budget is met, bisects the last bracket, then
    walks down while the predecessor also passes. Each new rank is also
    warm-started from the largest rank already tried below it, which keeps
    the residual from growing along the search. Runs are deterministic for a
    given seed, so each rank is decomposed at most once.
    """
    if cfg.epsilon <= 0:
        raise ValueError("search_min_rank needs epsilon > 0")
    w = as_tensor4(w)
    runs: dict[int, DecomposedLayer] = {}

    def run(r):
        if r not in runs:
            below = [q for q in runs if q < r]
            init = runs[max(below)] if below else None
            runs[r] = DecomposedLayer(*decompose_lrs(w, r, cfg, init=init), w.shape)
        return runs[r]

    def passes(r):
        return run(r).achieved_epsilon <= cfg.epsilon

    lo, r = 0, 1
    while not passes(r):
        lo = r
        if r == cfg.max_rank:
            log.info("no rank <= %d reaches eps %.3g", cfg.max_rank, cfg.epsilon)
            break
        r = min(2 * r, cfg.max_rank)
    else:
        while r - lo > 1:
            mid = (lo + r) // 2
            if passes(mid):
                r = mid
            else:
                lo = mid
        while r > 1 and passes(r - 1):
            r -= 1

    return run(r)


def equilibrate_factors(f: CpFactors) -> CpFactors:
    """Rescale each rank-1 term so its four factor columns have equal norms.

    Each column norm becomes the geometric mean of the four; columns with a
    zero norm in any factor are left as they are.
    """
    mats = [m.astype(np.float64) for m in f.matrices]
    norms = np.stack([np.linalg.norm(m, axis=0) for m in mats])
    ok = np.all(norms > 0, axis=0)
    target = np.prod(np.where(ok, norms, 1.0), axis=0) ** 0.25
    scaled = [m * np.where(ok, target / np.where(ok, nm, 1.0), 1.0) for m, nm in zip(mats, norms)]
    return CpFactors(*scaled)
