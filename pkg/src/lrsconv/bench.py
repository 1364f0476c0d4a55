"""Microbenchmarks of the convolution paths over a layer catalog.

Each measurement is the median wall time of ``repeats`` calls after two
warm-up calls, single-threaded. Speedups are relative to this package's own
direct dense convolution timed the same way, not to any framework's
optimized convolution.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np

from .compressor import LayerCatalogEntry
from .conv import ConvSpec, conv_cp, conv_dense, conv_sparse, pack_sparse_kernel
from .decomp import project_sparse
from .tensor import DTYPE, CpFactors

log = logging.getLogger(__name__)

PATHS = ("dense", "cp", "sparse", "decomposed")
WARMUP = 2
MIN_REPEATS = 5
DEFAULT_DENSITY = 0.01
DEFAULT_CP_COMPRESSION = 5.0
MEMORY_LIMIT = 4 << 30

CSV_COLUMNS = ("layer", "path", "scale", "input_shape", "weight_dims", "rank", "density", "seed",
               "repeats", "median_s", "dense_median_s", "speedup", "error")


@dataclass
class BenchResult:
    layer: int
    path: str
    scale: int
    input_shape: tuple
    weight_dims: tuple
    repeats: int
    median_s: float | None = None
    dense_median_s: float | None = None
    speedup: float | None = None
    rank: int | None = None
    density: float | None = None
    seed: int = 0
    error: str | None = None


def rank_for_compression(dims, ratio: float) -> int:
    """Largest CP rank whose factors are at least ``ratio`` times smaller than the kernel."""
    return max(1, math.floor(math.prod(dims) / (ratio * sum(dims))))


def time_call(fn, repeats: int, warmup: int = WARMUP) -> float:
    if repeats < MIN_REPEATS:
        raise ValueError(f"need at least {MIN_REPEATS} repeats")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _check_memory(entry: LayerCatalogEntry, scale: int, rank: int | None):
    c, h, w = entry.input_shape
    in_c, out_c, kx, ky = entry.weight_dims
    pixels = h * w * scale * scale
    need = 4 * (pixels * (c + out_c + 3 * (rank or 0)) + in_c * out_c * kx * ky)
    if need > MEMORY_LIMIT:
        raise MemoryError(f"layer {entry.index}: input {(c, h * scale, w * scale)} with kernel "
                          f"{entry.weight_dims} needs ~{need >> 20} MiB")


def _make_runner(path: str, x, w, rank: int | None, density: float | None, rng):
    spec = ConvSpec.for_dims(w.shape)
    if path == "dense":
        return lambda: conv_dense(x, w, spec)
    if path in ("cp", "decomposed"):
        scale = (1.0 / rank) ** 0.25
        factors = CpFactors(*(rng.standard_normal((n, rank)) * scale for n in w.shape))
    if path in ("sparse", "decomposed"):
        kernel = pack_sparse_kernel(project_sparse(w, density))
    if path == "cp":
        return lambda: conv_cp(x, factors, spec)
    if path == "sparse":
        return lambda: conv_sparse(x, kernel, spec)
    if path == "decomposed":
        return lambda: conv_cp(x, factors, spec) + conv_sparse(x, kernel, spec)
    raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")


def bench_layer(entry: LayerCatalogEntry, path: str, param: float | None = None, scale: int = 1,
                repeats: int = 20, seed: int = 0, dense_median: float | None = None) -> BenchResult:
    """Time one path on random weights and inputs of the catalog shape.

    ``param`` is the CP rank for ``cp`` (default: 5x parameter compression),
    the density for ``sparse`` (default 1%), and is unused for ``dense``.
    ``decomposed`` uses the default rank and density. The input is scaled
    spatially by ``scale``; pass ``dense_median`` to reuse a dense timing.
    """
    if path not in PATHS:
        raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")
    if scale not in (1, 2, 3):
        raise ValueError("scale must be 1, 2 or 3")
    dims = entry.weight_dims
    rank = density = None
    if path in ("cp", "decomposed"):
        rank = int(param) if path == "cp" and param is not None else rank_for_compression(dims, DEFAULT_CP_COMPRESSION)
    if path in ("sparse", "decomposed"):
        density = float(param) if path == "sparse" and param is not None else DEFAULT_DENSITY
    _check_memory(entry, scale, rank)

    c, h, w_ = entry.input_shape
    shape = (c, h * scale, w_ * scale)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(DTYPE)
    w = rng.standard_normal(dims).astype(DTYPE)
    median = time_call(_make_runner(path, x, w, rank, density, rng), repeats)
    if path == "dense":
        dense_median = median
    elif dense_median is None:
        dense_median = time_call(_make_runner("dense", x, w, None, None, rng), repeats)
    return BenchResult(entry.index, path, scale, shape, dims, repeats, median, dense_median,
                       dense_median / median, rank, density, seed)


def machine_info() -> dict:
    model = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {"cpu": model, "cores": os.cpu_count(), "python": platform.python_version(),
            "platform": platform.platform()}


def run_suite(catalog: list[LayerCatalogEntry], paths=("dense", "cp", "sparse"), scales=(1,),
              repeats: int = 20, seed: int = 0, params: dict | None = None) -> dict:
    """Benchmark every (layer, scale, path) in catalog order.

    Dense is timed once per (layer, scale) and shared by the other paths.
    Failures become rows with ``error`` set. ``params`` maps a path name to
    its ``param`` for :func:`bench_layer`.
    """
    params = params or {}
    rows = []
    for entry in catalog:
        for scale in scales:
            dense = None
            for path in paths:
                try:
                    if dense is None and path != "dense":
                        dense = bench_layer(entry, "dense", None, scale, repeats, seed).median_s
                    res = bench_layer(entry, path, params.get(path), scale, repeats, seed, dense)
                    dense = res.dense_median_s
                except (MemoryError, ValueError) as exc:
                    log.warning("layer %d %s x%d failed: %s", entry.index, path, scale, exc)
                    c, h, w = entry.input_shape
                    res = BenchResult(entry.index, path, scale, (c, h * scale, w * scale), entry.weight_dims,
                                      repeats, seed=seed, error=str(exc))
                rows.append(res)
    return {"machine": machine_info(), "results": rows}


def results_to_csv(rows: list[BenchResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        d = asdict(r)
        d["input_shape"] = "x".join(map(str, r.input_shape))
        d["weight_dims"] = "x".join(map(str, r.weight_dims))
        writer.writerow({k: "" if d[k] is None else d[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def results_to_json(suite: dict) -> str:
    return json.dumps({"machine": suite["machine"], "results": [asdict(r) for r in suite["results"]]}, indent=2)
