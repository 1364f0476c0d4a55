"""Per-layer compression of a whole network and the parameter accounting.

Model-level compression is the ratio

    (sum_i P(W_i) + M) / (sum_i P(W_hat_i) + M)

where ``M`` counts parameters outside the convolution kernels and
``W_hat_i`` is the decomposed layer, or the original one when it was left
uncompressed. The partial ratio restricts both sums to compressed layers and
drops ``M``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .decomp import DecompConfig, DecomposedLayer, equilibrate_factors, search_min_rank
from .tensor import as_tensor4

log = logging.getLogger(__name__)

# parameters outside convolution kernels: 26,128,695 total - 23,454,912 in kernels
RESNET50_EXTRA_PARAMS = 2_673_783

CATALOG_COLUMNS = ("index", "in_c", "in_h", "in_w", "out_c", "kx", "ky")


@dataclass(frozen=True)
class LayerCatalogEntry:
    index: int
    input_shape: tuple[int, int, int]
    kernel_shape: tuple[int, int, int, int]  # (out, in, kx, ky)
    dense_time: float | None = None

    def __post_init__(self):
        if min(self.input_shape) < 1 or min(self.kernel_shape) < 1:
            raise ValueError(f"layer {self.index}: dims must be positive")
        if self.input_shape[0] != self.kernel_shape[1]:
            raise ValueError(f"layer {self.index}: input channels {self.input_shape[0]} "
                             f"do not match kernel {self.kernel_shape}")

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        """Kernel dims in (in, out, kx, ky) order."""
        out_c, in_c, kx, ky = self.kernel_shape
        return (in_c, out_c, kx, ky)

    @property
    def param_count(self) -> int:
        return math.prod(self.kernel_shape)


def parse_catalog(text: str) -> list[LayerCatalogEntry]:
    rows = csv.DictReader(io.StringIO(text))
    missing = set(CATALOG_COLUMNS) - set(rows.fieldnames or ())
    if missing:
        raise ValueError(f"catalog is missing columns {sorted(missing)}")
    out = []
    for row in rows:
        v = {k: int(row[k]) for k in CATALOG_COLUMNS}
        t = row.get("dense_time")
        out.append(LayerCatalogEntry(
            v["index"], (v["in_c"], v["in_h"], v["in_w"]), (v["out_c"], v["in_c"], v["kx"], v["ky"]),
            float(t) if t not in (None, "") else None,
        ))
    return out


def load_catalog(source: str = "resnet50") -> list[LayerCatalogEntry]:
    """Built-in catalog by name, or a CSV file path."""
    if source == "resnet50":
        text = resources.files("lrsconv").joinpath("data/resnet50.csv").read_text()
    else:
        text = Path(source).read_text()
    return parse_catalog(text)


def order_layers(catalog: list[LayerCatalogEntry]) -> list[int]:
    """Positions sorted by parameter count, largest first; ties keep catalog order."""
    return sorted(range(len(catalog)), key=lambda p: (-catalog[p].param_count, catalog[p].index, p))


def compress_layer(w, cfg: DecompConfig) -> DecomposedLayer:
    """Minimum-rank decomposition within ``cfg.epsilon``, with balanced factor norms.

    Check ``.compressed`` on the result: a decomposition that is not smaller
    than the dense kernel should not replace it.
    """
    w = as_tensor4(w)
    layer = search_min_rank(w, cfg)
    layer = replace(layer, low_rank=equilibrate_factors(layer.low_rank))
    if not layer.compressed:
        log.info("layer %s not compressed: %d >= %d params", w.shape, layer.compressed_params,
                 layer.param_counts[0])
    return layer


def sweep_epsilon(w, eps_grid, cfg: DecompConfig) -> list[tuple[float, float, DecomposedLayer]]:
    """Compress ``w`` at each budget of an ascending grid; returns (eps, ratio, layer) rows.

    A looser budget is searched only up to the rank found for the previous
    one, and falls back to that result if the capped search misses, so the
    compression ratio never drops along the grid.
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise ValueError("epsilon grid is empty")
    if any(b < a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    w = as_tensor4(w)
    rows = []
    prev = None
    for eps in eps_grid:
        run_cfg = replace(cfg, epsilon=eps)
        if prev is not None and prev.achieved_epsilon <= eps:
            run_cfg = replace(run_cfg, max_rank=prev.rank)
        layer = compress_layer(w, run_cfg)
        if prev is not None and prev.achieved_epsilon <= eps and layer.achieved_epsilon > eps:
            layer = prev
        rows.append((eps, layer.compression_ratio, layer))
        prev = layer
    return rows


def load_schedule(path) -> dict:
    """Per-layer epsilon schedule from JSON: ``{"default": 0.3, "layers": {"12": 0.1}}``."""
    data = json.loads(Path(path).read_text())
    return {"default": float(data.get("default", 0.1)),
            "layers": {int(k): float(v) for k, v in data.get("layers", {}).items()}}


def compress_model(weights: dict, cfg: DecompConfig, schedule: dict | None = None,
                   catalog: list[LayerCatalogEntry] | None = None) -> dict:
    """Compress ``{layer index: weight tensor}`` largest layer first.

    ``schedule`` maps layer indices to epsilon budgets (``load_schedule``
    format); unlisted layers use its default, or ``cfg.epsilon`` with no
    schedule. Returns ``{index: DecomposedLayer}`` in processing order.
    """
    if catalog is None:
        catalog = [LayerCatalogEntry(i, (w.shape[0], 1, 1), (w.shape[1], w.shape[0], *w.shape[2:]))
                   for i, w in sorted(weights.items())]
    out = {}
    for pos in order_layers(catalog):
        idx = catalog[pos].index
        if idx not in weights:
            continue
        eps = cfg.epsilon
        if schedule is not None:
            eps = schedule["layers"].get(idx, schedule["default"])
        out[idx] = compress_layer(weights[idx], replace(cfg, epsilon=eps))
        log.info("layer %d: rank %d, eps %.4f", idx, out[idx].rank, out[idx].achieved_epsilon)
    return out


@dataclass(frozen=True)
class LayerRecord:
    index: int
    original_params: int
    compressed_params: int
    compressed: bool
    rank: int | None = None
    achieved_epsilon: float | None = None

    @property
    def ratio(self) -> float:
        return self.original_params / self.compressed_params

    @classmethod
    def from_layer(cls, index: int, layer: DecomposedLayer) -> "LayerRecord":
        p_w = layer.param_counts[0]
        ok = layer.compressed
        return cls(index, p_w, layer.compressed_params if ok else p_w, ok, layer.rank, layer.achieved_epsilon)

    @classmethod
    def uncompressed(cls, index: int, params: int) -> "LayerRecord":
        return cls(index, params, params, False)


@dataclass(frozen=True)
class CompressionReport:
    records: list[LayerRecord]
    extra_params: int
    partial: Fraction = field(init=False)
    total: Fraction = field(init=False)

    def __post_init__(self):
        done = [r for r in self.records if r.compressed]
        partial = Fraction(1)
        if done:
            partial = Fraction(sum(r.original_params for r in done), sum(r.compressed_params for r in done))
        orig = sum(r.original_params for r in self.records) + self.extra_params
        new = sum(r.compressed_params for r in self.records) + self.extra_params
        object.__setattr__(self, "partial", partial)
        object.__setattr__(self, "total", Fraction(orig, new) if new else Fraction(1))

    def to_dict(self) -> dict:
        return {
            "extra_params": self.extra_params,
            "partial_compression": float(self.partial),
            "total_compression": float(self.total),
            "layers": [dict(asdict(r), ratio=r.ratio) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["index", "rank", "achieved_epsilon", "original_params", "compressed_params", "ratio", "compressed"]
        writer = csv.DictWriter(buf, cols, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow({c: getattr(r, c) for c in cols})
        return buf.getvalue()


def aggregate_report(layers, m: int = 0) -> CompressionReport:
    """Model accounting from per-layer results.

    ``layers`` holds ``DecomposedLayer`` objects, plain parameter counts for
    layers left dense, ``(index, item)`` pairs of either, or ready
    ``LayerRecord`` objects.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    records = []
    for pos, item in enumerate(layers):
        idx = pos
        if isinstance(item, tuple):
            idx, item = item
        if isinstance(item, LayerRecord):
            records.append(item)
        elif isinstance(item, DecomposedLayer):
            records.append(LayerRecord.from_layer(idx, item))
        elif isinstance(item, (int, np.integer)):
            records.append(LayerRecord.uncompressed(idx, int(item)))
        else:
            raise TypeError(f"cannot account for {type(item).__name__}")
    return CompressionReport(records, int(m))
