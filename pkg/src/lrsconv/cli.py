"""Command-line front end.

    lrsconv decompose weights.lrst --eps 0.3 --card 0.01 --max-rank 64 --seed 0 -o layer.lrsd
    lrsconv verify weights.lrst layer.lrsd
    lrsconv sweep weights.lrst --eps-grid 0.1,0.3,0.5
    lrsconv bench --catalog resnet50 --paths dense,cp,sparse --scale 1 --repeats 20 -o bench.csv
    lrsconv report --layers dir/ --m 2673783 -o report.json

Weight tensors are stored in (in, out, kx, ky) order. Failures exit with
status 1 and print a JSON object with an ``error`` key on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import bench, compressor
from .container import FormatError, load_layer, load_tensor, save_layer
from .conv import ConvSpec, conv_decomposed, conv_dense
from .decomp import DecompConfig
from .tensor import as_tensor4, frobenius_norm

VERIFY_TOL = 1e-4


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _config(args, eps: float | None = None) -> DecompConfig:
    return DecompConfig(epsilon=args.eps if eps is None else eps, cardinality=args.card,
                        max_rank=args.max_rank, als_max_iters=args.iters, seed=args.seed)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _layer_summary(layer) -> dict:
    p_w, p_l, p_s = layer.param_counts
    return {"dims": list(layer.original_dims), "rank": layer.rank, "nnz": layer.sparse.nnz,
            "achieved_epsilon": layer.achieved_epsilon, "params_original": p_w, "params_low_rank": p_l,
            "params_sparse": p_s, "compression": layer.compression_ratio, "compressed": layer.compressed}


def cmd_decompose(args) -> int:
    w = as_tensor4(load_tensor(args.weights))
    layer = compressor.compress_layer(w, _config(args))
    save_layer(args.output, layer)
    print(json.dumps(dict(_layer_summary(layer), output=args.output, seed=args.seed)))
    return 0


def cmd_verify(args) -> int:
    w = as_tensor4(load_tensor(args.weights))
    layer = load_layer(args.layer)
    if layer.original_dims != w.shape:
        raise ValueError(f"layer dims {layer.original_dims} do not match weights {w.shape}")
    approx = layer.dense_weight()
    norm = frobenius_norm(w)
    eps = frobenius_norm(w.astype(np.float64) - approx) / norm if norm else 0.0

    rng = np.random.default_rng(args.seed)
    spec = ConvSpec.for_dims(w.shape)
    x = rng.standard_normal((w.shape[0], args.size, args.size)).astype(np.float32)
    fast = conv_decomposed(x, layer, spec)
    ref = conv_dense(x, approx, spec)
    ref_norm = frobenius_norm(ref)
    conv_err = frobenius_norm(fast.astype(np.float64) - ref) / ref_norm if ref_norm else frobenius_norm(fast)
    ok = conv_err <= VERIFY_TOL
    print(json.dumps(dict(_layer_summary(layer), recomputed_epsilon=eps, conv_relative_error=conv_err,
                          tolerance=VERIFY_TOL, passed=ok)))
    return 0 if ok else 2


def cmd_sweep(args) -> int:
    w = as_tensor4(load_tensor(args.weights))
    grid = _floats(args.eps_grid)
    rows = compressor.sweep_epsilon(w, grid, _config(args, eps=grid[0]))
    records = [{"epsilon": e, "compression": ratio, "rank": layer.rank,
                "achieved_epsilon": layer.achieved_epsilon} for e, ratio, layer in rows]
    if args.output and args.output.endswith(".csv"):
        lines = ["epsilon,compression,rank,achieved_epsilon"]
        lines += [f"{r['epsilon']},{r['compression']},{r['rank']},{r['achieved_epsilon']}" for r in records]
        _emit("\n".join(lines) + "\n", args.output)
    else:
        _emit(json.dumps(records, indent=2), args.output)
    return 0


def cmd_bench(args) -> int:
    catalog = compressor.load_catalog(args.catalog)
    if args.layers:
        wanted = set(_ints(args.layers))
        catalog = [e for e in catalog if e.index in wanted]
    paths = [p.strip() for p in args.paths.split(",") if p.strip()]
    params = {}
    if args.rank is not None:
        params["cp"] = args.rank
    if args.density is not None:
        params["sparse"] = args.density
    suite = bench.run_suite(catalog, paths, _ints(args.scale), args.repeats, args.seed, params)
    if args.output and args.output.endswith(".json"):
        _emit(bench.results_to_json(suite), args.output)
    else:
        _emit(bench.results_to_csv(suite["results"]), args.output)
    return 0


def cmd_report(args) -> int:
    items = {}
    for path in sorted(Path(args.layers).glob("*.lrsd")):
        match = re.search(r"(\d+)", path.stem)
        idx = int(match.group(1)) if match else len(items)
        items[idx] = load_layer(path)
    if args.catalog:
        for entry in compressor.load_catalog(args.catalog):
            items.setdefault(entry.index, entry.param_count)
    report = compressor.aggregate_report(sorted(items.items()), args.m)
    out = args.output
    _emit(report.to_csv() if out and out.endswith(".csv") else report.to_json(), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrsconv", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def decomp_opts(sp, eps=True):
        if eps:
            sp.add_argument("--eps", type=float, default=0.1, help="relative residual budget")
        sp.add_argument("--card", type=float, default=0.01, help="sparse fraction")
        sp.add_argument("--max-rank", type=int, default=256)
        sp.add_argument("--iters", type=int, default=100, help="max alternating iterations")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("decompose", help="decompose one weight tensor")
    sp.add_argument("weights")
    decomp_opts(sp)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("verify", help="check a decomposition against its weights")
    sp.add_argument("weights")
    sp.add_argument("layer")
    sp.add_argument("--size", type=int, default=16, help="spatial size of the random test input")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="compression over a grid of residual budgets")
    sp.add_argument("weights")
    sp.add_argument("--eps-grid", default="0.1,0.3,0.5")
    decomp_opts(sp, eps=False)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bench", help="time convolution paths over a layer catalog")
    sp.add_argument("--catalog", default="resnet50", help="'resnet50' or a CSV file")
    sp.add_argument("--layers", help="subset of layer indices, e.g. 26-52 or 2,44")
    sp.add_argument("--paths", default="dense,cp,sparse")
    sp.add_argument("--scale", default="1", help="spatial input scales, e.g. 1,2,3")
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--rank", type=int, help="CP rank (default: 5x compression per layer)")
    sp.add_argument("--density", type=float, help="sparse density (default 0.01)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="model-level compression from decomposed layers")
    sp.add_argument("--layers", required=True, help="directory of .lrsd files named by layer index")
    sp.add_argument("--m", type=int, default=compressor.RESNET50_EXTRA_PARAMS,
                    help="parameters outside convolution kernels")
    sp.add_argument("--catalog", help="count catalog layers without a file as uncompressed")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (FormatError, ValueError, OSError, MemoryError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
