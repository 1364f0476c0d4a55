"""
Timing the convolution paths on ResNet-50 shapes
================================================

Every layer shape comes from the bundled catalog; weights and inputs are
random. Speedups are relative to this package's own dense direct loop, not
to an optimized framework convolution.
"""
from lrsconv import load_catalog
from lrsconv.bench import results_to_csv, run_suite

catalog = load_catalog("resnet50")
late = [e for e in catalog if e.index >= 40]

suite = run_suite(late, paths=("dense", "cp", "sparse"), scales=(1,), repeats=5)
print(suite["machine"])
for r in suite["results"]:
    print(f"layer {r.layer:2d} {r.path:6s} {r.median_s * 1e3:8.3f} ms  speedup {r.speedup:6.1f}x")

# The same rows as CSV, ready for plotting elsewhere
with open("bench_late_layers.csv", "w") as fh:
    fh.write(results_to_csv(suite["results"]))
