"""
Model-level compression
=======================

Compressing a handful of layers and counting what the whole model saves.
Layers without a decomposition stay dense; ``m`` covers parameters outside
the convolution kernels (biases, batch norm, the classifier).
"""
import numpy as np

from lrsconv import DecompConfig, aggregate_report, load_catalog, order_layers, sweep_epsilon
from lrsconv.compressor import RESNET50_EXTRA_PARAMS, compress_model

catalog = load_catalog("resnet50")
print("largest layers first:", order_layers(catalog)[:6])

# Random stand-ins for three small layers; real weights would be loaded from LRST files.
rng = np.random.default_rng(2)
weights = {e.index: rng.standard_normal(e.weight_dims).astype(np.float32) * 0.4
           for e in catalog if e.index in (1, 4, 5)}
weights = {i: w + np.einsum("i,j,k,t->ijkt", *(rng.standard_normal(n) for n in w.shape)).astype(np.float32)
           for i, w in weights.items()}

layers = compress_model(weights, DecompConfig(epsilon=0.3, max_rank=64))
items = [(e.index, layers.get(e.index, e.param_count)) for e in catalog]
report = aggregate_report(items, m=RESNET50_EXTRA_PARAMS)
print(f"partial {float(report.partial):.2f}x, total {float(report.total):.4f}x")

# Looser budgets never compress less.
for eps, ratio, layer in sweep_epsilon(weights[1], [0.1, 0.3, 0.5], DecompConfig(max_rank=64)):
    print(f"eps {eps}: rank {layer.rank}, ratio {ratio:.2f}")
