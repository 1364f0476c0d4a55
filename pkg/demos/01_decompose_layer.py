"""
Splitting a weight tensor into low-rank and sparse parts
========================================================

A weight tensor W of shape (in, out, kx, ky) is approximated by a CP term of
rank r plus a sparse tensor holding 1% of the entries. Asking for a residual
budget instead of a rank lets the search pick the smallest rank that fits.
"""
import numpy as np

from lrsconv import DecompConfig, compress_layer, decompose_lrs, reconstruct_cp

rng = np.random.default_rng(0)

# A synthetic layer: rank 3 plus a few large outliers.
dims = (64, 64, 3, 3)
low = [rng.standard_normal((n, 3)) for n in dims]
w = np.einsum("ir,jr,kr,tr->ijkt", *low)
spikes = rng.choice(w.size, 369, replace=False)
w.ravel()[spikes] += 10 * w.std() * rng.choice([-1, 1], spikes.size)
w = w.astype(np.float32)

# Fixed rank: fit L + S and read back the relative residual.
factors, sparse, eps = decompose_lrs(w, 3, DecompConfig(cardinality=0.01))
print(f"rank 3: residual {eps:.2e}, {sparse.nnz} sparse entries")
print("outliers found:", np.isin(spikes, sparse.indices).mean())

# Residual budget: the rank is searched, then factor columns are balanced.
layer = compress_layer(w, DecompConfig(epsilon=1e-2))
p_w, p_l, p_s = layer.param_counts
print(f"searched rank {layer.rank}, residual {layer.achieved_epsilon:.2e}")
print(f"parameters {p_w} -> {p_l} (low rank) + {p_s} (sparse), ratio {layer.compression_ratio:.2f}")

# The stored approximation is just the sum of both parts.
approx = reconstruct_cp(layer.low_rank) + layer.sparse.to_dense()
print("check:", np.linalg.norm(w - approx) / np.linalg.norm(w))
