"""
Three ways to run the same convolution
======================================

Dense direct convolution is the reference. A CP kernel runs as four cheap
stages (1x1, depthwise along x, depthwise along y, 1x1) and a sparse kernel
scatters each nonzero weight into a shifted output plane. Both must agree
with dense convolution over the kernel they represent.
"""
import numpy as np

from lrsconv import (ConvSpec, CpFactors, conv_cp, conv_decomposed, conv_dense, conv_sparse,
                     pack_sparse_kernel, project_sparse, reconstruct_cp)
from lrsconv.decomp import DecomposedLayer

rng = np.random.default_rng(1)
spec = ConvSpec(in_channels=32, out_channels=48, kernel=(3, 3))
x = rng.standard_normal((32, 28, 28)).astype(np.float32)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# CP path against the dense reconstruction of its factors
f = CpFactors(*(rng.standard_normal((n, 8)) for n in spec.weight_dims))
print("cp vs dense:", rel(conv_cp(x, f, spec), conv_dense(x, reconstruct_cp(f), spec)))

# Sparse path: keep the largest 1% of a random kernel and pack it per input channel
s = project_sparse(rng.standard_normal(spec.weight_dims), 0.01)
kernel = pack_sparse_kernel(s)
print(f"{kernel.nnz} nonzeros, index dtype {kernel.packed.dtype}")
print("sparse vs dense:", rel(conv_sparse(x, kernel, spec), conv_dense(x, s.to_dense(), spec)))

# A decomposed layer runs both and adds the outputs
layer = DecomposedLayer(f, s, 0.0)
y = conv_decomposed(x, layer, spec)
print("decomposed vs dense:", rel(y, conv_dense(x, layer.dense_weight(), spec)))
