"""Low-rank + sparse compression of convolution kernels and fast execution of the result."""

from .compressor import (
    CompressionReport,
    LayerCatalogEntry,
    aggregate_report,
    compress_layer,
    compress_model,
    load_catalog,
    order_layers,
    sweep_epsilon,
)
from .container import load_layer, load_tensor, save_layer, save_tensor
from .conv import (
    ConvSpec,
    SparseKernel,
    conv_cp,
    conv_decomposed,
    conv_dense,
    conv_sparse,
    pack_sparse_kernel,
)
from .decomp import (
    DecompConfig,
    DecomposedLayer,
    SparseTensor4,
    cp_als_step,
    decompose_lrs,
    equilibrate_factors,
    project_sparse,
    search_min_rank,
)
from .tensor import CpFactors, fold, frobenius_norm, khatri_rao, reconstruct_cp, unfold

__version__ = "0.1.0"
