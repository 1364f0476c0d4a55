import struct

import numpy as np
import pytest

from lrsconv.container import (
    FormatError,
    layer_from_bytes,
    layer_to_bytes,
    load_layer,
    load_tensor,
    save_layer,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
)
from lrsconv.decomp import DecomposedLayer, project_sparse
from lrsconv.tensor import CpFactors


def make_layer(rng, dims=(6, 5, 3, 3), rank=3, density=0.05):
    f = CpFactors(*(rng.standard_normal((n, rank)) for n in dims))
    return DecomposedLayer(f, project_sparse(rng.standard_normal(dims), density), float(rng.random()))


def test_tensor_header_layout():
    buf = tensor_to_bytes(np.arange(6, dtype=np.float32).reshape(1, 2, 3, 1))
    assert buf[:4] == b"LRST"
    assert struct.unpack("<HBB4I", buf[4:24]) == (1, 0, 4, 1, 2, 3, 1)
    assert np.frombuffer(buf[24:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_tensor_roundtrip_file(tmp_path, rng):
    t = rng.standard_normal((3, 4, 3, 3)).astype(np.float32)
    save_tensor(tmp_path / "w.lrst", t)
    back = load_tensor(tmp_path / "w.lrst")
    assert back.dtype == np.float32 and np.array_equal(back, t)


def test_tensor_other_rank(rng):
    x = rng.standard_normal((3, 5, 5)).astype(np.float32)
    assert np.array_equal(tensor_from_bytes(tensor_to_bytes(x)), x)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<H", 9) + b[6:],
    lambda b: b[:6] + b"\x01" + b[7:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
])
def test_tensor_rejects_bad_bytes(mutate):
    buf = tensor_to_bytes(np.ones((2, 2, 1, 1), np.float32))
    with pytest.raises(FormatError):
        tensor_from_bytes(mutate(buf))


def test_layer_roundtrip_bit_exact(tmp_path, rng):
    layer = make_layer(rng)
    save_layer(tmp_path / "l.lrsd", layer)
    back, kernel = load_layer(tmp_path / "l.lrsd", with_kernel=True)
    assert layer_to_bytes(back) == layer_to_bytes(layer)
    assert back.achieved_epsilon == layer.achieved_epsilon
    for a, b in zip(back.low_rank.matrices, layer.low_rank.matrices):
        assert np.array_equal(a.view(np.uint32), b.view(np.uint32))
    assert np.array_equal(kernel.to_dense(), layer.sparse.to_dense())


def test_layer_wide_index(rng):
    layer = make_layer(rng, dims=(1, 8192, 3, 3), rank=1, density=0.001)
    back, kernel = layer_from_bytes(layer_to_bytes(layer), with_kernel=True)
    assert kernel.packed.dtype == np.uint32
    assert np.array_equal(back.sparse.indices, layer.sparse.indices)


def test_layer_rejects_inconsistent_kernel_section(rng):
    buf = bytearray(layer_to_bytes(make_layer(rng)))
    buf[-1] ^= 0x01  # corrupt the last packed index
    with pytest.raises(FormatError):
        layer_from_bytes(bytes(buf))


def test_layer_rejects_truncation(rng):
    with pytest.raises(FormatError):
        layer_from_bytes(layer_to_bytes(make_layer(rng))[:-3])
