import numpy as np
import pytest

from lrsconv.decomp import sparse_count
from lrsconv.tensor import CpFactors, reconstruct_cp

ACCEPTANCE_KEY = pytest.StashKey[list]()


def planted_cp(dims, rank, rng):
    factors = CpFactors(*(rng.standard_normal((n, rank)) for n in dims))
    return factors, reconstruct_cp(factors)


def planted_lrs(dims, rank, rng, cardinality=0.01, spike_scale=10.0):
    """Rank-``rank`` CP tensor plus ``round(cardinality * numel)`` spikes of ``spike_scale`` x its RMS."""
    _, low = planted_cp(dims, rank, rng)
    low = low.astype(np.float64)
    n = sparse_count(low.size, cardinality)
    pos = np.sort(rng.choice(low.size, n, replace=False))
    w = low.copy()
    w.ravel()[pos] += spike_scale * np.sqrt(np.mean(low**2)) * rng.choice([-1.0, 1.0], n)
    return w.astype(np.float32), pos


def rel_err(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
