from pathlib import Path

import numpy as np
import pytest

from spdnn.model import generate_synthetic, load_model, load_partition
from spdnn.sparse import SparseMatrix

DATA = Path(__file__).parent / "data"

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_sparse(n_rows, n_cols, density, seed, integer=False):
    """Seeded random CSR matrix; every row keeps at least one entry."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_rows, n_cols)) < density
    mask[np.arange(n_rows), rng.integers(0, n_cols, n_rows)] = True
    if integer:
        vals = rng.integers(-8, 9, (n_rows, n_cols)).astype(float)
        vals[vals == 0] = 1.0
    else:
        vals = rng.uniform(-1, 1, (n_rows, n_cols))
    return SparseMatrix.from_dense(np.where(mask, vals, 0.0))


@pytest.fixture
def toy4_model():
    return load_model(DATA / "toy4" / "model.txt")


@pytest.fixture
def toy4_partition():
    return load_partition(DATA / "toy4" / "partition.txt")


@pytest.fixture(scope="session")
def small_model():
    return generate_synthetic(4, 64, 8, seed=3)


def exhaustive_bisection(H, cap):
    """Minimum cut over every 2-way split of the free vertices within ``cap``.

    Returns ``None`` when no split is feasible.  Enumerates all 2**n_free
    assignments at once, so keep n_free small.
    """
    n = H.n_free
    A = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    load1 = A @ H.vertex_weights
    load0 = H.total_weight() - load1
    feasible = np.maximum(load0, load1) <= cap
    if not feasible.any():
        return None
    cut = np.zeros(2 ** n, dtype=np.int64)
    for j in range(H.n_nets):
        pins = H.pins(j)
        ones = A[:, pins].sum(axis=1)
        has = [ones < pins.size, ones > 0]
        if H.fixed_part[j] >= 0:
            has[H.fixed_part[j]] = np.ones_like(has[0])
        lam = has[0].astype(np.int64) + has[1]
        cut += H.net_cost * np.maximum(lam - 1, 0)
    return int(cut[feasible].min())


def random_phase_hypergraph(seed, n=16, density=0.2):
    """Phase hypergraph of a random ``n x n`` layer with random fixed parts in {0, 1}."""
    from spdnn.hypergraph import build_phase_hypergraph

    W = random_sparse(n, n, density, seed)
    prev = np.random.default_rng([seed, 1]).integers(0, 2, n)
    return build_phase_hypergraph(W, prev)
