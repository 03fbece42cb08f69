"""Shared builders for randomized test instances."""

import numpy as np
import pytest

from veriforget.curvature import BlockFisher
from veriforget.masking import make_mask
from veriforget.model import Dataset, MlpModel, init_mlp, make_synthetic_task
from veriforget.numkit import BlockDiagMatrix, BlockLayout, ParamVector


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdict lines past output capture."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    for line in RESULTS:
        terminalreporter.write_line(line)


def random_layout(rng, n_blocks=None, max_block=24):
    n_blocks = n_blocks or int(rng.integers(1, 5))
    sizes = [int(rng.integers(2, max_block + 1)) for _ in range(n_blocks)]
    return BlockLayout.from_sizes((s, f"blk{i}") for i, s in enumerate(sizes))


def random_spd_block(rng, size, damping=0.1):
    g = rng.normal(size=(size + 2, size))
    a = g.T @ g / (size + 2) + damping * np.eye(size)
    return (a + a.T) / 2.0


def random_spd_blockdiag(rng, layout, damping=0.1):
    blocks = tuple(
        random_spd_block(rng, size, damping) for _, size, _ in layout.blocks
    )
    return BlockDiagMatrix(blocks=blocks, layout=layout)


def random_fisher(rng, layout, lam=1e-3, damping=0.1):
    """SPD F so that F + lam*I has well-understood conditioning."""
    mat = random_spd_blockdiag(rng, layout, damping)
    return BlockFisher(
        fisher=mat, lam=lam, sample_count=17, source_digest="test"
    )


def random_mask(rng, layout, k):
    d = layout.total_dim
    eligible = np.arange(d, dtype=np.int64)
    support = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
    return make_mask(d, k, eligible, support)


def random_instance(rng, max_block=24, k_cap=None):
    """(fisher, theta_p, mask) triple for OBS / certificate tests."""
    layout = random_layout(rng, max_block=max_block)
    d = layout.total_dim
    fisher = random_fisher(rng, layout)
    theta = ParamVector(values=rng.normal(size=d), layout=layout)
    k = int(rng.integers(1, max(2, (k_cap or d // 4) + 1)))
    mask = random_mask(rng, layout, min(k, d - 1))
    return fisher, theta, mask


def small_dataset(rng, n=12, dim=4, classes=3, name="toy"):
    x = rng.normal(size=(n, dim))
    y = rng.integers(0, classes, size=n).astype(np.int64)
    return Dataset(features=x, labels=y, name=name)


@pytest.fixture(scope="session")
def tiny_task():
    return make_synthetic_task(
        0, n_per_class=40, dim=4, n_classes=3, forget_class=2,
        n_personal_per_class=30,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_task):
    return init_mlp([4, 8, 3], 0)
