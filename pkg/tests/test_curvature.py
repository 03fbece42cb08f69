import numpy as np
import pytest

from veriforget.curvature import (
    BlockFisher,
    ConvergenceError,
    cg_solve,
    curvature_layout,
    diag_curvature,
    empirical_fisher_blockwise,
)
from veriforget.model import Dataset, init_mlp, per_example_grads
from veriforget.numkit import (
    BlockDiagMatrix,
    BlockLayout,
    ParamVector,
    StructuralError,
    blockdiag_solve,
)

from conftest import random_fisher, random_spd_blockdiag, small_dataset


def full_layout(model):
    return curvature_layout(model.params.layout, cap=10_000)


# -- fisher estimation ---------------------------------------------------------


def test_single_example_outer_product():
    rng = np.random.default_rng(0)
    model = init_mlp([2, 2], 0).with_params(rng.normal(size=6) * 0.3)
    data = small_dataset(rng, n=1, dim=2, classes=2)
    layout = full_layout(model)
    fisher = empirical_fisher_blockwise(model, data, layout, lam=1e-3)
    g = per_example_grads(model, data)[0]
    for blk, (sl, _) in zip(fisher.fisher.blocks, layout.slices()):
        assert np.abs(blk - np.outer(g[sl], g[sl])).max() <= 1e-14


def test_two_example_average():
    rng = np.random.default_rng(1)
    model = init_mlp([2, 2], 1).with_params(rng.normal(size=6) * 0.3)
    data = small_dataset(rng, n=2, dim=2, classes=2)
    layout = full_layout(model)
    fisher = empirical_fisher_blockwise(model, data, layout, lam=1e-3)
    g = per_example_grads(model, data)
    want = (np.outer(g[0], g[0]) + np.outer(g[1], g[1])) / 2.0
    for blk, (sl, _) in zip(fisher.fisher.blocks, layout.slices()):
        assert np.abs(blk - want[sl, sl]).max() <= 1e-13


def test_blocks_psd_and_damped_spd():
    rng = np.random.default_rng(2)
    model = init_mlp([4, 6, 3], 2)
    data = small_dataset(rng, n=40)
    layout = curvature_layout(model.params.layout, cap=16)
    fisher = empirical_fisher_blockwise(model, data, layout, lam=1e-3)
    for raw, damped in zip(fisher.fisher.blocks, fisher.damped_blocks()):
        assert np.linalg.eigvalsh(raw).min() >= -1e-10
        assert np.linalg.eigvalsh(damped).min() >= 1e-3 - 1e-10


def test_fisher_deterministic_and_subsample_order_invariant():
    rng = np.random.default_rng(3)
    model = init_mlp([4, 6, 3], 3)
    data = small_dataset(rng, n=50)
    layout = full_layout(model)
    a = empirical_fisher_blockwise(model, data, layout, lam=1e-3,
                                   max_samples=20, seed=9)
    b = empirical_fisher_blockwise(model, data, layout, lam=1e-3,
                                   max_samples=20, seed=9)
    assert all(np.array_equal(x, y)
               for x, y in zip(a.fisher.blocks, b.fisher.blocks))
    assert a.source_digest == b.source_digest


def test_fisher_empty_dataset_rejected():
    model = init_mlp([2, 2], 0)
    with pytest.raises(StructuralError):
        Dataset(features=np.zeros((0, 2)), labels=np.zeros(0, dtype=np.int64),
                name="empty")


def test_curvature_layout_splits_large_blocks():
    layout = BlockLayout.from_sizes([(600, "mlp.0.w"), (10, "mlp.0.b")])
    split = curvature_layout(layout, cap=256)
    sizes = [s for _, s, _ in split.blocks]
    assert max(sizes) <= 256
    assert sum(sizes) == 610


# -- diagonal proxy --------------------------------------------------------------


def test_diag_single_example():
    rng = np.random.default_rng(4)
    model = init_mlp([3, 4, 2], 4)
    data = small_dataset(rng, n=1, dim=3, classes=2)
    g = per_example_grads(model, data)[0]
    c = diag_curvature(model, data)
    assert np.abs(c.diag - g**2).max() <= 1e-14


def test_diag_matches_blockwise_diagonal():
    rng = np.random.default_rng(5)
    model = init_mlp([3, 4, 2], 5)
    data = small_dataset(rng, n=25, dim=3, classes=2)
    layout = full_layout(model)
    fisher = empirical_fisher_blockwise(model, data, layout, lam=1e-3,
                                        max_samples=1024, seed=0)
    c = diag_curvature(model, data, seed=0)
    assert np.abs(np.diag(fisher.fisher.dense()) - c.diag).max() <= 1e-12


def test_diag_zero_for_zero_gradient_model():
    # one-class problem: loss identically zero, so gradients vanish
    rng = np.random.default_rng(6)
    model = init_mlp([3, 4, 1], 6)
    data = small_dataset(rng, n=5, dim=3, classes=1)
    c = diag_curvature(model, data)
    assert np.abs(c.diag).max() <= 1e-14


# -- conjugate gradients -----------------------------------------------------------


def test_cg_scaled_identity():
    layout = BlockLayout.from_sizes([(6, "b")])
    zero = BlockDiagMatrix(blocks=(np.zeros((6, 6)),), layout=layout)
    fisher = BlockFisher(fisher=zero, lam=1.0, sample_count=1,
                         source_digest="t")
    y = ParamVector(values=np.arange(6.0), layout=layout)
    x, iters = cg_solve(fisher, y)
    assert np.abs(x.values - y.values).max() <= 1e-12


def test_cg_zero_rhs():
    rng = np.random.default_rng(7)
    layout = BlockLayout.from_sizes([(8, "b")])
    fisher = random_fisher(rng, layout)
    y = ParamVector(values=np.zeros(8), layout=layout)
    x, iters = cg_solve(fisher, y)
    assert (x.values == 0).all()
    assert iters == [0]


def test_cg_matches_direct():
    rng = np.random.default_rng(8)
    layout = BlockLayout.from_sizes([(32, "b")])
    fisher = random_fisher(rng, layout)
    y = ParamVector(values=rng.normal(size=32), layout=layout)
    x_cg, _ = cg_solve(fisher, y, tol=1e-12)
    x_dir = blockdiag_solve(fisher.damped(), y)
    assert np.abs(x_cg.values - x_dir.values).max() <= 1e-6


def test_cg_matches_direct_large_block():
    rng = np.random.default_rng(9)
    layout = BlockLayout.from_sizes([(512, "b")])
    a = random_spd_blockdiag(rng, layout, damping=0.5)
    fisher = BlockFisher(fisher=a, lam=1e-3, sample_count=1, source_digest="t")
    y = ParamVector(values=rng.normal(size=512), layout=layout)
    x_cg, _ = cg_solve(fisher, y, tol=1e-12, max_iter=5000)
    x_dir = blockdiag_solve(fisher.damped(), y)
    denom = np.abs(x_dir.values).max()
    assert np.abs(x_cg.values - x_dir.values).max() / denom <= 1e-6


def test_cg_nonconvergence_reports_residual():
    rng = np.random.default_rng(10)
    layout = BlockLayout.from_sizes([(32, "b")])
    fisher = random_fisher(rng, layout)
    y = ParamVector(values=rng.normal(size=32), layout=layout)
    with pytest.raises(ConvergenceError) as exc:
        cg_solve(fisher, y, tol=1e-14, max_iter=1)
    assert exc.value.residual > 0
