import numpy as np
import pytest

from veriforget.curvature import BlockFisher
from veriforget.masking import make_mask
from veriforget.numkit import (
    BlockDiagMatrix,
    BlockLayout,
    ParamVector,
    blockdiag_matvec,
)
from veriforget.obs import (
    FeasibilityError,
    apply_unlearn,
    dense_kkt_solve,
    group_obs_solve,
)

from conftest import random_fisher, random_instance, random_mask


def identity_fisher(layout, lam=0.0):
    # F = I - lam*I so that the damped matrix F + lam*I is exactly I
    blocks = tuple(
        (1.0 - lam) * np.eye(s) for _, s, _ in layout.blocks
    )
    return BlockFisher(
        fisher=BlockDiagMatrix(blocks=blocks, layout=layout),
        lam=lam if lam > 0 else 1e-12,
        sample_count=1,
        source_digest="t",
    )


def kkt_oracle(fisher, theta, mask):
    """Independent dense solve of [[C, E], [E^T, 0]] [dw; lam] = [0; -theta_M]."""
    c = fisher.damped().dense()
    d = theta.dim
    k = mask.budget
    e = np.zeros((d, k))
    e[mask.support, np.arange(k)] = 1.0
    kkt = np.block([[c, e], [e.T, np.zeros((k, k))]])
    rhs = np.concatenate([np.zeros(d), -theta.values[mask.support]])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:d], sol[d:]


# -- hand and trivial cases ------------------------------------------------------


def test_identity_curvature_collapses():
    layout = BlockLayout.from_sizes([(5, "b")])
    fisher = identity_fisher(layout, lam=1e-12)
    theta = ParamVector(values=np.array([1.0, -2.0, 3.0, 0.5, 4.0]),
                        layout=layout)
    mask = make_mask(5, 2, np.arange(5, dtype=np.int64),
                     np.array([1, 3], dtype=np.int64))
    comp = group_obs_solve(fisher, theta, mask)
    want = np.zeros(5)
    want[[1, 3]] = -theta.values[[1, 3]]
    assert np.abs(comp.delta_w.values - want).max() <= 1e-9
    assert np.abs(comp.multipliers - theta.values[[1, 3]]).max() <= 1e-9


def test_empty_mask():
    layout = BlockLayout.from_sizes([(4, "b")])
    rng = np.random.default_rng(0)
    fisher = random_fisher(rng, layout)
    theta = ParamVector(values=rng.normal(size=4), layout=layout)
    mask = make_mask(4, 0, np.arange(4, dtype=np.int64),
                     np.zeros(0, dtype=np.int64))
    comp = group_obs_solve(fisher, theta, mask)
    assert (comp.delta_w.values == 0).all()
    assert comp.multipliers.size == 0
    out = apply_unlearn(theta, comp, mask)
    assert np.array_equal(out.theta_u.values, theta.values)


def test_hand_2x2_kkt():
    layout = BlockLayout.from_sizes([(2, "b")])
    c = np.array([[2.0, 1.0], [1.0, 2.0]])
    fisher = BlockFisher(
        fisher=BlockDiagMatrix(blocks=(c - 1e-9 * np.eye(2),), layout=layout),
        lam=1e-9, sample_count=1, source_digest="t",
    )
    theta = ParamVector(values=np.array([1.0, 1.0]), layout=layout)
    mask = make_mask(2, 1, np.arange(2, dtype=np.int64),
                     np.array([0], dtype=np.int64))
    comp = group_obs_solve(fisher, theta, mask)
    assert np.abs(comp.delta_w.values - np.array([-1.0, 0.5])).max() <= 1e-8
    assert abs(comp.multipliers[0] - 1.5) <= 1e-8
    # stationarity: C dw + E lam = 0
    resid = c @ comp.delta_w.values
    resid[0] += comp.multipliers[0]
    assert np.abs(resid).max() <= 1e-8
    out = apply_unlearn(theta, comp, mask)
    assert np.abs(out.theta_u.values - np.array([0.0, 1.5])).max() <= 1e-8
    assert out.theta_u.values[0] == 0.0


# -- oracle equivalence ------------------------------------------------------------


def test_schur_matches_dense_oracle_random():
    rng = np.random.default_rng(1)
    for trial in range(25):
        fisher, theta, mask = random_instance(rng)
        comp = group_obs_solve(fisher, theta, mask, method="schur")
        dw_o, lam_o = kkt_oracle(fisher, theta, mask)
        scale = max(np.abs(dw_o).max(), 1e-12)
        assert np.abs(comp.delta_w.values - dw_o).max() / scale <= 1e-8
        lscale = max(np.abs(lam_o).max(), 1e-12)
        assert np.abs(comp.multipliers - lam_o).max() / lscale <= 1e-8


def test_cg_matches_schur():
    rng = np.random.default_rng(2)
    for trial in range(10):
        fisher, theta, mask = random_instance(rng)
        a = group_obs_solve(fisher, theta, mask, method="schur")
        b = group_obs_solve(fisher, theta, mask, method="cg", cg_tol=1e-12)
        scale = max(np.abs(a.delta_w.values).max(), 1e-12)
        assert np.abs(a.delta_w.values - b.delta_w.values).max() / scale <= 1e-6


def test_package_dense_oracle_agrees_with_local():
    rng = np.random.default_rng(3)
    fisher, theta, mask = random_instance(rng)
    dw_a, lam_a = dense_kkt_solve(
        fisher.damped().dense(), theta.values, mask.support
    )
    dw_b, lam_b = kkt_oracle(fisher, theta, mask)
    assert np.abs(dw_a - dw_b).max() <= 1e-10
    assert np.abs(lam_a - lam_b).max() <= 1e-10


# -- optimality and feasibility -------------------------------------------------------


def test_optimality_vs_random_feasible_alternatives():
    rng = np.random.default_rng(4)
    for trial in range(5):
        fisher, theta, mask = random_instance(rng)
        comp = group_obs_solve(fisher, theta, mask)
        c = fisher.damped().dense()
        dw = comp.delta_w.values
        obj_star = 0.5 * dw @ c @ dw
        for _ in range(200):
            alt = rng.normal(size=theta.dim)
            alt[mask.support] = -theta.values[mask.support]
            assert obj_star <= 0.5 * alt @ c @ alt + 1e-12


def test_feasibility_bit_exact():
    rng = np.random.default_rng(5)
    for trial in range(20):
        fisher, theta, mask = random_instance(rng)
        comp = group_obs_solve(fisher, theta, mask)
        out = apply_unlearn(theta, comp, mask)
        assert (out.theta_u.values[mask.support] == 0.0).all()


def test_compensation_never_worse_than_mask_only():
    rng = np.random.default_rng(6)
    for trial in range(10):
        fisher, theta, mask = random_instance(rng)
        comp = group_obs_solve(fisher, theta, mask)
        c = fisher.damped().dense()
        dw = comp.delta_w.values
        dw_m = np.zeros(theta.dim)
        dw_m[mask.support] = -theta.values[mask.support]
        assert 0.5 * dw @ c @ dw <= 0.5 * dw_m @ c @ dw_m + 1e-12


def test_apply_unlearn_rejects_large_residue():
    layout = BlockLayout.from_sizes([(3, "b")])
    rng = np.random.default_rng(7)
    fisher = random_fisher(rng, layout)
    theta = ParamVector(values=np.array([1.0, 2.0, 3.0]), layout=layout)
    mask = make_mask(3, 1, np.arange(3, dtype=np.int64),
                     np.array([0], dtype=np.int64))
    comp = group_obs_solve(fisher, theta, mask)
    bad = comp.delta_w.values.copy()
    bad[0] += 1e-6  # breaks delta_w[0] = -theta[0]
    from veriforget.obs import CompensationResult
    tampered = CompensationResult(
        delta_w=theta.with_values(bad),
        multipliers=comp.multipliers,
        method=comp.method,
        kkt_residual_inf=comp.kkt_residual_inf,
    )
    with pytest.raises(FeasibilityError):
        apply_unlearn(theta, tampered, mask)


def test_stationarity_residual_reported_small():
    rng = np.random.default_rng(8)
    fisher, theta, mask = random_instance(rng)
    comp = group_obs_solve(fisher, theta, mask)
    assert comp.kkt_residual_inf <= 1e-9
