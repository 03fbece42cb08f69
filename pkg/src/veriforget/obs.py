"""Group-OBS compensation: closed-form solve of the equality-constrained QP

    min 0.5 dw' C dw   s.t.  dw_M + theta_M = 0

with block-diagonal damped curvature C.  The solve decouples per block
through the k_b x k_b Schur complement of the masked columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .curvature import BlockFisher, _cg
from .masking import MaskArtifact
from .numkit import ParamVector, StructuralError

DIRECT_BLOCK_LIMIT = 512
FEASIBILITY_TOL = 1e-9


class NumericError(ArithmeticError):
    pass


class FeasibilityError(ValueError):
    pass


@dataclass(frozen=True)
class CompensationResult:
    delta_w: ParamVector  # includes the -theta_M components on M
    multipliers: np.ndarray  # aligned to sorted mask support
    method: str  # "schur" or "cg"
    kkt_residual_inf: float

    def __post_init__(self):
        lam = np.ascontiguousarray(self.multipliers, dtype=np.float64)
        lam.setflags(write=False)
        object.__setattr__(self, "multipliers", lam)
        if self.method not in ("schur", "cg"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class UnlearnOutput:
    theta_u: ParamVector
    mask: MaskArtifact
    compensation: CompensationResult


def group_obs_solve(
    c_p: BlockFisher,
    theta_p: ParamVector,
    mask: MaskArtifact,
    method: str = "auto",
    cg_tol: float = 1e-8,
    cg_max_iter: int = 5000,
) -> CompensationResult:
    """Closed-form KKT solution of the Group-OBS program, block by block."""
    if mask.model_dim != theta_p.dim:
        raise StructuralError("mask dimension does not match parameters")
    if c_p.layout.total_dim != theta_p.dim:
        raise StructuralError("curvature dimension does not match parameters")
    theta = theta_p.values
    masked = mask.indicator()
    delta = np.zeros(theta_p.dim)
    multipliers = np.empty(mask.budget)
    resid = 0.0
    used_cg = False
    for arr, (sl, label) in zip(c_p.fisher.blocks, c_p.layout.slices()):
        mloc = np.flatnonzero(masked[sl])
        if mloc.size == 0:
            continue
        d_b = arr.shape[0]
        damped = arr + c_p.lam * np.eye(d_b)
        rhs = np.zeros((d_b, mloc.size))
        rhs[mloc, np.arange(mloc.size)] = 1.0
        use_direct = method == "schur" or (
            method == "auto" and d_b <= DIRECT_BLOCK_LIMIT
        )
        if use_direct:
            try:
                c = cho_factor(damped, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericError(
                    f"block {label!r} is not SPD: {exc}"
                ) from exc
            x = cho_solve(c, rhs)  # K E_M per block
        else:
            used_cg = True
            x = np.empty_like(rhs)
            for j in range(mloc.size):
                x[:, j], _ = _cg(
                    lambda v: damped @ v, rhs[:, j], cg_tol, cg_max_iter
                )
        schur = x[mloc, :]  # E' K E, SPD for SPD C
        schur = 0.5 * (schur + schur.T)
        w_m = theta[sl][mloc]
        try:
            sc = cho_factor(schur, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"singular Schur complement in block {label!r}: {exc}"
            ) from exc
        lam_b = cho_solve(sc, w_m)
        dw_b = -x @ lam_b
        delta[sl] = dw_b
        # multipliers aligned to global sorted support: blocks are in
        # layout order, so per-block masked coords are already ordered
        global_idx = sl.start + mloc
        positions = np.searchsorted(mask.support, global_idx)
        multipliers[positions] = lam_b
        r = damped @ dw_b
        r[mloc] += lam_b
        resid = max(resid, float(np.abs(r).max()) if r.size else 0.0)
    feas = delta[mask.support] + theta[mask.support]
    if feas.size and np.abs(feas).max() > FEASIBILITY_TOL:
        raise NumericError(
            f"feasibility residual {np.abs(feas).max():.3e} exceeds "
            f"{FEASIBILITY_TOL}"
        )
    return CompensationResult(
        delta_w=theta_p.with_values(delta),
        multipliers=multipliers,
        method="cg" if used_cg else "schur",
        kkt_residual_inf=resid,
    )


def apply_unlearn(
    theta_p: ParamVector,
    comp: CompensationResult,
    mask: MaskArtifact,
) -> UnlearnOutput:
    """theta_u = theta_p + delta_w, with the masked coordinates set to 0.

    Floating residue up to 1e-9 on M is clamped to an exact zero; a
    larger residue means the compensation is infeasible for this mask.
    """
    if comp.delta_w.dim != theta_p.dim or mask.model_dim != theta_p.dim:
        raise StructuralError("dimension mismatch in apply_unlearn")
    out = theta_p.values + comp.delta_w.values
    residue = out[mask.support]
    if residue.size and np.abs(residue).max() > FEASIBILITY_TOL:
        idx = mask.support[int(np.argmax(np.abs(residue)))]
        raise FeasibilityError(
            f"|theta_p + delta_w| = {np.abs(residue).max():.3e} at masked "
            f"coordinate {idx}; compensation infeasible for this mask"
        )
    out[mask.support] = 0.0
    return UnlearnOutput(
        theta_u=theta_p.with_values(out), mask=mask, compensation=comp
    )


def dense_kkt_solve(
    c_dense: np.ndarray, theta: np.ndarray, support: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Oracle: solve the full (d+k) x (d+k) KKT system densely."""
    d = theta.size
    k = support.size
    e = np.zeros((d, k))
    e[support, np.arange(k)] = 1.0
    kkt = np.zeros((d + k, d + k))
    kkt[:d, :d] = c_dense
    kkt[:d, d:] = e
    kkt[d:, :d] = e.T
    rhs = np.zeros(d + k)
    rhs[d:] = -theta[support]
    sol = np.linalg.solve(kkt, rhs)
    return sol[:d], sol[d:]
