"""Plain-arithmetic KKT certificate checks and forgetting-gain bounds.

check_kkt re-evaluates the three linear identities (assembly, mask
feasibility, stationarity) that uniquely characterize the Group-OBS
solution.  forget_gain_report computes the quadratic-model quantities
that bound how much compensation on the unmasked coordinates can offset
the mask-induced forget-loss increase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curvature import BlockFisher, empirical_fisher_blockwise
from .masking import MaskArtifact
from .model import Dataset, MlpModel, batch_grad, mean_loss
from .numkit import ParamVector, StructuralError
from .obs import CompensationResult

DEFAULT_TAU_REAL = 1e-6
MAX_EXACT_HESSIAN_DIM = 2000


class CurvatureNotSPDError(ArithmeticError):
    pass


@dataclass(frozen=True)
class KktCertificate:
    r_assembly: np.ndarray
    r_feasibility: np.ndarray
    r_stationarity: np.ndarray
    inf_norms: tuple[float, float, float]
    tolerance: float
    verdict: bool

    def to_json(self) -> dict:
        return {
            "assembly_inf": self.inf_norms[0],
            "feasibility_inf": self.inf_norms[1],
            "stationarity_inf": self.inf_norms[2],
            "tolerance": self.tolerance,
            "verdict": "pass" if self.verdict else "fail",
        }


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def check_kkt(
    theta_p: ParamVector,
    theta_u: ParamVector,
    comp: CompensationResult,
    c_p: BlockFisher,
    mask: MaskArtifact,
    tau_real: float = DEFAULT_TAU_REAL,
) -> KktCertificate:
    """Evaluate assembly, feasibility, and stationarity residuals."""
    if not (theta_p.dim == theta_u.dim == comp.delta_w.dim == mask.model_dim):
        raise StructuralError("dimension mismatch in check_kkt")
    dw = comp.delta_w.values
    r_asm = theta_u.values - theta_p.values - dw
    r_feas = dw[mask.support] + theta_p.values[mask.support]
    r_stat = np.zeros(theta_p.dim)
    lam_full = np.zeros(theta_p.dim)
    lam_full[mask.support] = comp.multipliers
    for arr, (sl, _) in zip(c_p.fisher.blocks, c_p.layout.slices()):
        damped = arr + c_p.lam * np.eye(arr.shape[0])
        r_stat[sl] = damped @ dw[sl] + lam_full[sl]
    norms = (_inf(r_asm), _inf(r_feas), _inf(r_stat))
    return KktCertificate(
        r_assembly=r_asm,
        r_feasibility=r_feas,
        r_stationarity=r_stat,
        inf_norms=norms,
        tolerance=tau_real,
        verdict=all(n <= tau_real for n in norms),
    )


# ---------------------------------------------------------------------------
# forgetting-gain bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForgetBudget:
    """Quadratic-model forgetting quantities on the forget-set.

    S_mask is the mask-only predicted loss increase; f_obs the
    contribution of the actual compensation; worst_case the most
    negative value any compensation could reach under damping.
    """

    s_mask: float
    b: np.ndarray
    q_min_eig: float
    u: np.ndarray
    v: np.ndarray
    f_obs: float
    f_obs_normform: float
    worst_case: float
    spectral_bound: float
    upper_bound: float
    guarantee_flag: bool
    predicted_delta_lf: float

    def to_json(self) -> dict:
        return {
            "s_mask": self.s_mask,
            "q_min_eig": self.q_min_eig,
            "f_obs": self.f_obs,
            "f_obs_normform": self.f_obs_normform,
            "worst_case": self.worst_case,
            "spectral_bound": self.spectral_bound,
            "upper_bound": self.upper_bound,
            "guarantee_flag": bool(self.guarantee_flag),
            "predicted_delta_lf": self.predicted_delta_lf,
            "u_norm": float(np.linalg.norm(self.u)),
            "v_norm": float(np.linalg.norm(self.v)),
        }


def exact_hessian(model: MlpModel, data: Dataset, h_scale: float = 1e-4) -> np.ndarray:
    """Central finite differences of the analytic gradient, symmetrized."""
    d = model.dim
    if d > MAX_EXACT_HESSIAN_DIM:
        raise ValueError(
            f"exact Hessian limited to d <= {MAX_EXACT_HESSIAN_DIM}, got {d}"
        )
    theta = model.params.values
    cols = np.empty((d, d))
    for i in range(d):
        h = h_scale * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        gp = batch_grad(model.with_params(tp), data).values
        gm = batch_grad(model.with_params(tm), data).values
        cols[:, i] = (gp - gm) / (2.0 * h)
    return 0.5 * (cols + cols.T)


def fisher_hessian_surrogate(model: MlpModel, data: Dataset) -> np.ndarray:
    """Gauss-Newton-style surrogate: dense empirical Fisher on the data."""
    from .numkit import BlockLayout

    layout = BlockLayout.from_sizes([(model.dim, "all")])
    bf = empirical_fisher_blockwise(
        model, data, layout, lam=1e-12, max_samples=len(data)
    )
    return np.array(bf.fisher.blocks[0])


def quadratic_gain(b: np.ndarray, q: np.ndarray, dw_c: np.ndarray) -> float:
    """Direct evaluation of f(dw_c) = b'dw_c + 0.5 dw_c' Q dw_c."""
    return float(b @ dw_c + 0.5 * dw_c @ (q @ dw_c))


def forget_gain_report(
    theta_p: ParamVector,
    mask: MaskArtifact,
    comp: CompensationResult,
    d_f: Dataset,
    template: MlpModel,
    lam_q: float = 1e-3,
    hessian_mode: str = "exact",
) -> ForgetBudget:
    """Compute the mask gain, compensation contribution, and its bounds."""
    model = template.with_params(theta_p.values)
    g = batch_grad(model, d_f).values
    if hessian_mode == "exact":
        h = exact_hessian(model, d_f)
    elif hessian_mode == "fisher":
        h = fisher_hessian_surrogate(model, d_f)
    else:
        raise ValueError(f"unknown hessian_mode {hessian_mode!r}")

    m_idx = mask.support
    c_idx = np.setdiff1d(np.arange(theta_p.dim), m_idx)
    a_m = theta_p.values[m_idx]
    g_m, g_c = g[m_idx], g[c_idx]
    h_mm = h[np.ix_(m_idx, m_idx)]
    h_cm = h[np.ix_(c_idx, m_idx)]
    h_cc = h[np.ix_(c_idx, c_idx)]

    s_mask = float(-g_m @ a_m + 0.5 * a_m @ (h_mm @ a_m))
    b = g_c - h_cm @ a_m
    q = h_cc + lam_q * np.eye(c_idx.size)
    eigvals, eigvecs = np.linalg.eigh(q)
    if eigvals.min() <= 0:
        raise CurvatureNotSPDError(
            f"Q has min eigenvalue {eigvals.min():.3e} <= 0; "
            f"increase the damping lam_q (currently {lam_q})"
        )
    sqrt_q = eigvecs @ (np.sqrt(eigvals)[:, None] * eigvecs.T)
    inv_sqrt_q = eigvecs @ ((1.0 / np.sqrt(eigvals))[:, None] * eigvecs.T)

    dw_c = comp.delta_w.values[c_idx]
    u = inv_sqrt_q @ b
    v = -sqrt_q @ dw_c  # v = Q^{1/2} A a_M with dw_c = -A a_M
    f_direct = quadratic_gain(b, q, dw_c)
    u_n = float(np.linalg.norm(u))
    v_n = float(np.linalg.norm(v))
    f_norm = float(0.5 * np.linalg.norm(v - u) ** 2 - 0.5 * u_n**2)
    worst = float(-0.5 * u_n**2)
    mu_min = float(eigvals.min())
    h_cm_norm = float(np.linalg.norm(h_cm, 2)) if m_idx.size else 0.0
    spectral = float(
        (np.linalg.norm(g_c) + h_cm_norm * np.linalg.norm(a_m)) ** 2 / mu_min
    )
    upper = float(0.5 * v_n**2 + u_n * v_n)
    return ForgetBudget(
        s_mask=s_mask,
        b=b,
        q_min_eig=mu_min,
        u=u,
        v=v,
        f_obs=f_direct,
        f_obs_normform=f_norm,
        worst_case=worst,
        spectral_bound=spectral,
        upper_bound=upper,
        guarantee_flag=v_n >= 2.0 * u_n,
        predicted_delta_lf=s_mask + f_direct,
    )


def measured_forget_gap(
    theta_p: ParamVector,
    theta_u: ParamVector,
    d_f: Dataset,
    template: MlpModel,
    predicted: float,
) -> dict:
    """Actual forget-loss change vs. the quadratic-model prediction."""
    actual = mean_loss(template.with_params(theta_u.values), d_f) - mean_loss(
        template.with_params(theta_p.values), d_f
    )
    return {
        "actual_delta_lf": float(actual),
        "predicted_delta_lf": float(predicted),
        "cubic_remainder_gap": float(abs(actual - predicted)),
    }
