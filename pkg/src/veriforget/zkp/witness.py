"""Fixed-point witness encoding for the certificate circuit.

Assembly and feasibility are made exact in integer arithmetic: theta_p
and the off-mask compensation are quantized first, then the masked
compensation entries and theta_u are *defined* from those integers.
All quantization slack therefore lands in the stationarity residual,
which the circuit checks against an integer tolerance window T_int.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..curvature import BlockFisher
from ..masking import MaskArtifact
from ..numkit import FixedVector, ParamVector, RangeError, quantize

# f_c exceeds f_w by more than 4 bits so that the honest stationarity
# residual window T_int stays below the detectability threshold of a
# single-coordinate multiplier tamper of 2^{-f_w+4} (which lands at
# 2^{f_c+4} integer units): the dominant honest error term is
# 2^{-f_c-1} * sum_j |dw_j|, so pushing f_c up shrinks it relative to
# the tamper signal while f_w + f_c stays within the 60-bit budget.
DEFAULT_FRAC_BITS_W = 22
DEFAULT_FRAC_BITS_C = 32
DEFAULT_BOUND_W = 64.0
DEFAULT_BOUND_C = 1024.0
DEFAULT_BOUND_LAM = 64.0

# The stationarity identity C dw + E lam = 0 is invariant under a joint
# scaling of C and lam, so the encoder normalizes both by a power of two
# until every curvature row sum is at most this target.  The dominant
# honest residual term is (row sum)/2 in units of 2^{f_c}; capping row
# sums at 4 keeps it at 2^{f_c+1}, a factor 8 below the 2^{f_c+4}
# detectability threshold of the minimal multiplier tamper.
ROW_SUM_TARGET = 4.0


@dataclass(frozen=True)
class FixedWitness:
    theta_p: FixedVector
    theta_u: FixedVector
    delta_w: FixedVector
    lam: FixedVector
    c_blocks: tuple[np.ndarray, ...]  # int64 matrices, frac_bits f_c
    f_w: int
    f_c: int
    bound_w: float
    bound_c: float
    bound_lam: float
    scale_log2: int = 0  # C_p and lam are stored scaled by 2^-scale_log2


def encode_fixed_witness(
    theta_p: ParamVector,
    theta_u: ParamVector,
    delta_w: ParamVector,
    lam: np.ndarray,
    c_p: BlockFisher,
    mask: MaskArtifact,
    f_w: int = DEFAULT_FRAC_BITS_W,
    f_c: int = DEFAULT_FRAC_BITS_C,
    bound_w: float = DEFAULT_BOUND_W,
    bound_c: float = DEFAULT_BOUND_C,
    bound_lam: float = DEFAULT_BOUND_LAM,
) -> FixedWitness:
    if f_w + f_c > 60:
        raise ValueError("f_w + f_c must be <= 60")
    q_tp = quantize(theta_p.values, f_w, bound_w)
    q_dw_raw = quantize(delta_w.values, f_w, bound_w)
    dw_ints = q_dw_raw.ints.copy()
    dw_ints[mask.support] = -q_tp.ints[mask.support]
    q_dw = FixedVector(ints=dw_ints, frac_bits=f_w, bound=bound_w)
    tu_ints = q_tp.ints + q_dw.ints
    q_tu = FixedVector(ints=tu_ints, frac_bits=f_w, bound=bound_w)
    # the float-side theta_u must agree with the constructed integers
    # within quantization error; a mismatch means inconsistent inputs
    recon = q_tu.dequantize()
    if np.abs(recon - theta_u.values).max() > 2.0 ** (-f_w + 1):
        raise RangeError("theta_u inconsistent with theta_p + delta_w")
    damped = list(c_p.damped_blocks())
    row_max = max(float(np.abs(b).sum(axis=1).max()) for b in damped)
    scale_log2 = max(0, math.ceil(math.log2(row_max / ROW_SUM_TARGET))) \
        if row_max > ROW_SUM_TARGET else 0
    scale = 2.0 ** -scale_log2
    q_lam = quantize(np.asarray(lam, dtype=np.float64) * scale, f_w, bound_lam)
    c_blocks = []
    for arr in damped:
        c_blocks.append(
            quantize(arr.ravel() * scale, f_c, bound_c).ints.reshape(arr.shape)
        )
    return FixedWitness(
        theta_p=q_tp,
        theta_u=q_tu,
        delta_w=q_dw,
        lam=q_lam,
        c_blocks=tuple(c_blocks),
        f_w=f_w,
        f_c=f_c,
        bound_w=bound_w,
        bound_c=bound_c,
        bound_lam=bound_lam,
        scale_log2=scale_log2,
    )


def stationarity_bound_int(
    w: FixedWitness,
    c_p: BlockFisher,
    mask: MaskArtifact,
    solver_residual_inf: float = 0.0,
) -> int:
    """Analytic honest-residual bound, in 2^{-(f_w+f_c)} integer units.

    With per-entry rounding errors eps_w = 2^{-f_w-1} on the weight-side
    quantities and eps_c = 2^{-f_c-1} on the curvature entries, the
    integer stationarity residual of an honestly quantized witness obeys

      |r_i| <= sum_j |C_ij^int| / 2 + sum_j |dw_j^int| / 2 + d_b / 4
               + 2^{f_c - 1} + solver_residual * 2^{f_w + f_c}

    where the sums run over the block containing coordinate i.
    """
    masked = mask.indicator()
    worst = 0.0
    for c_int, (sl, _) in zip(w.c_blocks, c_p.layout.slices()):
        d_b = c_int.shape[0]
        dw_sum = float(np.abs(w.delta_w.ints[sl].astype(np.float64)).sum())
        row_sums = np.abs(c_int.astype(np.float64)).sum(axis=1)
        lam_term = 2.0 ** (w.f_c - 1) if masked[sl].any() else 0.0
        block_worst = (
            0.5 * float(row_sums.max()) + 0.5 * dw_sum + 0.25 * d_b + lam_term
        )
        worst = max(worst, block_worst)
    worst += solver_residual_inf * 2.0 ** (w.f_w + w.f_c)
    return int(math.ceil(worst))


def default_t_int(
    w: FixedWitness,
    c_p: BlockFisher,
    mask: MaskArtifact,
    solver_residual_inf: float = 0.0,
    headroom: int = 2,
) -> int:
    """Smallest power of two >= headroom * analytic honest bound,
    clamped strictly below the detectability threshold.

    The analytic bound already dominates every honestly quantized
    residual, so the headroom only absorbs slack in the reported solver
    residual.  A minimal single-coordinate multiplier tamper of
    2^{-f_w+4} shifts the integer residual by 2^{f_c+4}; T_int must stay
    strictly below that so the tamper is always rejected.  When the
    power-of-two inflation would cross the threshold, fall back to half
    the threshold; if even the raw bound does not fit, the fixed-point
    configuration cannot separate honest noise from tampering.
    """
    bound = stationarity_bound_int(w, c_p, mask, solver_residual_inf)
    t_int = 1 << max(int(headroom * max(bound, 1)) - 1, 0).bit_length()
    threshold = 1 << (w.f_c + 4)
    if t_int >= threshold:
        t_int = threshold >> 1
    if bound >= t_int:
        raise ValueError(
            f"honest residual bound {bound} cannot be separated from the "
            f"minimal multiplier tamper at 2^{w.f_c + 4}; widen f_c - f_w"
        )
    return t_int
