"""Damped block-wise empirical Fisher estimation and CG solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, MlpModel, per_example_grads, stream_rng
from .numkit import (
    BlockDiagMatrix,
    BlockLayout,
    ParamVector,
    StructuralError,
    canonical_json,
    sha256_hex,
)

DEFAULT_DAMPING = 1e-3
DEFAULT_MAX_SAMPLES = 1024
DEFAULT_BLOCK_CAP = 256


class ConvergenceError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class BlockFisher:
    """Empirical Fisher F stored per block; damping applied lazily as +lam*I."""

    fisher: BlockDiagMatrix
    lam: float
    sample_count: int
    source_digest: str

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("damping must be > 0")

    @property
    def layout(self) -> BlockLayout:
        return self.fisher.layout

    def damped_blocks(self):
        for arr in self.fisher.blocks:
            yield arr + self.lam * np.eye(arr.shape[0])

    def damped(self) -> BlockDiagMatrix:
        return BlockDiagMatrix(
            blocks=tuple(self.damped_blocks()), layout=self.layout
        )


@dataclass(frozen=True)
class DiagCurvature:
    diag: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.diag, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)
        if d.size and d.min() < 0:
            raise ValueError("diagonal curvature must be >= 0")


def curvature_layout(model_layout: BlockLayout, cap: int = DEFAULT_BLOCK_CAP) -> BlockLayout:
    """Model layout with oversize blocks split contiguously at `cap`."""
    sizes = []
    for _, size, label in model_layout.blocks:
        if size <= cap:
            sizes.append((size, label))
        else:
            part = 0
            remaining = size
            while remaining > 0:
                take = min(cap, remaining)
                sizes.append((take, f"{label}/part{part}"))
                remaining -= take
                part += 1
    return BlockLayout.from_sizes(sizes)


def _subsample(data: Dataset, max_samples: int, seed: int) -> tuple[Dataset, np.ndarray]:
    rng = stream_rng(seed, "fisher/subsample")
    order = rng.permutation(len(data))
    take = order[: min(len(data), max_samples)]
    return data.subset(take), take


def empirical_fisher_blockwise(
    model: MlpModel,
    data: Dataset,
    layout: BlockLayout,
    lam: float = DEFAULT_DAMPING,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    seed: int = 0,
) -> BlockFisher:
    """F^(b) = (1/n) sum_i g_i^(b) g_i^(b)T over a seeded subsample."""
    if len(data) == 0:
        raise StructuralError("empty dataset")
    if lam <= 0:
        raise ValueError("damping must be > 0")
    if max_samples < 1:
        raise ValueError("max_samples must be >= 1")
    if layout.total_dim != model.dim:
        raise StructuralError("curvature layout dim does not match model")
    sub, indices = _subsample(data, max_samples, seed)
    grads = per_example_grads(model, sub)  # n x d
    n = grads.shape[0]
    blocks = []
    for sl, _ in layout.slices():
        gb = grads[:, sl]
        f = gb.T @ gb / n
        f = 0.5 * (f + f.T)
        blocks.append(f)
    digest = sha256_hex(
        canonical_json(
            {
                "dataset": data.digest(),
                "seed": seed,
                "indices": indices.tolist(),
            }
        )
    )
    return BlockFisher(
        fisher=BlockDiagMatrix(blocks=tuple(blocks), layout=layout),
        lam=lam,
        sample_count=n,
        source_digest=digest,
    )


def diag_curvature(
    model: MlpModel,
    data: Dataset,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    seed: int = 0,
) -> DiagCurvature:
    """Diagonal empirical Fisher: mean squared per-coordinate gradients."""
    if len(data) == 0:
        raise StructuralError("empty dataset")
    sub, _ = _subsample(data, max_samples, seed)
    grads = per_example_grads(model, sub)
    return DiagCurvature(diag=(grads**2).mean(axis=0))


def _cg(a_mul, b: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    """Plain CG for SPD operators; relative residual stopping rule."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    for it in range(1, max_iter + 1):
        ap = a_mul(p)
        alpha = rs / (p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol * bnorm:
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations "
        f"(residual {np.sqrt(rs) / bnorm:.3e} relative)",
        residual=float(np.sqrt(rs) / bnorm),
    )


def cg_solve(
    C: BlockFisher,
    y: ParamVector,
    tol: float = 1e-8,
    max_iter: int = 2000,
) -> tuple[ParamVector, list[int]]:
    """Solve (F + lam I) x = y per block; returns x and iteration counts."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if C.layout != y.layout:
        raise StructuralError("fisher and vector layouts differ")
    out = np.empty(y.dim)
    iters = []
    for arr, (sl, _) in zip(C.fisher.blocks, C.layout.slices()):
        damped = arr + C.lam * np.eye(arr.shape[0])
        x, it = _cg(lambda v: damped @ v, y.values[sl], tol, max_iter)
        out[sl] = x
        iters.append(it)
    return y.with_values(out), iters
