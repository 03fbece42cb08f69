"""End-to-end orchestration of the unlearning protocol on the built-in
synthetic task: pretrain, personalize, provider-side mask, client-side
Fisher + compensation, certificate checks, the ZK layer, and evaluation
against the retrain-then-personalize gold standard."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import zkp
from .certify import KktCertificate, check_kkt
from .curvature import (
    BlockFisher,
    DEFAULT_BLOCK_CAP,
    DEFAULT_DAMPING,
    DEFAULT_MAX_SAMPLES,
    curvature_layout,
    diag_curvature,
    empirical_fisher_blockwise,
)
from .evals import EvalReport, evaluate, gold_standard
from .masking import (
    DEFAULT_BUDGET_FRACTION,
    MaskArtifact,
    hidden_weight_eligible,
    saliency_drift_report,
    saliency_scores,
    select_topk,
)
from .model import (
    Dataset,
    MlpModel,
    SyntheticTask,
    TrainConfig,
    TrainTrace,
    batch_grad,
    init_mlp,
    make_synthetic_task,
    personalize,
    stream_rng,
    train_sgd,
)
from .numkit import ParamVector
from .obs import CompensationResult, UnlearnOutput, apply_unlearn, group_obs_solve


@dataclass(frozen=True)
class PipelineConfig:
    layer_dims: tuple[int, ...] = (8, 32, 4)
    pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.05, epochs=40, batch_size=32
        )
    )
    personalize: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.03, epochs=12, batch_size=32
        )
    )
    mask_fraction: float = DEFAULT_BUDGET_FRACTION
    mask_k: int | None = None  # overrides mask_fraction when set
    fisher_lam: float = DEFAULT_DAMPING
    fisher_max_samples: int = DEFAULT_MAX_SAMPLES
    block_cap: int = DEFAULT_BLOCK_CAP
    f_w: int = zkp.DEFAULT_FRAC_BITS_W
    f_c: int = zkp.DEFAULT_FRAC_BITS_C
    bound_w: float = zkp.DEFAULT_BOUND_W
    bound_c: float = zkp.DEFAULT_BOUND_C
    bound_lam: float = zkp.DEFAULT_BOUND_LAM
    tau_real: float = 1e-6
    run_zk: bool = True
    run_gold: bool = True
    forget_class: int = 3
    shift: float = 4.0


def demo_config(**overrides) -> PipelineConfig:
    """Desk-scale class-unlearning configuration used by the demo and the
    acceptance experiment: 8-32-4 MLP, forget one of four Gaussian
    classes, mask 160 of the 256 hidden-layer weights."""
    base = dict(mask_k=160)
    base.update(overrides)
    return PipelineConfig(**base)


def tiny_config(**overrides) -> PipelineConfig:
    """Small fast pipeline (4-8-3 MLP) for high-repetition ZK checks."""
    base = dict(
        layer_dims=(4, 8, 3),
        forget_class=2,
        mask_k=12,
        pretrain=TrainConfig(learning_rate=0.05, epochs=15, batch_size=32),
        personalize=TrainConfig(learning_rate=0.03, epochs=6, batch_size=32),
        run_gold=False,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@dataclass
class PipelineResult:
    seed: int
    config: PipelineConfig
    task: SyntheticTask
    theta0_init: MlpModel
    theta0: MlpModel
    theta_p: MlpModel
    mask: MaskArtifact
    fisher: BlockFisher
    comp: CompensationResult
    unlearned: UnlearnOutput
    theta_u: MlpModel
    mask_only: MlpModel
    certificate: KktCertificate
    drift_report: dict
    gold: MlpModel | None = None
    reports: dict[str, EvalReport] = field(default_factory=dict)
    witness: zkp.FixedWitness | None = None
    circuit: zkp.CertificateCircuit | None = None
    public: zkp.PublicInputs | None = None
    proof: zkp.Proof | None = None
    verified: bool | None = None
    randomness: tuple[int, int, int] | None = None


def select_mask(
    theta0: MlpModel,
    d_f: Dataset,
    cfg: PipelineConfig,
    seed: int,
) -> tuple[MaskArtifact, np.ndarray]:
    """Provider step: saliency at the pretrained weights, top-k support."""
    g_f = batch_grad(theta0, d_f)
    c_f = diag_curvature(theta0, d_f, seed=seed)
    scores = saliency_scores(theta0.params, g_f, c_f, anchor="pretrained")
    eligible = hidden_weight_eligible(theta0.params.layout)
    k = cfg.mask_k if cfg.mask_k is not None else max(
        1, int(round(cfg.mask_fraction * eligible.size))
    )
    return select_topk(scores, k, eligible), eligible


def mask_only_model(theta_p: MlpModel, mask: MaskArtifact) -> MlpModel:
    vals = theta_p.params.values.copy()
    vals[mask.support] = 0.0
    return theta_p.with_params(vals)


def run_zk_layer(
    result: PipelineResult, cfg: PipelineConfig, seed: int
) -> None:
    """Encode the fixed-point witness, synthesize, prove, and verify."""
    witness = zkp.encode_fixed_witness(
        result.theta_p.params,
        result.theta_u.params,
        result.comp.delta_w,
        result.comp.multipliers,
        result.fisher,
        result.mask,
        f_w=cfg.f_w,
        f_c=cfg.f_c,
        bound_w=cfg.bound_w,
        bound_c=cfg.bound_c,
        bound_lam=cfg.bound_lam,
    )
    t_int = zkp.default_t_int(
        witness, result.fisher, result.mask, result.comp.kkt_residual_inf
    )
    circuit = zkp.synthesize(
        result.fisher.layout, result.mask, t_int, cfg.f_w, cfg.f_c
    )
    rng = stream_rng(seed, "commit")
    randomness = tuple(int(x) for x in rng.integers(0, 2**63, size=3))
    c_flat = np.concatenate([b.ravel() for b in witness.c_blocks])
    public = zkp.PublicInputs(
        mask_digest=result.mask.digest,
        com_theta_p=zkp.commit_vector(witness.theta_p.ints, randomness[0]).digest,
        com_theta_u=zkp.commit_vector(witness.theta_u.ints, randomness[1]).digest,
        com_c_p=zkp.commit_vector(c_flat, randomness[2]).digest,
        t_int=t_int,
        f_w=cfg.f_w,
        f_c=cfg.f_c,
    )
    backend = zkp.get_backend("mock")
    proof = backend.prove(circuit, witness, public, randomness)
    result.witness = witness
    result.circuit = circuit
    result.public = public
    result.proof = proof
    result.verified = backend.verify(proof.payload, public)
    result.randomness = randomness


def run_pipeline(seed: int, cfg: PipelineConfig | None = None) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    task = make_synthetic_task(
        seed,
        dim=cfg.layer_dims[0],
        n_classes=cfg.layer_dims[-1],
        forget_class=cfg.forget_class,
        shift=cfg.shift,
    )

    theta0_init = init_mlp(list(cfg.layer_dims), seed)
    theta0 = train_sgd(theta0_init, task.train, replace(cfg.pretrain, seed=seed))
    trace = TrainTrace()
    theta_p = personalize(
        theta0, task.personal, replace(cfg.personalize, seed=seed), trace=trace
    )

    mask, eligible = select_mask(theta0, task.forget, cfg, seed)

    # diagnostic: how stable is the provider-side saliency under drift
    g0 = batch_grad(theta0, task.forget)
    gp = batch_grad(theta_p, task.forget)
    c0 = diag_curvature(theta0, task.forget, seed=seed)
    cp_diag = diag_curvature(theta_p, task.forget, seed=seed)
    s0 = saliency_scores(theta0.params, g0, c0, anchor="pretrained")
    sp = saliency_scores(theta_p.params, gp, cp_diag, anchor="personalized")
    drift = saliency_drift_report(
        s0, sp, mask.budget, eligible, theta_drift_l2=trace.drift_l2
    )

    layout = curvature_layout(theta_p.params.layout, cfg.block_cap)
    fisher = empirical_fisher_blockwise(
        theta_p,
        task.personal,
        layout,
        lam=cfg.fisher_lam,
        max_samples=cfg.fisher_max_samples,
        seed=seed,
    )

    comp = group_obs_solve(fisher, theta_p.params, mask)
    unlearned = apply_unlearn(theta_p.params, comp, mask)
    theta_u = theta_p.with_params(unlearned.theta_u.values)
    masked = mask_only_model(theta_p, mask)

    certificate = check_kkt(
        theta_p.params,
        unlearned.theta_u,
        comp,
        fisher,
        mask,
        tau_real=cfg.tau_real,
    )

    result = PipelineResult(
        seed=seed,
        config=cfg,
        task=task,
        theta0_init=theta0_init,
        theta0=theta0,
        theta_p=theta_p,
        mask=mask,
        fisher=fisher,
        comp=comp,
        unlearned=unlearned,
        theta_u=theta_u,
        mask_only=masked,
        certificate=certificate,
        drift_report=drift,
    )

    if cfg.run_zk:
        run_zk_layer(result, cfg, seed)

    if cfg.run_gold:
        gold = gold_standard(
            theta0_init,
            task.retain,
            task.personal,
            replace(cfg.pretrain, seed=seed),
            replace(cfg.personalize, seed=seed),
        )
        result.gold = gold
        for name, model in (
            ("personalized", theta_p),
            ("mask_only", masked),
            ("unlearned", theta_u),
            ("gold", gold),
        ):
            result.reports[name] = evaluate(
                model,
                gold,
                task.holdout_forget,
                task.holdout_personal,
                mia_members=task.forget,
                mia_nonmembers=task.holdout_forget,
                seeds=[seed],
            )
    return result
