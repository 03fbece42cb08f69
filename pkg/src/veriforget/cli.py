"""Command line interface.

Exit codes: 0 success (or verdict passed), 1 verdict failed,
2 usage error, 3 numeric failure (ill-conditioned curvature,
non-convergent solve, fixed-point range overflow).
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import artifacts as art
from . import zkp
from .certify import (
    CurvatureNotSPDError,
    check_kkt,
    forget_gain_report,
    measured_forget_gap,
)
from .curvature import (
    ConvergenceError,
    DEFAULT_BLOCK_CAP,
    DEFAULT_DAMPING,
    curvature_layout,
    diag_curvature,
    empirical_fisher_blockwise,
)
from .evals import evaluate, gold_standard
from .masking import hidden_weight_eligible, saliency_scores, select_topk
from .model import (
    TrainConfig,
    TrainingError,
    batch_grad,
    init_mlp,
    make_synthetic_task,
    personalize as personalize_model,
    stream_rng,
    train_sgd,
)
from .numkit import FactorizationError, RangeError, StructuralError, canonical_json
from .obs import FeasibilityError, NumericError, apply_unlearn, group_obs_solve
from .pipeline import demo_config, run_pipeline

NUMERIC_ERRORS = (
    NumericError,
    FactorizationError,
    ConvergenceError,
    CurvatureNotSPDError,
    RangeError,
    zkp.WraparoundError,
    TrainingError,
    FeasibilityError,
)


def numeric_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NUMERIC_ERRORS as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(3)
        except (art.IntegrityError, StructuralError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def emit(obj: dict, as_json: bool) -> None:
    if as_json:
        click.echo(canonical_json(obj).decode())
    else:
        for key, val in obj.items():
            click.echo(f"{key}: {val}")


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise click.BadParameter(f"bad layer list {text!r}")
    if len(dims) < 2:
        raise click.BadParameter("need at least input and output dims")
    return dims


@click.group()
def main():
    """Verifiable approximate unlearning for personalized models."""


# -- training ---------------------------------------------------------------


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--layers", default="8,32,4", show_default=True)
@click.option("--data", default=None, type=click.Path(exists=True),
              help="Train on this .dset instead of generating a synthetic task.")
@click.option("--lr", default=0.05, show_default=True)
@click.option("--epochs", default=40, show_default=True)
@click.option("--batch", default=32, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def train(out_dir, seed, layers, data, lr, epochs, batch, as_json):
    """Pretrain a tanh MLP; without --data, also writes the synthetic
    class-unlearning splits (train/forget/retain/personal + holdouts)."""
    os.makedirs(out_dir, exist_ok=True)
    dims = _parse_layers(layers)
    if data is None:
        task = make_synthetic_task(
            seed, dim=dims[0], n_classes=dims[-1], forget_class=dims[-1] - 1
        )
        for name in (
            "train", "forget", "retain", "personal",
            "holdout_forget", "holdout_personal",
        ):
            art.save_dataset(os.path.join(out_dir, name + ".dset"),
                             getattr(task, name))
        train_set = task.train
        data_path = os.path.join(out_dir, "train.dset")
    else:
        train_set = art.load_dataset(data)
        data_path = data
    init = init_mlp(list(dims), seed)
    art.save_model(os.path.join(out_dir, "theta0_init"), init)
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch, seed=seed)
    model = train_sgd(init, train_set, cfg)
    art.save_model(
        os.path.join(out_dir, "theta0"),
        model,
        inputs={"data": art.file_digest(data_path)},
    )
    emit({"model": os.path.join(out_dir, "theta0"), "seed": seed}, as_json)


@main.command("personalize")
@click.option("--model", "model_path", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--lr", default=0.03, show_default=True)
@click.option("--epochs", default=12, show_default=True)
@click.option("--batch", default=32, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def personalize_cmd(model_path, data, out, seed, lr, epochs, batch, as_json):
    """Fine-tune a pretrained model on client data."""
    model = art.load_model(model_path)
    d_p = art.load_dataset(data)
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch, seed=seed)
    theta_p = personalize_model(model, d_p, cfg)
    art.save_model(out, theta_p, inputs={
        "model": art.model_digest(model_path),
        "data": art.file_digest(data),
    })
    emit({"model": out}, as_json)


# -- provider / client artifacts ---------------------------------------------


@main.command()
@click.option("--model", "model_path", required=True,
              help="Pretrained model prefix (saliency anchor).")
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Forget-set .dset.")
@click.option("--k", default=None, type=int, help="Mask budget (coordinates).")
@click.option("--frac", default=0.04, show_default=True,
              help="Budget as a fraction of eligible coordinates.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def mask(model_path, data, k, frac, seed, out, as_json):
    """Provider step: top-k saliency mask over hidden-layer weights."""
    model = art.load_model(model_path)
    d_f = art.load_dataset(data)
    g_f = batch_grad(model, d_f)
    c_f = diag_curvature(model, d_f, seed=seed)
    scores = saliency_scores(model.params, g_f, c_f, anchor="pretrained")
    eligible = hidden_weight_eligible(model.params.layout)
    budget = k if k is not None else max(1, int(round(frac * eligible.size)))
    m = select_topk(scores, budget, eligible)
    art.save_mask(out, m, inputs={
        "model": art.model_digest(model_path),
        "data": art.file_digest(data),
    })
    emit({"mask": out, "k": m.budget, "digest": m.digest}, as_json)


@main.command()
@click.option("--model", "model_path", required=True,
              help="Personalized model prefix.")
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Client dataset .dset.")
@click.option("--lambda", "lam", default=DEFAULT_DAMPING, show_default=True)
@click.option("--block-cap", default=DEFAULT_BLOCK_CAP, show_default=True,
              type=click.Choice(["256", "512"]))
@click.option("--max-samples", default=1024, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def fisher(model_path, data, lam, block_cap, max_samples, seed, out, as_json):
    """Client step: damped block-wise empirical Fisher curvature."""
    model = art.load_model(model_path)
    d_p = art.load_dataset(data)
    layout = curvature_layout(model.params.layout, int(block_cap))
    f = empirical_fisher_blockwise(
        model, d_p, layout, lam=lam, max_samples=max_samples, seed=seed
    )
    art.save_fisher(out, f, inputs={
        "model": art.model_digest(model_path),
        "data": art.file_digest(data),
    })
    emit({"fisher": out, "lambda": lam, "n": f.sample_count}, as_json)


@main.command()
@click.option("--model", "model_path", required=True,
              help="Personalized model prefix.")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--fisher", "fisher_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def unlearn(model_path, mask_path, fisher_path, out_dir, as_json):
    """Solve the masked compensation problem and assemble theta_u."""
    os.makedirs(out_dir, exist_ok=True)
    theta_p = art.load_model(model_path)
    m = art.load_mask(mask_path)
    f = art.load_fisher(fisher_path)
    comp = group_obs_solve(f, theta_p.params, m)
    out = apply_unlearn(theta_p.params, comp, m)
    inputs = {
        "model": art.model_digest(model_path),
        "mask": art.file_digest(mask_path),
        "fisher": art.file_digest(fisher_path),
    }
    art.save_comp(os.path.join(out_dir, "comp"), comp, inputs=inputs)
    art.save_model(
        os.path.join(out_dir, "theta_u"),
        theta_p.with_params(out.theta_u.values),
        inputs=inputs,
    )
    emit({
        "comp": os.path.join(out_dir, "comp"),
        "theta_u": os.path.join(out_dir, "theta_u"),
        "method": comp.method,
        "kkt_residual_inf": comp.kkt_residual_inf,
    }, as_json)


# -- certificates -------------------------------------------------------------


@main.command()
@click.option("--theta-p", "tp_path", required=True)
@click.option("--theta-u", "tu_path", required=True)
@click.option("--comp", "comp_path", required=True)
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--fisher", "fisher_path", required=True, type=click.Path(exists=True))
@click.option("--tau", default=1e-6, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def certify(tp_path, tu_path, comp_path, mask_path, fisher_path, tau, as_json):
    """Plain-arithmetic first-order certificate; exit 1 on failure."""
    theta_p = art.load_model(tp_path)
    theta_u = art.load_model(tu_path)
    comp = art.load_comp(comp_path)
    art.check_input_digests(
        {"inputs": art.comp_inputs(comp_path)},
        mask=mask_path, fisher=fisher_path,
    )
    m = art.load_mask(mask_path)
    f = art.load_fisher(fisher_path)
    cert = check_kkt(theta_p.params, theta_u.params, comp, f, m, tau_real=tau)
    emit(cert.to_json(), as_json)
    sys.exit(0 if cert.verdict else 1)


@main.command("report-bounds")
@click.option("--theta-p", "tp_path", required=True)
@click.option("--theta-u", "tu_path", default=None,
              help="Optional: also report the measured forget-loss gap.")
@click.option("--comp", "comp_path", required=True)
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Forget-set .dset.")
@click.option("--lambda-q", default=1e-3, show_default=True)
@click.option("--hessian", default="exact", show_default=True,
              type=click.Choice(["exact", "fisher"]))
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def report_bounds(tp_path, tu_path, comp_path, mask_path, data, lambda_q,
                  hessian, as_json):
    """Forget-loss gain bounds for the compensated update."""
    theta_p = art.load_model(tp_path)
    comp = art.load_comp(comp_path)
    m = art.load_mask(mask_path)
    d_f = art.load_dataset(data)
    budget = forget_gain_report(
        theta_p.params, m, comp, d_f, theta_p,
        lam_q=lambda_q, hessian_mode=hessian,
    )
    obj = budget.to_json()
    if tu_path is not None:
        theta_u = art.load_model(tu_path)
        obj["measured"] = measured_forget_gap(
            theta_p.params, theta_u.params, d_f, theta_p,
            budget.predicted_delta_lf,
        )
    emit(obj, as_json)


# -- zk layer -----------------------------------------------------------------


@main.command()
@click.option("--theta-p", "tp_path", required=True)
@click.option("--theta-u", "tu_path", required=True)
@click.option("--comp", "comp_path", required=True)
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--fisher", "fisher_path", required=True, type=click.Path(exists=True))
@click.option("--frac-bits", nargs=2, type=int,
              default=(zkp.DEFAULT_FRAC_BITS_W, zkp.DEFAULT_FRAC_BITS_C),
              show_default=True, help="Fractional bits: weights, curvature.")
@click.option("--seed", default=0, show_default=True,
              help="Seed for the commitment blinding randomness.")
@click.option("--backend", default="mock", show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def prove(tp_path, tu_path, comp_path, mask_path, fisher_path, frac_bits,
          seed, backend, out_dir, as_json):
    """Encode the fixed-point witness, commit, and produce a proof."""
    os.makedirs(out_dir, exist_ok=True)
    theta_p = art.load_model(tp_path)
    theta_u = art.load_model(tu_path)
    comp = art.load_comp(comp_path)
    m = art.load_mask(mask_path)
    f = art.load_fisher(fisher_path)
    f_w, f_c = frac_bits
    witness = zkp.encode_fixed_witness(
        theta_p.params, theta_u.params, comp.delta_w, comp.multipliers,
        f, m, f_w=f_w, f_c=f_c,
    )
    t_int = zkp.default_t_int(witness, f, m, comp.kkt_residual_inf)
    circuit = zkp.synthesize(f.layout, m, t_int, f_w, f_c)
    rng = stream_rng(seed, "commit")
    randomness = tuple(int(x) for x in rng.integers(0, 2**63, size=3))
    c_flat = np.concatenate([b.ravel() for b in witness.c_blocks])
    public = zkp.PublicInputs(
        mask_digest=m.digest,
        com_theta_p=zkp.commit_vector(witness.theta_p.ints, randomness[0]).digest,
        com_theta_u=zkp.commit_vector(witness.theta_u.ints, randomness[1]).digest,
        com_c_p=zkp.commit_vector(c_flat, randomness[2]).digest,
        t_int=t_int,
        f_w=f_w,
        f_c=f_c,
    )
    try:
        proof = zkp.get_backend(backend).prove(circuit, witness, public, randomness)
    except zkp.UnsatisfiableWitnessError as exc:
        click.echo(f"witness unsatisfiable: {exc}", err=True)
        sys.exit(1)
    inputs = {
        "theta_p": art.model_digest(tp_path),
        "theta_u": art.model_digest(tu_path),
        "mask": art.file_digest(mask_path),
        "fisher": art.file_digest(fisher_path),
    }
    art.save_public(os.path.join(out_dir, "public.pub"), public, inputs=inputs)
    art.save_proof(os.path.join(out_dir, "proof.prf"), proof)
    emit({
        "public": os.path.join(out_dir, "public.pub"),
        "proof": os.path.join(out_dir, "proof.prf"),
        "t_int": t_int,
        "constraints": sum(circuit.counts.values()),
    }, as_json)


@main.command()
@click.option("--proof", "proof_path", required=True, type=click.Path(exists=True))
@click.option("--public", "public_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default="mock", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def verify(proof_path, public_path, backend, as_json):
    """Check a proof against public inputs; exit 1 when rejected."""
    proof = art.load_proof(proof_path)
    public = art.load_public(public_path)
    ok = zkp.get_backend(backend).verify(proof.payload, public)
    emit({"verified": ok}, as_json)
    sys.exit(0 if ok else 1)


# -- evaluation ----------------------------------------------------------------


@main.command()
@click.option("--init", "init_path", required=True,
              help="Initialization model prefix (same seed as pretraining).")
@click.option("--retain", required=True, type=click.Path(exists=True))
@click.option("--personal", required=True, type=click.Path(exists=True))
@click.option("--out", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--epochs", default=40, show_default=True)
@click.option("--p-lr", default=0.03, show_default=True)
@click.option("--p-epochs", default=12, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def gold(init_path, retain, personal, out, seed, lr, epochs, p_lr, p_epochs,
         as_json):
    """Retrain-then-personalize gold standard."""
    init = art.load_model(init_path)
    d_r = art.load_dataset(retain)
    d_p = art.load_dataset(personal)
    model = gold_standard(
        init, d_r, d_p,
        TrainConfig(learning_rate=lr, epochs=epochs, seed=seed),
        TrainConfig(learning_rate=p_lr, epochs=p_epochs, seed=seed),
    )
    art.save_model(out, model, inputs={
        "init": art.model_digest(init_path),
        "retain": art.file_digest(retain),
        "personal": art.file_digest(personal),
    })
    emit({"model": out}, as_json)


@main.command("evaluate")
@click.option("--model", "model_path", required=True)
@click.option("--gold", "gold_path", required=True)
@click.option("--forget", required=True, type=click.Path(exists=True))
@click.option("--personal", required=True, type=click.Path(exists=True))
@click.option("--members", required=True, type=click.Path(exists=True),
              help="Forget-set members for the membership attack.")
@click.option("--nonmembers", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def evaluate_cmd(model_path, gold_path, forget, personal, members, nonmembers,
                 as_json):
    """Accuracy, predictive alignment to gold, and membership AUC."""
    report = evaluate(
        art.load_model(model_path),
        art.load_model(gold_path),
        art.load_dataset(forget),
        art.load_dataset(personal),
        mia_members=art.load_dataset(members),
        mia_nonmembers=art.load_dataset(nonmembers),
    )
    emit(report.to_json(), as_json)


# -- demo ----------------------------------------------------------------------


@main.command()
@click.option("--seed", default=7, show_default=True)
@click.option("--out-dir", default="demo_out", show_default=True,
              type=click.Path())
@click.option("--skip-gold", is_flag=True, help="Skip the retraining baseline.")
@click.option("--json", "as_json", is_flag=True)
@numeric_guard
def demo(seed, out_dir, skip_gold, as_json):
    """Full pipeline on the synthetic task; writes every artifact."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = demo_config(run_gold=not skip_gold)
    result = run_pipeline(seed, cfg)

    for name in (
        "train", "forget", "retain", "personal",
        "holdout_forget", "holdout_personal",
    ):
        art.save_dataset(os.path.join(out_dir, name + ".dset"),
                         getattr(result.task, name))
    art.save_model(os.path.join(out_dir, "theta0_init"), result.theta0_init)
    art.save_model(os.path.join(out_dir, "theta0"), result.theta0)
    art.save_model(os.path.join(out_dir, "theta_p"), result.theta_p)
    art.save_model(os.path.join(out_dir, "theta_u"), result.theta_u)
    art.save_mask(os.path.join(out_dir, "mask.mask"), result.mask)
    art.save_fisher(os.path.join(out_dir, "fisher"), result.fisher)
    art.save_comp(os.path.join(out_dir, "comp"), result.comp)
    if result.gold is not None:
        art.save_model(os.path.join(out_dir, "gold"), result.gold)
    if result.public is not None:
        art.save_public(os.path.join(out_dir, "public.pub"), result.public)
        art.save_proof(os.path.join(out_dir, "proof.prf"), result.proof)

    summary = {
        "seed": seed,
        "certificate": result.certificate.to_json(),
        "mask": {"k": result.mask.budget, "digest": result.mask.digest},
        "drift": result.drift_report,
        "verified": result.verified,
        "t_int": result.public.t_int if result.public else None,
        "reports": {k: v.to_json() for k, v in result.reports.items()},
    }
    with open(os.path.join(out_dir, "summary.json"), "wb") as fh:
        fh.write(canonical_json(summary))
    with open(os.path.join(out_dir, "digests.json"), "wb") as fh:
        fh.write(canonical_json(art.out_digests(out_dir)))
    emit(summary, as_json)
    ok = result.certificate.verdict and (result.verified in (True, None))
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
