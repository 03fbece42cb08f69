"""Desk-scale tanh MLP classifier with exact gradients and deterministic SGD.

Parameters live in a flat ParamVector whose layout has one block per
weight matrix / bias vector ("mlp.{i}.w", "mlp.{i}.b").
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numkit import (
    BlockLayout,
    ParamVector,
    StructuralError,
    sha256_hex,
    tree_mean,
)


class TrainingError(RuntimeError):
    """Training loss became non-finite."""


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream-name)."""
    h = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    key = np.frombuffer(h[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # n x m, f64
    labels: np.ndarray  # n, integer in [0, C)
    name: str = ""

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or x.shape[0] < 1:
            raise StructuralError("features must be a non-empty n x m matrix")
        if y.shape != (x.shape[0],):
            raise StructuralError("labels length must match feature rows")
        if not np.all(np.isfinite(x)):
            raise StructuralError("non-finite features")
        if y.min() < 0:
            raise StructuralError("negative label")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            name=name if name is not None else self.name,
        )

    def digest(self) -> str:
        return sha256_hex(
            self.features.astype("<f8").tobytes()
            + self.labels.astype("<i8").tobytes()
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


def mlp_layout(layer_dims: list[int]) -> BlockLayout:
    sizes = []
    for i, (din, dout) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        sizes.append((din * dout, f"mlp.{i}.w"))
        sizes.append((dout, f"mlp.{i}.b"))
    return BlockLayout.from_sizes(sizes)


@dataclass(frozen=True)
class MlpModel:
    layer_dims: tuple[int, ...]
    params: ParamVector
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(self.layer_dims))
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")
        expected = mlp_layout(list(self.layer_dims))
        if self.params.layout != expected:
            raise StructuralError("params layout does not match layer_dims")

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def dim(self) -> int:
        return self.params.dim

    def weights(self):
        """Yield (W_i, b_i) views with W_i of shape (din, dout)."""
        for i, (din, dout) in enumerate(
            zip(self.layer_dims[:-1], self.layer_dims[1:])
        ):
            w = self.params.block(f"mlp.{i}.w").reshape(din, dout)
            b = self.params.block(f"mlp.{i}.b")
            yield w, b

    def with_params(self, values: np.ndarray) -> "MlpModel":
        return MlpModel(
            layer_dims=self.layer_dims,
            params=self.params.with_values(values),
            activation=self.activation,
        )


def init_mlp(layer_dims: list[int], seed: int) -> MlpModel:
    rng = stream_rng(seed, "init")
    layout = mlp_layout(layer_dims)
    vals = np.zeros(layout.total_dim)
    for i, (din, dout) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        scale = 1.0 / np.sqrt(din)
        sl = layout.block_slice(f"mlp.{i}.w")
        vals[sl] = rng.uniform(-scale, scale, size=din * dout)
    return MlpModel(
        layer_dims=tuple(layer_dims),
        params=ParamVector(values=vals, layout=layout),
    )


def _forward(model: MlpModel, x: np.ndarray):
    """Forward pass on a batch; returns logits and per-layer activations."""
    acts = [x]
    h = x
    layers = list(model.weights())
    for li, (w, b) in enumerate(layers):
        z = h @ w + b
        if li < len(layers) - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            return z, acts
    raise AssertionError("unreachable")


def logits(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.layer_dims[0]:
        raise StructuralError(
            f"input dim {x.shape[1]} != model input {model.layer_dims[0]}"
        )
    z, _ = _forward(model, x)
    return z


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predictive_dist(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Softmax predictive distribution for one example or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    p = _softmax(logits(model, x))
    return p[0] if single else p


def _backward(model: MlpModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Summed cross-entropy gradient over the batch, as a flat vector."""
    z, acts = _forward(model, x)
    p = _softmax(z)
    n = x.shape[0]
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0  # dL/dz for summed loss
    layers = list(model.weights())
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        a_prev = acts[li]
        grads_w[li] = a_prev.T @ delta
        grads_b[li] = delta.sum(axis=0)
        if li > 0:
            w, _ = layers[li]
            da = delta @ w.T
            delta = da * (1.0 - acts[li] ** 2)
    flat = np.empty(model.dim)
    layout = model.params.layout
    for li in range(len(layers)):
        flat[layout.block_slice(f"mlp.{li}.w")] = grads_w[li].ravel()
        flat[layout.block_slice(f"mlp.{li}.b")] = grads_b[li]
    return flat


def per_example_grad(model: MlpModel, x: np.ndarray, y: int) -> ParamVector:
    """Exact reverse-mode gradient of the cross-entropy loss at one example."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    g = _backward(model, x, np.asarray([y], dtype=np.int64))
    return model.params.with_values(g)


def per_example_grads(model: MlpModel, data: Dataset) -> np.ndarray:
    """n x d matrix of per-example gradients (vectorized per layer)."""
    x, y = data.features, data.labels
    z, acts = _forward(model, x)
    p = _softmax(z)
    n = x.shape[0]
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    layers = list(model.weights())
    out = np.empty((n, model.dim))
    layout = model.params.layout
    for li in range(len(layers) - 1, -1, -1):
        a_prev = acts[li]
        gw = np.einsum("ni,nj->nij", a_prev, delta)
        out[:, layout.block_slice(f"mlp.{li}.w")] = gw.reshape(n, -1)
        out[:, layout.block_slice(f"mlp.{li}.b")] = delta
        if li > 0:
            w, _ = layers[li]
            delta = (delta @ w.T) * (1.0 - acts[li] ** 2)
    return out


def batch_grad(model: MlpModel, data: Dataset) -> ParamVector:
    """Gradient of the mean loss over the dataset."""
    g = _backward(model, data.features, data.labels) / len(data)
    return model.params.with_values(g)


def mean_loss(model: MlpModel, data: Dataset) -> float:
    z = logits(model, data.features)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    losses = -logp[np.arange(len(data)), data.labels]
    return float(tree_mean(losses))


def per_example_losses(model: MlpModel, data: Dataset) -> np.ndarray:
    z = logits(model, data.features)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(data)), data.labels]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainTrace:
    epoch_losses: list[float] = field(default_factory=list)
    drift_l2: float = 0.0


def train_sgd(
    init: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    stream: str = "train",
    trace: TrainTrace | None = None,
) -> MlpModel:
    """Deterministic minibatch SGD with momentum."""
    theta = init.params.values.copy()
    velocity = np.zeros_like(theta)
    n = len(data)
    model = init
    for epoch in range(cfg.epochs):
        rng = stream_rng(cfg.seed, f"{stream}/shuffle/epoch-{epoch}")
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = data.subset(idx)
            g = batch_grad(model, batch).values
            velocity = cfg.momentum * velocity - cfg.learning_rate * g
            theta = theta + velocity
            if not np.all(np.isfinite(theta)):
                raise TrainingError(f"parameters diverged at epoch {epoch}")
            model = init.with_params(theta)
        loss = mean_loss(model, data)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        if trace is not None:
            trace.epoch_losses.append(loss)
    return model


def personalize(
    model: MlpModel,
    d_p: Dataset,
    cfg: TrainConfig,
    trace: TrainTrace | None = None,
) -> MlpModel:
    """Short-horizon full-parameter SGD; records the parameter drift norm."""
    out = train_sgd(model, d_p, cfg, stream="personalize", trace=trace)
    if trace is not None:
        trace.drift_l2 = float(
            np.linalg.norm(out.params.values - model.params.values)
        )
    return out


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian-mixture class-unlearning instance.

    D is the pretraining corpus, D_f all samples of `forget_class`,
    D_r the rest; D_p draws the retained classes with mean shift
    `shift`.  Held-out twins of each split support evaluation and MIA.
    """

    train: Dataset
    forget: Dataset
    retain: Dataset
    personal: Dataset
    holdout_forget: Dataset
    holdout_personal: Dataset
    forget_class: int


def make_synthetic_task(
    seed: int,
    n_per_class: int = 150,
    dim: int = 8,
    n_classes: int = 4,
    forget_class: int = 3,
    shift: float = 4.0,
    spread: float = 2.0,
    noise: float = 1.6,
    n_personal_per_class: int = 80,
) -> SyntheticTask:
    rng = stream_rng(seed, "synthetic")
    means = rng.normal(0.0, spread, size=(n_classes, dim))

    def draw(cls_list, count, mean_shift, rng_local):
        xs, ys = [], []
        for c in cls_list:
            mu = means[c] + mean_shift
            xs.append(rng_local.normal(mu, noise, size=(count, dim)))
            ys.append(np.full(count, c, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    all_classes = list(range(n_classes))
    retained = [c for c in all_classes if c != forget_class]

    x, y = draw(all_classes, n_per_class, 0.0, stream_rng(seed, "data/train"))
    train = Dataset(features=x, labels=y, name="train")
    mask_f = train.labels == forget_class
    forget = train.subset(mask_f, name="forget")
    retain = train.subset(~mask_f, name="retain")

    shift_vec = np.full(dim, shift) / np.sqrt(dim)
    xp, yp = draw(
        retained, n_personal_per_class, shift_vec, stream_rng(seed, "data/personal")
    )
    personal = Dataset(features=xp, labels=yp, name="personal")

    xhf, yhf = draw(
        [forget_class], n_per_class, 0.0, stream_rng(seed, "data/holdout-forget")
    )
    holdout_forget = Dataset(features=xhf, labels=yhf, name="holdout-forget")
    xhp, yhp = draw(
        retained, n_personal_per_class, shift_vec,
        stream_rng(seed, "data/holdout-personal"),
    )
    holdout_personal = Dataset(
        features=xhp, labels=yhp, name="holdout-personal"
    )
    return SyntheticTask(
        train=train,
        forget=forget,
        retain=retain,
        personal=personal,
        holdout_forget=holdout_forget,
        holdout_personal=holdout_personal,
        forget_class=forget_class,
    )
