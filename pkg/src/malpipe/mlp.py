"""Two-hidden-layer perceptron with a feature-wise attention layer.

Forward pass::

    h1 = act(x W1 + b1)            (dropout in training)
    h2 = act(h1 W2 + b2)           (dropout in training)
    a  = softmax(tanh(h2 Wa + ba)) (row-wise, over features)
    z  = h2 * a                    (the extracted representation)
    p  = softmax(z Wo + bo)

Training minimises class-weighted cross-entropy plus L1/L2 penalties on the
weight matrices with momentum SGD under a cosine schedule with warm
restarts, and keeps the parameters of the best validation epoch.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError
from .numerics import ACTIVATIONS, activate, activate_grad, make_rng, softmax_rows

PROB_CLAMP = 1e-12
IMPROVEMENT_EPS = 1e-6
WEIGHT_NAMES = ("W1", "W2", "Wa", "Wo")
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wa", "ba", "Wo", "bo")


@dataclass
class MlpConfig:
    hidden: tuple = (512, 256)
    activation: str = "relu"
    l1: float = 1e-5
    l2: float = 1e-4
    dropout: tuple = (0.2, 0.2)
    lr_max: float = 1e-2
    lr_min: float = 1e-5
    t0: int = 10
    t_mult: int = 2
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.dropout = tuple(float(p) for p in self.dropout)
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"need two hidden sizes >= 1, got {self.hidden}")
        if len(self.dropout) != 2 or not all(0.0 <= p < 1.0 for p in self.dropout):
            raise ConfigError(f"need two dropout rates in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.lr_min <= self.lr_max:
            raise ConfigError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if self.t0 < 1 or self.t_mult < 1:
            raise ConfigError("t0 and t_mult must be >= 1")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("regularisation strengths must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dropout"] = list(self.dropout)
        return d


# ---------------------------------------------------------------------------
# learning-rate schedule


@dataclass
class LrSchedule:
    lr_min: float
    lr_max: float
    t0: int = 10
    t_mult: int = 2
    t_cur: int = 0
    t_max: int = field(default=0)

    def __post_init__(self):
        if self.t_max == 0:
            self.t_max = self.t0

    def current(self):
        return lr_at(self, self.t_cur, self.t_max)

    def step(self):
        """Advance one epoch; restart the cycle when it is exhausted."""
        self.t_cur += 1
        if self.t_cur >= self.t_max:
            self.t_cur = 0
            self.t_max *= self.t_mult


def lr_at(schedule, t_cur, t_max):
    if not 0 <= t_cur <= t_max:
        raise ConfigError(f"T_cur={t_cur} outside [0, {t_max}]")
    w = 0.5 * (1.0 + math.cos(math.pi * t_cur / t_max))
    # blend form keeps both endpoints exact; the clamp absorbs a last-ulp overshoot
    lr = schedule.lr_min * (1.0 - w) + schedule.lr_max * w
    return min(max(lr, schedule.lr_min), schedule.lr_max)


# ---------------------------------------------------------------------------
# model


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_csv(self):
        lines = ["epoch,lr,train_loss,train_acc,val_loss,val_acc"]
        for r in self.epochs:
            lines.append(
                ",".join(
                    [str(r["epoch"])]
                    + [repr(float(r[k])) for k in ("lr", "train_loss", "train_acc", "val_loss", "val_acc")]
                )
            )
        return "\n".join(lines) + "\n"


@dataclass
class MlpModel:
    params: dict
    config: MlpConfig
    report: TrainReport = field(default_factory=TrainReport)

    def __post_init__(self):
        p = self.params
        h2 = p["W2"].shape[1]
        if p["Wa"].shape != (h2, h2) or p["ba"].shape != (h2,):
            raise ShapeError(f"attention parameters must be {h2}x{h2} and {h2}")
        if p["W1"].shape[1] != p["W2"].shape[0] or p["Wo"].shape[0] != h2:
            raise ShapeError("layer widths do not chain")

    @property
    def n_inputs(self):
        return self.params["W1"].shape[0]

    @property
    def n_classes(self):
        return self.params["Wo"].shape[1]

    @property
    def representation_size(self):
        return self.params["Wa"].shape[0]

    def predict_proba(self, x):
        return forward(self, x, train=False)[0]

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)

    def extract(self, x):
        return extract_representation(self, x)


def _init_matrix(rng, fan_in, fan_out, activation):
    if activation == "tanh":
        limit = math.sqrt(6.0 / (fan_in + fan_out))
    else:
        limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(config, n_inputs, n_classes, rng=None):
    rng = make_rng(config.seed) if rng is None else rng
    h1, h2 = config.hidden
    params = {
        "W1": _init_matrix(rng, n_inputs, h1, config.activation),
        "b1": np.zeros(h1),
        "W2": _init_matrix(rng, h1, h2, config.activation),
        "b2": np.zeros(h2),
        "Wa": np.zeros((h2, h2)),
        "ba": np.zeros(h2),
        # untrained attention is uniform, shrinking z to h / h2; the head's
        # init undoes that factor so early gradients are not starved
        "Wo": h2 * _init_matrix(rng, h2, n_classes, "tanh"),
        "bo": np.zeros(n_classes),
    }
    return MlpModel(params, config)


def attention_forward(h, wa, ba):
    """Return ``(a, z)`` with ``a = softmax(tanh(h Wa + ba))`` and ``z = h * a``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or wa.shape != (h.shape[1], h.shape[1]):
        raise ShapeError(f"attention expects N x {wa.shape[0]} input, got {h.shape}")
    a = softmax_rows(np.tanh(h @ wa + ba))
    return a, h * a


def forward(model, x, train=False, rng=None):
    """Class probabilities and a cache of intermediates for :func:`backward`."""
    p = model.params
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"expected input width {model.n_inputs}, got shape {x.shape}")
    cache = {"x": x}
    h = x
    for layer, (w, b, rate) in enumerate(((p["W1"], p["b1"], cfg.dropout[0]), (p["W2"], p["b2"], cfg.dropout[1])), 1):
        pre = h @ w + b
        post = activate(cfg.activation, pre)
        mask = None
        if train and rate > 0.0:
            # inverted dropout keeps the expected activation unchanged
            mask = (rng.random(post.shape) >= rate) / (1.0 - rate)
            post = post * mask
        cache[f"pre{layer}"] = pre
        cache[f"h{layer}"] = post
        cache[f"mask{layer}"] = mask
        h = post
    e = np.tanh(h @ p["Wa"] + p["ba"])
    a = softmax_rows(e)
    z = h * a
    probs = softmax_rows(z @ p["Wo"] + p["bo"])
    cache.update(e=e, a=a, z=z, probs=probs)
    return probs, cache


def _sample_weights(y, class_weights, n_classes):
    if class_weights is None:
        return np.ones(y.shape[0])
    return np.asarray(class_weights, dtype=np.float64)[y]


def loss(probs, y, class_weights, model, l1, l2):
    y = np.asarray(y, dtype=np.int64)
    w = _sample_weights(y, class_weights, probs.shape[1])
    picked = np.maximum(probs[np.arange(y.shape[0]), y], PROB_CLAMP)
    data = float(np.sum(w * -np.log(picked)) / np.sum(w))
    reg = 0.0
    for name in WEIGHT_NAMES:
        wmat = model.params[name]
        if l1:
            reg += l1 * float(np.sum(np.abs(wmat)))
        if l2:
            reg += l2 * float(np.sum(wmat * wmat))
    return data + reg


def backward(model, cache, y, class_weights, l1, l2):
    """Gradients of :func:`loss` with respect to every parameter."""
    p = model.params
    act = model.config.activation
    y = np.asarray(y, dtype=np.int64)
    probs = cache["probs"]
    w = _sample_weights(y, class_weights, probs.shape[1])
    g = probs.copy()
    g[np.arange(y.shape[0]), y] -= 1.0
    g *= (w / np.sum(w))[:, None]

    grads = {}
    z, a, e, h2 = cache["z"], cache["a"], cache["e"], cache["h2"]
    grads["Wo"] = z.T @ g
    grads["bo"] = g.sum(axis=0)
    dz = g @ p["Wo"].T
    dh = dz * a
    da = dz * h2
    de = a * (da - np.sum(da * a, axis=1, keepdims=True))
    de_pre = de * (1.0 - e * e)
    grads["Wa"] = h2.T @ de_pre
    grads["ba"] = de_pre.sum(axis=0)
    dh = dh + de_pre @ p["Wa"].T

    for layer, below in ((2, cache["h1"]), (1, cache["x"])):
        if cache[f"mask{layer}"] is not None:
            dh = dh * cache[f"mask{layer}"]
        post = activate(act, cache[f"pre{layer}"])
        dpre = dh * activate_grad(act, cache[f"pre{layer}"], post)
        grads[f"W{layer}"] = below.T @ dpre
        grads[f"b{layer}"] = dpre.sum(axis=0)
        if layer > 1:
            dh = dpre @ p[f"W{layer}"].T

    for name in WEIGHT_NAMES:
        wmat = p[name]
        if l1:
            grads[name] = grads[name] + l1 * np.sign(wmat)
        if l2:
            grads[name] = grads[name] + 2.0 * l2 * wmat
    return grads


def extract_representation(model, x):
    return forward(model, x, train=False)[1]["z"]


# ---------------------------------------------------------------------------
# training


def _evaluate(model, x, y, class_weights):
    probs, _ = forward(model, x, train=False)
    cfg = model.config
    value = loss(probs, y, class_weights, model, cfg.l1, cfg.l2)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return value, acc


def train(config, x_train, y_train, x_val, y_val, n_classes=None, class_weights=None, on_epoch=None):
    """Fit a model; returns ``(model, report)``.

    ``on_epoch(epoch, record)`` is called after every epoch and may raise to
    abort (used for trial pruning).
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if x_val.shape[0] == 0:
        raise ConfigError("validation set must not be empty")
    if x_train.shape[1] != x_val.shape[1]:
        raise ShapeError(f"train width {x_train.shape[1]} != validation width {x_val.shape[1]}")
    if n_classes is None:
        n_classes = int(max(y_train.max(), y_val.max())) + 1
    rng = make_rng(config.seed)
    model = init_model(config, x_train.shape[1], n_classes, rng)
    params = model.params
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    schedule = LrSchedule(config.lr_min, config.lr_max, config.t0, config.t_mult)
    report = TrainReport()
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    bad_epochs = 0
    n = x_train.shape[0]
    for epoch in range(config.max_epochs):
        lr = schedule.current()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, cache = forward(model, x_train[idx], train=True, rng=rng)
            grads = backward(model, cache, y_train[idx], class_weights, config.l1, config.l2)
            for k in PARAM_NAMES:
                velocity[k] = config.momentum * velocity[k] + grads[k]
                params[k] -= lr * velocity[k]
        schedule.step()
        train_loss, train_acc = _evaluate(model, x_train, y_train, class_weights)
        val_loss, val_acc = _evaluate(model, x_val, y_val, class_weights)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "train_acc": train_acc,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        report.epochs.append(record)
        if on_epoch is not None:
            on_epoch(epoch, record)
        if val_loss < best_loss - IMPROVEMENT_EPS:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            report.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                report.stopped_early = True
                break
    model = MlpModel(best_params, config, report)
    return model, report


# ---------------------------------------------------------------------------
# verification


def grad_check(model, x, y, class_weights=None, l1=0.0, l2=0.0, eps=1e-5):
    """Largest relative gap between analytic and central-difference gradients."""
    if any(r > 0 for r in model.config.dropout):
        model = MlpModel(model.params, MlpConfig(**{**model.config.to_dict(), "dropout": (0.0, 0.0)}))
    _, cache = forward(model, x, train=False)
    analytic = backward(model, cache, y, class_weights, l1, l2)
    worst = 0.0
    for name in PARAM_NAMES:
        theta = model.params[name]
        flat = theta.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss(forward(model, x)[0], y, class_weights, model, l1, l2)
            flat[i] = old - eps
            down = loss(forward(model, x)[0], y, class_weights, model, l1, l2)
            flat[i] = old
            fd = (up - down) / (2.0 * eps)
            err = abs(ga[i] - fd) / max(1e-8, abs(ga[i]) + abs(fd))
            worst = max(worst, err)
    return worst
