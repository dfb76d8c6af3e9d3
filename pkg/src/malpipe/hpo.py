"""Seeded random search with median pruning over stratified folds.

Objectives receive a :class:`Trial` and call ``trial.report(step, value)``
after each unit of work; ``report`` raises :class:`TrialPruned` when the
value falls below the median of completed trials at the same step.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp, svm
from .errors import ConfigError
from .numerics import make_rng

DEFAULT_TRIALS = 20
DEFAULT_EPOCHS = 30
DEFAULT_FOLDS = 10
STARTUP_TRIALS = 5


class TrialPruned(Exception):
    pass


@dataclass
class SearchSpace:
    categorical: dict = field(default_factory=dict)
    log_uniform: dict = field(default_factory=dict)
    uniform: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, (lo, hi) in self.log_uniform.items():
            if not 0.0 < lo <= hi:
                raise ConfigError(f"log range {name} needs 0 < lo <= hi, got [{lo}, {hi}]")
        for name, (lo, hi) in self.uniform.items():
            if lo > hi:
                raise ConfigError(f"uniform range {name} has lo > hi")
        for name, choices in self.categorical.items():
            if not choices:
                raise ConfigError(f"categorical {name} has no choices")


def mlp_space(hidden_choices=("512,256", "512,512", "1024,512")):
    return SearchSpace(
        categorical={
            "hidden": list(hidden_choices),
            "activation": ["relu", "tanh", "leaky_relu"],
            "batch_size": [16, 32, 64, 128],
        },
        log_uniform={"l1": (1e-6, 1e-3), "l2": (1e-6, 1e-3), "lr": (1e-5, 1e-2)},
        uniform={"dropout1": (0.1, 0.3), "dropout2": (0.1, 0.3)},
    )


def svm_space():
    return SearchSpace(
        categorical={"kernel": ["linear", "rbf"], "gamma": ["scale", "auto"]},
        log_uniform={"c": (1e-3, 1e3)},
    )


def sample(space, rng):
    """One parameter record; names are drawn in sorted order per group."""
    params = {}
    for name in sorted(space.categorical):
        choices = space.categorical[name]
        params[name] = choices[int(rng.integers(len(choices)))]
    for name in sorted(space.log_uniform):
        lo, hi = space.log_uniform[name]
        u = rng.uniform(math.log(lo), math.log(hi))
        params[name] = lo if lo == hi else float(math.exp(u))
    for name in sorted(space.uniform):
        lo, hi = space.uniform[name]
        u = rng.uniform(lo, hi)
        params[name] = lo if lo == hi else float(u)
    return params


@dataclass
class Trial:
    index: int
    params: dict
    intermediate: dict = field(default_factory=dict)
    value: float | None = None
    status: str = "running"
    error: str | None = None
    wall_time: float = 0.0
    folds: object = None
    seed: int = 0
    _study: object = field(default=None, repr=False)

    def report(self, step, value):
        self.intermediate[int(step)] = float(value)
        if self._study is not None and self._study.should_prune(self, step, value):
            raise TrialPruned(f"trial {self.index} pruned at step {step}")

    def record(self):
        return {
            "index": self.index,
            "params": self.params,
            "status": self.status,
            "score": self.value,
            "steps": [[s, v] for s, v in sorted(self.intermediate.items())],
        }


def prune_decision(completed, step, value, startup=STARTUP_TRIALS):
    """True when ``value`` is strictly below the completed trials' median at ``step``."""
    if len(completed) < startup:
        return False
    prior = [t.intermediate[step] for t in completed if step in t.intermediate]
    if not prior:
        return False
    return value < float(np.median(prior))


@dataclass
class StudyReport:
    trials: list
    best_index: int | None
    seed: int

    @property
    def best(self):
        return None if self.best_index is None else self.trials[self.best_index]

    def to_jsonl(self):
        return "".join(json.dumps(t.record(), sort_keys=True) + "\n" for t in self.trials)


class _Study:
    def __init__(self, pruning, startup):
        self.pruning = pruning
        self.startup = startup
        self.completed = []

    def should_prune(self, trial, step, value):
        return self.pruning and prune_decision(self.completed, step, value, self.startup)


def run_study(objective, space, n_trials=DEFAULT_TRIALS, seed=0, folds=None, pruning=True, startup=STARTUP_TRIALS):
    """Evaluate ``n_trials`` sampled configurations in index order.

    ``objective(trial)`` returns the final score (higher is better). A
    raised :class:`TrialPruned` marks the trial pruned; any other exception
    marks it failed and the study continues.
    """
    rng = make_rng(seed)
    study = _Study(pruning, startup)
    trials = []
    for index in range(n_trials):
        trial = Trial(index, sample(space, rng), folds=folds, seed=int(seed) + index, _study=study)
        start = time.perf_counter()
        try:
            value = float(objective(trial))
        except TrialPruned:
            trial.status = "pruned"
        except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
            trial.status = "failed"
            trial.error = f"{type(exc).__name__}: {exc}"
        else:
            if math.isfinite(value):
                trial.value = value
                trial.status = "complete"
                study.completed.append(trial)
            else:
                trial.status = "failed"
                trial.error = f"non-finite objective {value}"
        trial.wall_time = time.perf_counter() - start
        trial._study = None
        trials.append(trial)
    best = None
    for t in trials:
        if t.status == "complete" and (best is None or t.value > trials[best].value):
            best = t.index
    return StudyReport(trials, best, int(seed))


# ---------------------------------------------------------------------------
# objectives used by the pipeline


def mlp_config_from(base, params, max_epochs=None):
    """Overlay sampled parameters onto a base :class:`mlp.MlpConfig`."""
    cfg = base.to_dict()
    if "hidden" in params:
        cfg["hidden"] = tuple(int(v) for v in str(params["hidden"]).split(","))
    for key in ("activation", "batch_size", "l1", "l2"):
        if key in params:
            cfg[key] = params[key]
    if "lr" in params:
        cfg["lr_max"] = params["lr"]
        cfg["lr_min"] = min(cfg["lr_min"], params["lr"])
    if "dropout1" in params or "dropout2" in params:
        cfg["dropout"] = (params.get("dropout1", cfg["dropout"][0]), params.get("dropout2", cfg["dropout"][1]))
    if max_epochs is not None:
        cfg["max_epochs"] = max_epochs
    return mlp.MlpConfig(**cfg)


def mlp_objective(x, y, n_classes, base, class_weights=None, max_epochs=None):
    """Mean best-epoch validation accuracy over the trial's folds.

    Intermediate step ``fold * max_epochs + epoch`` carries that epoch's
    validation accuracy.
    """

    def objective(trial):
        cfg = mlp_config_from(base, trial.params, max_epochs)
        scores = []
        for fold in range(trial.folds.n_folds):
            tr, va = trial.folds.split(fold)

            def on_epoch(epoch, record, fold=fold):
                trial.report(fold * cfg.max_epochs + epoch, record["val_acc"])

            model, _ = mlp.train(cfg, x[tr], y[tr], x[va], y[va], n_classes, class_weights, on_epoch)
            scores.append(float(np.mean(model.predict(x[va]) == y[va])))
        return float(np.mean(scores))

    return objective


def svm_config_from(base, params):
    cfg = base.to_dict()
    for key in ("c", "kernel", "gamma"):
        if key in params:
            cfg[key] = params[key]
    return svm.SvmConfig(**cfg)


def svm_objective(x, y, n_classes, base):
    """Mean fold accuracy; intermediate step ``fold`` carries the running mean."""

    def objective(trial):
        cfg = svm_config_from(base, trial.params)
        scores = []
        for fold in range(trial.folds.n_folds):
            tr, va = trial.folds.split(fold)
            model = svm.fit_multiclass(x[tr], y[tr], n_classes, cfg)
            pred, _ = svm.predict(model, x[va])
            scores.append(float(np.mean(pred == y[va])))
            trial.report(fold, float(np.mean(scores)))
        return float(np.mean(scores))

    return objective
