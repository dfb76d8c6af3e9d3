"""Classification metrics, precision-recall curves and Shapley attributions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, PersistenceError
from .numerics import make_rng

MAX_EXACT_FEATURES = 16
PLOT_KINDS = ("beeswarm", "waterfall", "bar", "pr", "confusion")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true, predicted]
    class_names: list

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(y_true, y_pred, n_classes, class_names=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InputError(f"{y_true.size} true labels but {y_pred.size} predictions")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"{name} label outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
    return ConfusionMatrix(counts, names)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics(cm):
    """Per-class precision/recall/F1/support plus accuracy and averages."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    precision = _safe_div(tp, counts.sum(axis=0))
    recall = _safe_div(tp, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    total = counts.sum()
    accuracy = float(tp.sum() / total) if total > 0 else 0.0
    out = {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support.astype(np.int64),
        "accuracy": accuracy,
        "macro": {k: float(np.mean(v)) for k, v in (("precision", precision), ("recall", recall), ("f1", f1))},
    }
    if total > 0:
        out["weighted"] = {
            k: float(np.sum(support * v) / total) for k, v in (("precision", precision), ("recall", recall), ("f1", f1))
        }
    else:
        out["weighted"] = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    return out


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    average_precision: float


def pr_curve(scores, truth):
    """Sweep descending unique thresholds; ties at a threshold enter together."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise InputError("precision-recall curve needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = tp[ends].astype(np.float64)
    fp = fp[ends].astype(np.float64)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev = np.r_[0.0, recall[:-1]]
    ap = float(np.sum((recall - prev) * precision))
    return PrCurve(s[ends], recall, precision, ap)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    scores: dict
    curves: dict = field(default_factory=dict)

    def to_dict(self):
        names = self.confusion.class_names
        per_class = []
        for c, name in enumerate(names):
            curve = self.curves.get(name)
            per_class.append(
                {
                    "class": name,
                    "precision": float(self.scores["precision"][c]),
                    "recall": float(self.scores["recall"][c]),
                    "f1": float(self.scores["f1"][c]),
                    "support": int(self.scores["support"][c]),
                    "average_precision": None if curve is None else curve.average_precision,
                }
            )
        return {
            "accuracy": self.scores["accuracy"],
            "macro": self.scores["macro"],
            "weighted": self.scores["weighted"],
            "per_class": per_class,
            "confusion": self.confusion.counts.tolist(),
            "n_samples": self.confusion.total,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(y_true, y_pred, scores, class_names):
    """Full report; ``scores`` (N x C) ranks samples for the per-class curves."""
    n_classes = len(class_names)
    cm = confusion(y_true, y_pred, n_classes, class_names)
    curves = {}
    if scores is not None:
        y_true = np.asarray(y_true)
        for c, name in enumerate(class_names):
            if np.any(y_true == c):
                curves[name] = pr_curve(scores[:, c], y_true == c)
    return EvalReport(cm, metrics(cm), curves)


# ---------------------------------------------------------------------------
# Shapley values


@dataclass
class Explanation:
    instance: np.ndarray
    baseline: np.ndarray
    phi: np.ndarray
    base_value: float
    output_value: float
    feature_names: list | None = None


def _coalition_points(baseline, instance):
    d = instance.size
    masks = np.arange(1 << d)
    bits = ((masks[:, None] >> np.arange(d)[None, :]) & 1).astype(bool)
    return np.where(bits, instance[None, :], baseline[None, :])


def _as_vectors(baseline, instance):
    baseline = np.asarray(baseline, dtype=np.float64).ravel()
    instance = np.asarray(instance, dtype=np.float64).ravel()
    if baseline.shape != instance.shape:
        raise InputError(f"baseline width {baseline.size} != instance width {instance.size}")
    return baseline, instance


def shapley_exact(f, baseline, instance):
    """Exact Shapley values by enumerating all ``2**d`` coalitions.

    ``f`` maps an ``(n, d)`` batch to ``n`` outputs. Absent features take
    baseline values.
    """
    baseline, instance = _as_vectors(baseline, instance)
    d = instance.size
    if d > MAX_EXACT_FEATURES:
        raise ConfigError(f"{d} features is too many for exact enumeration (max {MAX_EXACT_FEATURES}); use shapley_sample")
    if d == 0:
        return np.zeros(0)
    values = np.ascontiguousarray(np.asarray(f(_coalition_points(baseline, instance)), dtype=np.float64).ravel())
    return kernels.shapley_accumulate(values, kernels.shapley_weights(d), d)


def shapley_sample(f, baseline, instance, n_permutations=1000, seed=0):
    """Monte-Carlo Shapley values over seeded random feature orderings."""
    baseline, instance = _as_vectors(baseline, instance)
    if n_permutations < 1:
        raise ConfigError("need at least one permutation")
    d = instance.size
    rng = make_rng(seed)
    perms = np.stack([rng.permutation(d) for _ in range(n_permutations)])
    points = np.empty((n_permutations, d + 1, d))
    for p, perm in enumerate(perms):
        row = baseline.copy()
        points[p, 0] = row
        for k, j in enumerate(perm):
            row[j] = instance[j]
            points[p, k + 1] = row
    values = np.asarray(f(points.reshape(-1, d)), dtype=np.float64).reshape(n_permutations, d + 1)
    gains = np.diff(values, axis=1)
    phi = np.zeros(d)
    for p, perm in enumerate(perms):
        phi[perm] += gains[p]
    return phi / n_permutations


def explain(f, baseline, instance, feature_names=None):
    baseline, instance = _as_vectors(baseline, instance)
    phi = shapley_exact(f, baseline, instance)
    ends = np.asarray(f(np.stack([baseline, instance])), dtype=np.float64).ravel()
    return Explanation(instance, baseline, phi, float(ends[0]), float(ends[1]), feature_names)


def global_importance(explanations, feature_names=None):
    """``[(feature, mean |phi|), ...]`` sorted descending, ties by index."""
    if len(explanations) == 0:
        raise InputError("no explanations to aggregate")
    phis = np.stack([e.phi if isinstance(e, Explanation) else np.asarray(e, dtype=np.float64) for e in explanations])
    mean_abs = np.mean(np.abs(phis), axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    if feature_names is None and isinstance(explanations[0], Explanation):
        feature_names = explanations[0].feature_names
    names = feature_names or [f"f{j}" for j in range(mean_abs.size)]
    return [(names[j], float(mean_abs[j])) for j in order]


def svm_margin_explainer(model, cls):
    """Batch function giving the margin of one-vs-rest machine ``cls``."""
    machine = model.machines[cls]
    return lambda points: machine.decision(points)


def explain_svm(model, x, baseline, feature_names=None):
    """Explain each row of ``x`` through the margin of its predicted class."""
    labels, _ = model.predict(x)
    return [
        explain(svm_margin_explainer(model, int(c)), baseline, row, feature_names)
        for row, c in zip(np.atleast_2d(x), labels)
    ]


# ---------------------------------------------------------------------------
# plot data export


def _num(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _waterfall_rows(e):
    names = e.feature_names or [f"f{j}" for j in range(e.phi.size)]
    order = np.argsort(-np.abs(e.phi), kind="stable")
    running = e.base_value
    rows = []
    for j in order:
        running += e.phi[j]
        rows.append([names[j], _num(e.phi[j]), _num(running)])
    return ["feature", "phi", "cumulative"], rows


def export_plot_data(kind, payload, path):
    """Write one plot's data as CSV with a fixed header."""
    if kind == "beeswarm":
        header = ["instance", "feature", "phi", "value"]
        rows = []
        for i, e in enumerate(payload):
            names = e.feature_names or [f"f{j}" for j in range(e.phi.size)]
            for j, name in enumerate(names):
                rows.append([str(i), name, _num(e.phi[j]), _num(e.instance[j])])
    elif kind == "waterfall":
        header, rows = _waterfall_rows(payload)
    elif kind == "bar":
        header = ["rank", "feature", "mean_abs_phi"]
        rows = [[str(r), name, _num(v)] for r, (name, v) in enumerate(payload)]
    elif kind == "pr":
        header = ["class", "threshold", "recall", "precision"]
        rows = []
        for name, curve in payload.items():
            for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
                rows.append([name, _num(t), _num(r), _num(p)])
    elif kind == "confusion":
        header = ["true\\predicted"] + list(payload.class_names)
        rows = [[name] + [str(int(v)) for v in payload.counts[i]] for i, name in enumerate(payload.class_names)]
    else:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path
