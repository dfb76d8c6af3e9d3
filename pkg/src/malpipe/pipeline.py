"""End-to-end orchestration: ingest, preprocess, MLP, LDA, SVM, evaluation.

Every file a run emits is written into a private staging directory and only
moved into the output directory once all stages succeed, so a failed run
leaves nothing behind.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import analysis, bundle as bundle_mod, dataio, hpo, lda, mlp, svm
from .errors import InputError, MalpipeError, PersistenceError
from .numerics import make_rng

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "mlp", "extract", "lda", "svm", "evaluate", "explain", "persist")
BUNDLE_NAME = "model.malpipe"


@dataclass
class PipelineResult:
    bundle: bundle_mod.ModelBundle | None
    reports: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    out_dir: str = ""


def _fmt(v):
    return repr(float(v))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _matrix_csv(prefix_header, prefix_rows, m, name):
    header = list(prefix_header) + [f"{name}_{j:03d}" for j in range(m.shape[1])]
    rows = [list(p) + [_fmt(v) for v in r] for p, r in zip(prefix_rows, m)]
    return _csv_text(header, rows)


def predictions_csv(rows, labels, margins, class_names, unseen=0):
    """Classification records: row index, predicted class, one margin per class."""
    header = ["row", "predicted"] + [f"margin_{c}" for c in class_names]
    body = [[str(int(r)), class_names[int(l)]] + [_fmt(v) for v in m] for r, l, m in zip(rows, labels, margins)]
    if unseen:
        body.append(["#unseen", str(int(unseen))])
    return _csv_text(header, body)


class _Staging:
    """Collects output files in a temporary sibling of the output directory."""

    def __init__(self, out_dir):
        self.out_dir = os.path.abspath(out_dir)
        parent = os.path.dirname(self.out_dir)
        try:
            os.makedirs(parent, exist_ok=True)
            self.path = tempfile.mkdtemp(prefix=".malpipe-staging-", dir=parent)
        except OSError as exc:
            raise PersistenceError(f"cannot create staging area next to {self.out_dir}: {exc}") from exc
        self.names = []

    def file(self, name):
        self.names.append(name)
        return os.path.join(self.path, name)

    def write(self, name, text):
        with open(self.file(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    def commit(self):
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            for name in self.names:
                os.replace(os.path.join(self.path, name), os.path.join(self.out_dir, name))
        except OSError as exc:
            for name in self.names:
                target = os.path.join(self.out_dir, name)
                if os.path.exists(target):
                    os.unlink(target)
            raise PersistenceError(f"cannot move outputs into {self.out_dir}: {exc}") from exc
        finally:
            self.discard()
        return [os.path.join(self.out_dir, n) for n in self.names]

    def discard(self):
        shutil.rmtree(self.path, ignore_errors=True)


class _Stage:
    """Context manager that prefixes library errors with the failing stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, MalpipeError) and not getattr(exc, "stage", None):
            wrapped = type(exc)(f"stage {self.name}: {exc}")
            wrapped.stage = self.name
            raise wrapped from exc
        return False


def load_input(cfg):
    if cfg.data.synthetic is not None:
        table, _, _ = dataio.make_synthetic(cfg.data.synthetic)
        return table
    return dataio.load_table(cfg.data.path, cfg.data.label_column, cfg.data.missing_markers)


def _fit_mlp(cfg, x_tr, y_tr, n_classes, weights, staging):
    base = cfg.mlp
    if cfg.hpo.mlp:
        plan = dataio.stratified_folds(y_tr, cfg.hpo.folds, cfg.seed)
        objective = hpo.mlp_objective(x_tr, y_tr, n_classes, base, weights, cfg.hpo.epochs)
        study = hpo.run_study(objective, hpo.mlp_space(), cfg.hpo.trials, cfg.seed, plan, cfg.hpo.pruning)
        staging.write("hpo_mlp.jsonl", study.to_jsonl())
        if study.best is not None:
            base = hpo.mlp_config_from(base, study.best.params)
        else:
            log.warning("no MLP trial completed; keeping the configured hyperparameters")
    fit_idx, val_idx = dataio.stratified_split(y_tr, cfg.preprocess.val_fraction, cfg.seed + 1)
    if val_idx.size == 0:
        raise InputError("training split too small to carve a validation set")
    model, report = mlp.train(base, x_tr[fit_idx], y_tr[fit_idx], x_tr[val_idx], y_tr[val_idx], n_classes, weights)
    staging.write("mlp_training.csv", report.to_csv())
    return model


def _fit_svm(cfg, f_tr, y_tr, n_classes, class_names, staging):
    base = cfg.svm
    if cfg.hpo.svm:
        plan = dataio.stratified_folds(y_tr, cfg.hpo.folds, cfg.seed)
        objective = hpo.svm_objective(f_tr, y_tr, n_classes, base)
        study = hpo.run_study(objective, hpo.svm_space(), cfg.hpo.trials, cfg.seed, plan, cfg.hpo.pruning)
        staging.write("hpo_svm.jsonl", study.to_jsonl())
        if study.best is not None:
            base = hpo.svm_config_from(base, study.best.params)
        else:
            log.warning("no SVM trial completed; keeping the configured hyperparameters")
    return svm.fit_multiclass(f_tr, y_tr, n_classes, base, class_names)


def _emit_eval(staging, tag, report):
    staging.write(f"{tag}_report.json", report.to_json())
    analysis.export_plot_data("confusion", report.confusion, staging.file(f"confusion_{tag}.csv"))
    analysis.export_plot_data("pr", report.curves, staging.file(f"pr_{tag}.csv"))


def run_pipeline(cfg, stop_after="persist"):
    """Run every stage up to ``stop_after`` and publish the outputs into ``cfg.out``."""
    if stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}")
    last = STAGES.index(stop_after)
    staging = _Staging(cfg.out)
    result = PipelineResult(None, out_dir=staging.out_dir)
    try:
        _run(cfg, last, staging, result)
        result.files = staging.commit()
    except BaseException:
        staging.discard()
        raise
    return result


def _run(cfg, last, staging, result):
    def done(stage):
        return STAGES.index(stage) >= last

    with _Stage("ingest"):
        table = load_input(cfg)
        if cfg.data.synthetic is not None and done("ingest"):
            dataio.write_table(table, staging.file("data.csv"))
    if done("ingest"):
        return

    with _Stage("preprocess"):
        prep, data = dataio.fit_preprocess(table, cfg.preprocess.k)
        tr, te = dataio.stratified_split(data.y, cfg.preprocess.test_fraction, cfg.seed)
        split = np.full(data.y.size, "train", dtype=object)
        split[te] = "test"
        staging.write("split.csv", _csv_text(["row", "partition"], [[str(i), s] for i, s in enumerate(split)]))
        rank = {int(j): r for r, j in enumerate(prep.selected)}
        staging.write("feature_scores.csv", _csv_text(
            ["feature", "chi2", "selected_rank"],
            [[n, _fmt(s), str(rank.get(j, ""))] for j, (n, s) in enumerate(zip(prep.feature_columns, prep.scores))],
        ))
        if done("preprocess"):
            staging.write("preprocessed.csv", _matrix_csv(
                ["row", "label"], [(str(i), prep.class_names[c]) for i, c in enumerate(data.y)], data.x, "x"))
            return
    n_classes = data.n_classes
    x_tr, y_tr, x_te, y_te = data.x[tr], data.y[tr], data.x[te], data.y[te]

    with _Stage("mlp"):
        weights = dataio.class_weights(y_tr, n_classes)
        net = _fit_mlp(cfg, x_tr, y_tr, n_classes, weights, staging)
    if done("mlp"):
        return

    with _Stage("extract"):
        z_tr, z_te = net.extract(x_tr), net.extract(x_te)
        if done("extract"):
            z = net.extract(data.x)
            staging.write("representation.csv", _matrix_csv(
                ["row", "label"], [(str(i), prep.class_names[c]) for i, c in enumerate(data.y)], z, "z"))
            return

    with _Stage("lda"):
        proj = lda.fit(z_tr, y_tr, n_classes, cfg.lda.k, cfg.lda.shrinkage)
        f_tr, f_te = proj.transform(z_tr), proj.transform(z_te)
        staging.write("lda.json", json.dumps({
            "k": proj.k,
            "shrinkage": proj.shrinkage,
            "eigenvalues": [float(v) for v in proj.eigenvalues[:proj.k]],
        }, indent=2, sort_keys=True) + "\n")
        if done("lda"):
            f = proj.transform(net.extract(data.x))
            staging.write("lda_features.csv", _matrix_csv(
                ["row", "label"], [(str(i), prep.class_names[c]) for i, c in enumerate(data.y)], f, "lda"))
            return

    with _Stage("svm"):
        machine = _fit_svm(cfg, f_tr, y_tr, n_classes, prep.class_names, staging)
        result.bundle = bundle_mod.ModelBundle(prep, net, proj, machine, cfg.snapshot())
        result.bundle.validate()
    if done("svm"):
        return

    with _Stage("evaluate"):
        probs = net.predict_proba(x_te)
        mlp_eval = analysis.evaluate(y_te, np.argmax(probs, axis=1), probs, prep.class_names)
        labels, margins = machine.predict(f_te)
        svm_eval = analysis.evaluate(y_te, labels, margins, prep.class_names)
        _emit_eval(staging, "mlp", mlp_eval)
        _emit_eval(staging, "svm", svm_eval)
        staging.write("test_predictions.csv", predictions_csv(te, labels, margins, prep.class_names))
        result.reports = {"mlp": mlp_eval, "svm": svm_eval}
    if done("evaluate"):
        return

    with _Stage("explain"):
        n_explain = min(cfg.explain.instances, y_te.size)
        if n_explain:
            pick = np.sort(make_rng(cfg.seed).choice(y_te.size, size=n_explain, replace=False))
            names = [f"lda_{j:02d}" for j in range(proj.k)]
            explanations = analysis.explain_svm(machine, f_te[pick], f_tr.mean(axis=0), names)
            write_explanations(staging, explanations)
            result.reports["explanations"] = explanations

    with _Stage("persist"):
        bundle_mod.persist(result.bundle, staging.file(BUNDLE_NAME))
        summary = {
            "mlp_accuracy": mlp_eval.scores["accuracy"],
            "svm_accuracy": svm_eval.scores["accuracy"],
            "n_train": int(tr.size),
            "n_test": int(te.size),
            "n_classes": n_classes,
            "class_names": list(prep.class_names),
            "selected_features": prep.selected_names,
            "mlp_best_epoch": net.report.best_epoch,
            "config": cfg.snapshot(),
        }
        staging.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_explanations(staging, explanations):
    analysis.export_plot_data("beeswarm", explanations, staging.file("shap_beeswarm.csv"))
    analysis.export_plot_data("bar", analysis.global_importance(explanations), staging.file("shap_bar.csv"))
    analysis.export_plot_data("waterfall", explanations[0], staging.file("shap_waterfall.csv"))


# ---------------------------------------------------------------------------
# applying a stored bundle


def _read_for_bundle(model, path, missing_markers=dataio.DEFAULT_MISSING):
    table = dataio.load_table(path, None, missing_markers)
    if model.preprocess.label_column in table.column_names:
        table = dataclasses.replace(table, label_column=model.preprocess.label_column)
    return table


def classify(bundle_path, input_path, output_path):
    """Label every row of a feature table with a stored bundle."""
    model = bundle_mod.restore(bundle_path)
    table = _read_for_bundle(model, input_path)
    if table.n_rows == 0:
        labels, margins, unseen = np.zeros(0, dtype=np.int64), np.zeros((0, len(model.svm.machines))), 0
    else:
        labels, margins, unseen = model.classify(table)
    text = predictions_csv(range(table.n_rows), labels, margins, model.svm.class_names, unseen)
    if unseen:
        log.warning("%d unseen categorical values mapped to the reserved index", unseen)
    try:
        with open(output_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise PersistenceError(f"cannot write {output_path}: {exc}") from exc
    return labels, margins, unseen


def evaluate_bundle(bundle_path, input_path, out_dir):
    """Score a stored bundle against a labelled table; emits SVM and MLP reports."""
    model = bundle_mod.restore(bundle_path)
    table = _read_for_bundle(model, input_path)
    data, _ = model.preprocess.apply(table)
    staging = _Staging(out_dir)
    try:
        probs = model.mlp.predict_proba(data.x)
        mlp_eval = analysis.evaluate(data.y, np.argmax(probs, axis=1), probs, data.class_names)
        labels, margins = model.svm.predict(model.lda.transform(model.mlp.extract(data.x)))
        svm_eval = analysis.evaluate(data.y, labels, margins, data.class_names)
        _emit_eval(staging, "mlp", mlp_eval)
        _emit_eval(staging, "svm", svm_eval)
        files = staging.commit()
    except BaseException:
        staging.discard()
        raise
    return {"mlp": mlp_eval, "svm": svm_eval}, files


def explain_bundle(bundle_path, input_path, out_dir, instances=200, seed=0):
    """Exact Shapley attributions of the SVM margin for a seeded subset of rows.

    The baseline is the stored LDA projection of the training mean.
    """
    model = bundle_mod.restore(bundle_path)
    table = _read_for_bundle(model, input_path)
    x, _ = model.preprocess.transform_features(table)
    f = model.lda.transform(model.mlp.extract(x))
    if f.shape[0] == 0:
        raise InputError("no rows to explain")
    n = min(instances, f.shape[0])
    pick = np.sort(make_rng(seed).choice(f.shape[0], size=n, replace=False))
    baseline = model.lda.transform(model.lda.mean[None, :])[0]
    names = [f"lda_{j:02d}" for j in range(model.lda.k)]
    staging = _Staging(out_dir)
    try:
        explanations = analysis.explain_svm(model.svm, f[pick], baseline, names)
        write_explanations(staging, explanations)
        files = staging.commit()
    except BaseException:
        staging.discard()
        raise
    return explanations, files
