import numpy as np
import pytest

from malpipe import dataio, hpo, mlp, svm
from malpipe.errors import ConfigError
from malpipe.numerics import make_rng


class _Done:
    def __init__(self, steps):
        self.intermediate = steps


def test_sample_degenerate_and_log_median():
    space = hpo.SearchSpace(log_uniform={"c": (2.5, 2.5)}, uniform={"p": (0.2, 0.2)})
    rng = make_rng(0)
    for _ in range(5):
        assert hpo.sample(space, rng) == {"c": 2.5, "p": 0.2}
    wide = hpo.SearchSpace(log_uniform={"c": (1e-3, 1e3)})
    rng = make_rng(1)
    draws = [hpo.sample(wide, rng)["c"] for _ in range(10_000)]
    assert 0.5 <= np.median(draws) <= 2.0
    assert min(draws) >= 1e-3 and max(draws) <= 1e3


def test_sample_is_seeded():
    space = hpo.mlp_space()
    a = [hpo.sample(space, make_rng(3)) for _ in range(1)]
    b = [hpo.sample(space, make_rng(3)) for _ in range(1)]
    assert a == b
    params = a[0]
    assert params["activation"] in ("relu", "tanh", "leaky_relu")
    assert 1e-5 <= params["lr"] <= 1e-2 and 0.1 <= params["dropout1"] <= 0.3


def test_space_validation():
    with pytest.raises(ConfigError):
        hpo.SearchSpace(log_uniform={"c": (0.0, 1.0)})
    with pytest.raises(ConfigError):
        hpo.SearchSpace(uniform={"p": (0.3, 0.1)})
    with pytest.raises(ConfigError):
        hpo.SearchSpace(categorical={"k": []})


def test_prune_decision_rules():
    done = [_Done({3: v}) for v in (0.5, 0.6, 0.7, 0.8, 0.9)]
    assert hpo.prune_decision(done[:4], 3, 0.0) is False
    assert hpo.prune_decision(done, 3, 0.6) is True
    assert hpo.prune_decision(done, 3, 0.7) is False
    assert hpo.prune_decision(done, 4, 0.0) is False


def test_constant_objective_picks_first_trial():
    report = hpo.run_study(lambda t: 1.0, hpo.svm_space(), n_trials=6, seed=2)
    assert report.best_index == 0
    assert all(t.status == "complete" for t in report.trials)


def test_identity_objective_replays_sample_stream():
    space = hpo.mlp_space()
    report = hpo.run_study(lambda t: t.params["lr"], space, n_trials=15, seed=9, pruning=False)
    rng = make_rng(9)
    lrs = [hpo.sample(space, rng)["lr"] for _ in range(15)]
    assert report.best_index == int(np.argmax(lrs))
    assert len(report.trials) == 15
    assert report.best.value == max(lrs)


def test_failures_are_recorded():
    def objective(trial):
        if trial.index == 1:
            raise RuntimeError("boom")
        return float(trial.index)

    report = hpo.run_study(objective, hpo.svm_space(), n_trials=3, seed=0)
    assert [t.status for t in report.trials] == ["complete", "failed", "complete"]
    assert "boom" in report.trials[1].error
    assert report.best_index == 2


def test_pruning_marks_trials_and_keeps_best():
    # trial quality decreases with index; later trials fall below the median
    def objective(trial):
        quality = 1.0 - 0.1 * trial.index
        for step in range(3):
            trial.report(step, quality)
        return quality

    report = hpo.run_study(objective, hpo.svm_space(), n_trials=9, seed=0, startup=5)
    statuses = [t.status for t in report.trials]
    assert statuses[:5] == ["complete"] * 5
    assert set(statuses[5:]) == {"pruned"}
    for t in report.trials:
        if t.status == "pruned":
            assert t.intermediate and t.value is None
    assert report.best_index == 0


def test_report_is_byte_stable():
    def objective(trial):
        trial.report(0, trial.params["c"])
        return trial.params["c"]

    a = hpo.run_study(objective, hpo.svm_space(), n_trials=7, seed=4).to_jsonl()
    b = hpo.run_study(objective, hpo.svm_space(), n_trials=7, seed=4).to_jsonl()
    assert a == b
    assert a.count("\n") == 7 and '"steps"' in a and "wall" not in a


def _data():
    spec = dataio.SyntheticSpec([40, 40, 40], informative=3, noise=0, categorical=0, missing_rate=0.0, seed=1)
    _, x, y = dataio.make_synthetic(spec)
    return x, y


def test_svm_objective_runs_on_folds():
    x, y = _data()
    plan = dataio.stratified_folds(y, 3, 0)
    report = hpo.run_study(hpo.svm_objective(x, y, 3, svm.SvmConfig()), hpo.svm_space(), 4, 0, plan)
    done = [t for t in report.trials if t.status == "complete"]
    assert done and all(sorted(t.intermediate) == [0, 1, 2] for t in done)


def test_mlp_objective_and_config_overlay():
    x, y = _data()
    plan = dataio.stratified_folds(y, 2, 0)
    space = hpo.mlp_space(("8,8",))
    base = mlp.MlpConfig(hidden=(8, 8))
    report = hpo.run_study(hpo.mlp_objective(x, y, 3, base, None, max_epochs=3), space, 3, 1, plan)
    best = report.best
    assert best is not None and max(best.intermediate) == 2 * 3 - 1
    cfg = hpo.mlp_config_from(base, best.params)
    assert cfg.hidden == (8, 8) and cfg.lr_max == best.params["lr"]
    assert cfg.dropout == (best.params["dropout1"], best.params["dropout2"])
