import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from malpipe import dataio, mlp
from malpipe.errors import ConfigError, ShapeError, TrainingError


def tiny_model(activation="relu", seed=0, sizes=(10, 8, 8, 5), dropout=(0.0, 0.0)):
    cfg = mlp.MlpConfig(hidden=sizes[1:3], activation=activation, dropout=dropout, seed=seed)
    model = mlp.init_model(cfg, sizes[0], sizes[3])
    r = np.random.default_rng(seed + 100)
    # non-zero attention parameters so their gradients are exercised
    model.params["Wa"][:] = r.normal(scale=0.3, size=model.params["Wa"].shape)
    model.params["ba"][:] = r.normal(scale=0.1, size=model.params["ba"].shape)
    for b in ("b1", "b2", "bo"):
        model.params[b][:] = r.normal(scale=0.1, size=model.params[b].shape)
    return model


def test_attention_zero_parameters_is_uniform():
    h = np.array([[1.0, -2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]])
    a, z = mlp.attention_forward(h, np.zeros((4, 4)), np.zeros(4))
    assert np.array_equal(a, np.full((2, 4), 0.25))
    assert np.array_equal(z, h / 4)
    with pytest.raises(ShapeError):
        mlp.attention_forward(h, np.zeros((3, 3)), np.zeros(3))


@given(st.integers(0, 2**32 - 1))
def test_attention_matches_direct_recomputation(seed):
    r = np.random.default_rng(seed)
    h, wa, ba = r.normal(size=(7, 5)), r.normal(size=(5, 5)), r.normal(size=5)
    a, z = mlp.attention_forward(h, wa, ba)
    e = np.tanh(h @ wa + ba)
    ref = np.exp(e) / np.exp(e).sum(axis=1, keepdims=True)
    assert np.allclose(a, ref, atol=1e-14)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(z, h * a)


def test_relu_cutoff_single_unit():
    cfg = mlp.MlpConfig(hidden=(1, 1), dropout=(0.0, 0.0))
    model = mlp.init_model(cfg, 1, 2)
    model.params["W1"][:] = 1.0
    model.params["b1"][:] = -0.5
    _, cache = mlp.forward(model, np.array([[0.2]]))
    assert cache["h1"][0, 0] == 0.0


def test_forward_eval_is_deterministic_and_normalised():
    model = tiny_model()
    x = np.random.default_rng(1).normal(size=(20, 10))
    p1, _ = mlp.forward(model, x)
    p2, _ = mlp.forward(model, x)
    assert np.array_equal(p1, p2)
    assert np.allclose(p1.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ShapeError):
        mlp.forward(model, np.ones((2, 3)))


def test_dropout_is_inverted_and_train_only():
    model = tiny_model(dropout=(0.5, 0.5))
    x = np.random.default_rng(2).normal(size=(4, 10))
    _, cache = mlp.forward(model, x, train=True, rng=np.random.default_rng(0))
    mask = cache["mask1"]
    assert set(np.unique(mask)) <= {0.0, 2.0}
    _, cache = mlp.forward(model, x, train=False)
    assert cache["mask1"] is None


def test_loss_examples():
    model = tiny_model()
    probs = np.eye(5)[[0, 3, 4]]
    assert mlp.loss(probs, [0, 3, 4], None, model, 0.0, 0.0) == 0.0
    uniform = np.full((4, 5), 0.2)
    assert mlp.loss(uniform, [0, 1, 2, 3], None, model, 0.0, 0.0) == pytest.approx(math.log(5), abs=1e-15)


@pytest.mark.parametrize("activation", ["relu", "tanh", "leaky_relu"])
@pytest.mark.parametrize("weighted", [False, True])
def test_gradients_match_finite_differences(activation, weighted):
    model = tiny_model(activation, seed=3)
    r = np.random.default_rng(4)
    x = r.normal(size=(5, 10))
    y = r.integers(0, 5, 5)
    w = np.array([1.0, 2.0, 0.5, 3.0, 1.5]) if weighted else None
    assert mlp.grad_check(model, x, y, w, l1=1e-4, l2=1e-4) <= 1e-4


def test_integer_weights_equal_replication():
    model = tiny_model("tanh", seed=8)
    r = np.random.default_rng(9)
    x = r.normal(size=(6, 10))
    y = np.array([0, 1, 2, 3, 4, 1])
    cw = np.array([1.0, 3.0, 2.0, 1.0, 4.0])
    probs, cache = mlp.forward(model, x)
    weighted_loss = mlp.loss(probs, y, cw, model, 1e-4, 1e-4)
    weighted_grads = mlp.backward(model, cache, y, cw, 1e-4, 1e-4)
    reps = cw[y].astype(int)
    xr, yr = np.repeat(x, reps, axis=0), np.repeat(y, reps)
    probs_r, cache_r = mlp.forward(model, xr)
    assert mlp.loss(probs_r, yr, None, model, 1e-4, 1e-4) == pytest.approx(weighted_loss, abs=1e-10)
    rep_grads = mlp.backward(model, cache_r, yr, None, 1e-4, 1e-4)
    for name in mlp.PARAM_NAMES:
        assert np.allclose(weighted_grads[name], rep_grads[name], rtol=0, atol=1e-10), name


def test_schedule_endpoints_and_restart():
    s = mlp.LrSchedule(1e-5, 1e-2, t0=10, t_mult=2)
    assert mlp.lr_at(s, 0, 10) == 1e-2
    assert mlp.lr_at(s, 10, 10) == 1e-5
    assert mlp.lr_at(s, 5, 10) == 0.5 * (1e-5 + 1e-2)
    seen = []
    for _ in range(10):
        seen.append(s.current())
        s.step()
    assert s.t_cur == 0 and s.t_max == 20
    assert s.current() == 1e-2
    assert all(1e-5 <= v <= 1e-2 for v in seen)
    with pytest.raises(ConfigError):
        mlp.lr_at(s, 21, 20)


@given(st.floats(0, 1e-2), st.floats(0, 1), st.integers(1, 50), st.integers(0, 50))
def test_schedule_stays_in_range(lo, frac, t_max, t_cur):
    hi = lo + frac
    s = mlp.LrSchedule(lo, hi)
    t_cur = min(t_cur, t_max)
    assert lo <= mlp.lr_at(s, t_cur, t_max) <= hi


def test_config_validation():
    with pytest.raises(ConfigError):
        mlp.MlpConfig(hidden=(0, 4))
    with pytest.raises(ConfigError):
        mlp.MlpConfig(dropout=(1.0, 0.2))
    with pytest.raises(ConfigError):
        mlp.MlpConfig(lr_min=1.0, lr_max=0.1)
    with pytest.raises(ConfigError):
        mlp.MlpConfig(batch_size=0)
    with pytest.raises(ConfigError):
        mlp.MlpConfig(activation="swish")


def _blobs(seed=0, n=200):
    spec = dataio.SyntheticSpec([n // 2, n // 2], informative=2, noise=0, categorical=0, missing_rate=0.0, seed=seed)
    _, x, y = dataio.make_synthetic(spec)
    return x, y


def test_train_separable_blobs():
    x, y = _blobs()
    tr, va = dataio.stratified_split(y, 0.25, 0)
    cfg = mlp.MlpConfig(hidden=(16, 16), max_epochs=30, seed=1)
    model, report = mlp.train(cfg, x[tr], y[tr], x[va], y[va])
    assert report.epochs[report.best_epoch]["val_acc"] >= 0.95
    assert np.mean(model.predict(x[va]) == y[va]) >= 0.95
    assert model.extract(x[:3]).shape == (3, 16)


def test_frozen_optimizer_stops_after_two_epochs():
    x, y = _blobs(n=40)
    cfg = mlp.MlpConfig(hidden=(4, 4), lr_max=0.0, lr_min=0.0, patience=1, max_epochs=10)
    model, report = mlp.train(cfg, x, y, x, y)
    assert len(report.epochs) == 2 and report.stopped_early
    assert report.best_epoch == 0


def test_training_is_reproducible():
    x, y = _blobs(n=60)
    cfg = mlp.MlpConfig(hidden=(6, 6), max_epochs=4, seed=3)
    _, r1 = mlp.train(cfg, x, y, x, y)
    _, r2 = mlp.train(cfg, x, y, x, y)
    assert r1.to_csv() == r2.to_csv()
    assert r1.to_csv().startswith("epoch,lr,train_loss,train_acc,val_loss,val_acc\n")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    x, y = _blobs(n=40)
    cfg = mlp.MlpConfig(hidden=(4, 4), lr_max=1e6, lr_min=1e6, activation="leaky_relu", dropout=(0, 0), max_epochs=20)
    with pytest.raises(TrainingError, match="epoch"):
        mlp.train(cfg, x * 1e3, y, x * 1e3, y)


def test_validation_must_be_non_empty():
    x, y = _blobs(n=20)
    with pytest.raises(ConfigError):
        mlp.train(mlp.MlpConfig(hidden=(2, 2)), x, y, x[:0], y[:0])
