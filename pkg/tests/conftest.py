import numpy as np
import pytest
from hypothesis import settings

from malpipe import dataio

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# supports per family from the reference dataset, scaled down for desk runs
REFERENCE_SUPPORTS = [7610, 320, 182, 458, 136, 473, 409, 1208, 15666, 641, 311, 675, 2749, 2680, 32297]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_table():
    spec = dataio.SyntheticSpec([60, 40, 30], informative=4, noise=6, categorical=1, seed=3)
    table, _, _ = dataio.make_synthetic(spec)
    return table


def small_config(out, **overrides):
    raw = {
        "seed": 5,
        "out": str(out),
        "data": {"synthetic": {"class_counts": [60, 40, 30], "informative": 4, "noise": 6, "categorical": 1}},
        "preprocess": {"k": 6},
        "mlp": {"hidden": [8, 8], "max_epochs": 8},
        "lda": {"k": 2},
        "svm": {"c": 1.0},
        "explain": {"instances": 5},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return raw


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    from malpipe import config, pipeline

    out = tmp_path_factory.mktemp("run") / "out"
    cfg = config.from_dict(small_config(out))
    return pipeline.run_pipeline(cfg)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
