"""Pipeline configuration loaded from TOML.

Example::

    seed = 42
    out = "run"

    [data]
    label_column = "Class"
    # exactly one of:
    path = "features.csv"
    # [data.synthetic]
    # class_counts = [200, 100, 50]

    [preprocess]
    k = 20

    [mlp]
    hidden = [64, 64]

    [svm]
    c = 10.0
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

from . import mlp, svm
from .dataio import DEFAULT_K, DEFAULT_MISSING, SyntheticSpec, proportional_counts
from .errors import ConfigError, PersistenceError
from .lda import DEFAULT_K as LDA_K

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    path: str | None = None
    synthetic: SyntheticSpec | None = None
    label_column: str = "Class"
    missing_markers: tuple = DEFAULT_MISSING


@dataclass
class PreprocessConfig:
    k: int = DEFAULT_K
    test_fraction: float = 0.2
    val_fraction: float = 0.1


@dataclass
class LdaConfig:
    k: int = LDA_K
    shrinkage: float | None = None


@dataclass
class HpoConfig:
    mlp: bool = False
    svm: bool = False
    trials: int = 20
    folds: int = 10
    epochs: int = 30
    pruning: bool = True


@dataclass
class ExplainConfig:
    instances: int = 200


@dataclass
class PipelineConfig:
    data: DataConfig
    seed: int
    out: str = "malpipe-out"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    mlp: mlp.MlpConfig = field(default_factory=mlp.MlpConfig)
    lda: LdaConfig = field(default_factory=LdaConfig)
    svm: svm.SvmConfig = field(default_factory=svm.SvmConfig)
    hpo: HpoConfig = field(default_factory=HpoConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def __post_init__(self):
        if (self.data.path is None) == (self.data.synthetic is None):
            raise ConfigError("exactly one data source is required: [data] path or [data.synthetic]")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if not 0.0 < self.preprocess.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if not 0.0 < self.preprocess.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.hpo.trials < 1 or self.hpo.folds < 2 or self.hpo.epochs < 1:
            raise ConfigError("hpo needs trials >= 1, folds >= 2, epochs >= 1")
        if self.explain.instances < 0:
            raise ConfigError("explain.instances must be >= 0")

    def snapshot(self):
        """Plain-data view used in bundles and reports; the output path is left out."""
        d = asdict(self)
        del d["out"]
        d["mlp"] = self.mlp.to_dict()
        d["data"]["missing_markers"] = list(self.data.missing_markers)
        return d


def _build(cls, table, section):
    if table is None:
        return cls()
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {unknown}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _synthetic(raw, seed, label_column):
    raw = dict(raw)
    if "supports" in raw:
        total = raw.pop("total", None)
        supports = raw.pop("supports")
        raw["class_counts"] = supports if total is None else proportional_counts(supports, int(total))
    raw.setdefault("seed", seed)
    raw.setdefault("label_column", label_column)
    return _build(SyntheticSpec, raw, "data.synthetic")


def from_dict(raw, seed=None, out=None):
    """Build a config; ``seed``/``out`` override the file's values."""
    raw = dict(raw)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    if seed is not None:
        raw["seed"] = seed
    if raw.get("seed") is None:
        raise ConfigError("seed is mandatory (set `seed` in the config or pass --seed)")
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {raw['seed']!r}")
    if out is not None:
        raw["out"] = out
    data = dict(raw.get("data") or {})
    synthetic = data.pop("synthetic", None)
    data_cfg = _build(DataConfig, data, "data")
    if synthetic is not None:
        data_cfg.synthetic = _synthetic(synthetic, raw["seed"], data_cfg.label_column)
    data_cfg.missing_markers = tuple(data_cfg.missing_markers)
    # model seeds follow the run seed unless pinned explicitly
    seeded = {}
    for name in ("mlp", "svm"):
        section = raw.get(name)
        seeded[name] = {"seed": raw["seed"], **(section if isinstance(section, dict) else {})}
    return PipelineConfig(
        data=data_cfg,
        seed=raw["seed"],
        out=str(raw.get("out", "malpipe-out")),
        preprocess=_build(PreprocessConfig, raw.get("preprocess"), "preprocess"),
        mlp=_build(mlp.MlpConfig, seeded["mlp"], "mlp"),
        lda=_build(LdaConfig, raw.get("lda"), "lda"),
        svm=_build(svm.SvmConfig, seeded["svm"], "svm"),
        hpo=_build(HpoConfig, raw.get("hpo"), "hpo"),
        explain=_build(ExplainConfig, raw.get("explain"), "explain"),
    )


def load(path, seed=None, out=None):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise PersistenceError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw, seed=seed, out=out)
