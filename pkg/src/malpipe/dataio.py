"""Tabular ingestion, preprocessing, stratified splitting and synthetic data.

The preprocessing order is fixed: encode text columns, impute medians,
score features with chi-squared on min-max scaled copies, keep the top k,
then standardise the selected *raw* columns.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError, InputError, PreprocessError, SchemaError
from .numerics import make_rng

DEFAULT_MISSING = ("", "NaN", "nan")
DEFAULT_K = 47


@dataclass
class RawTable:
    """Column-major table. Cells are ``float``, ``str`` or ``None`` (missing)."""

    column_names: list[str]
    columns: list[list]
    label_column: str | None = None

    def __post_init__(self):
        if len(self.column_names) != len(self.columns):
            raise IngestionError("column name count does not match column count")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise IngestionError(f"columns have differing row counts {sorted(lengths)}")
        if self.label_column is not None and self.label_column not in self.column_names:
            raise IngestionError(f"label column {self.label_column!r} not in table")

    @property
    def n_rows(self):
        return len(self.columns[0]) if self.columns else 0

    def column(self, name):
        return self.columns[self.column_names.index(name)]

    @property
    def feature_names(self):
        return [n for n in self.column_names if n != self.label_column]


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_names: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise InputError(f"dataset features must be 2-D, got {self.x.shape}")
        if self.x.shape[0] != self.y.shape[0]:
            raise InputError(f"{self.x.shape[0]} rows but {self.y.shape[0]} labels")
        if len(self.feature_names) != self.x.shape[1]:
            raise InputError("feature name count does not match column count")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise InputError("class index out of range of class names")

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx], list(self.feature_names), list(self.class_names))


@dataclass
class FoldPlan:
    folds: np.ndarray
    n_folds: int
    seed: int

    def split(self, fold):
        """``(train_idx, val_idx)`` for one fold."""
        val = np.flatnonzero(self.folds == fold)
        train = np.flatnonzero(self.folds != fold)
        return train, val


# ---------------------------------------------------------------------------
# ingestion


def _parse_cell(text, missing):
    if text in missing:
        return None
    try:
        v = float(text)
    except ValueError:
        return text
    return v if math.isfinite(v) else text


def load_table(path, label_column, missing_markers=DEFAULT_MISSING):
    missing = set(missing_markers)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: file is empty, expected a header row")
    header = rows[0]
    if label_column is not None and label_column not in header:
        raise IngestionError(f"{path}: label column {label_column!r} not found in header")
    if len(set(header)) != len(header):
        raise IngestionError(f"{path}: duplicate column names in header")
    columns = [[] for _ in header]
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise IngestionError(
                f"{path}: row {i} (line {i + 2}) has {len(row)} cells, header has {len(header)}"
            )
        for j, cell in enumerate(row):
            columns[j].append(_parse_cell(cell, missing))
    return RawTable(list(header), columns, label_column)


def _format_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.column_names)
        for i in range(table.n_rows):
            w.writerow([_format_cell(col[i]) for col in table.columns])


# ---------------------------------------------------------------------------
# encoding and imputation


def _is_text_column(cells):
    return any(isinstance(c, str) for c in cells)


def _byte_key(s):
    return s.encode("utf-8")


def _text(v):
    return v if isinstance(v, str) else repr(v)


def fit_encoding(cells):
    """Sorted unique values of a text column (byte order)."""
    return sorted({_text(c) for c in cells if c is not None}, key=_byte_key)


def apply_encoding(cells, categories):
    """Integer codes as floats, NaN for missing; unseen values get ``len(categories)``.

    Returns ``(codes, unseen_count)``.
    """
    index = {v: i for i, v in enumerate(categories)}
    reserved = float(len(categories))
    out = np.empty(len(cells))
    unseen = 0
    for i, c in enumerate(cells):
        if c is None:
            out[i] = np.nan
            continue
        code = index.get(_text(c))
        if code is None:
            unseen += 1
            out[i] = reserved
        else:
            out[i] = code
    return out, unseen


def encode_labels_and_categoricals(table):
    """Replace every text column by integer codes.

    Returns ``(numeric_table, encodings)`` where ``encodings`` maps column
    name to its sorted category list. Numeric columns pass through.
    """
    encodings = {}
    columns = []
    for name, cells in zip(table.column_names, table.columns):
        if _is_text_column(cells):
            cats = fit_encoding(cells)
            encodings[name] = cats
            codes, _ = apply_encoding(cells, cats)
            columns.append([None if np.isnan(v) else float(v) for v in codes])
        else:
            columns.append(list(cells))
    return RawTable(list(table.column_names), columns, table.label_column), encodings


def _median(values):
    # even count -> midpoint of the two middle values
    return float(np.median(values))


def impute_median(table, medians=None):
    """Fill missing cells with column medians (fitted here unless given)."""
    fitted = {} if medians is None else dict(medians)
    columns = []
    for name, cells in zip(table.column_names, table.columns):
        if name == table.label_column:
            columns.append(list(cells))
            continue
        if medians is None:
            present = [c for c in cells if c is not None]
            if not present:
                raise PreprocessError(f"column {name!r} is entirely missing")
            fitted[name] = _median(np.asarray(present, dtype=np.float64))
        m = fitted[name]
        columns.append([m if c is None else c for c in cells])
    return RawTable(list(table.column_names), columns, table.label_column), fitted


# ---------------------------------------------------------------------------
# feature scoring and scaling


def chi2_scores(x, y, n_classes):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    neg = np.argwhere(x < 0.0)
    if neg.size:
        row, col = neg[0]
        raise PreprocessError(f"chi2 needs nonnegative input: feature {col}, row {row} is {x[row, col]}")
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), y] = 1.0
    observed = onehot.T @ x
    total = x.sum(axis=0)
    prior = onehot.sum(axis=0) / max(x.shape[0], 1)
    expected = prior[:, None] * total[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0.0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def select_top_k(scores, k):
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.size or k < 1:
        raise ConfigError(f"cannot select k={k} features from {scores.size}")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def min_max_scale(x, lo, hi):
    span = hi - lo
    safe = np.where(span > 0.0, span, 1.0)
    return np.clip((x - lo) / safe, 0.0, 1.0) * (span > 0.0)


def standardize(x, fit=True, stats=None):
    """Return ``(standardized, (mean, std))``; zero-variance columns divide by 1."""
    x = np.asarray(x, dtype=np.float64)
    if fit:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
    else:
        if stats is None:
            raise ConfigError("standardize(fit=False) needs fitted stats")
        mean, std = stats
    return (x - mean) / std, (mean, std)


def class_weights(y, n_classes):
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes)[:n_classes]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise PreprocessError(f"class {int(empty[0])} has no samples; cannot weight")
    return y.size / (n_classes * counts.astype(np.float64))


# ---------------------------------------------------------------------------
# splitting


def stratified_folds(y, n_folds, seed):
    """Deal each class's seeded permutation round-robin across folds.

    The dealing position carries over between classes so fold sizes stay
    balanced as well as per-class counts.
    """
    if n_folds < 2:
        raise ConfigError(f"need at least 2 folds, got {n_folds}")
    y = np.asarray(y, dtype=np.int64)
    rng = make_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    start = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        folds[idx] = (start + np.arange(idx.size)) % n_folds
        start = (start + idx.size) % n_folds
    return FoldPlan(folds, n_folds, int(seed))


def stratified_split(y, test_fraction, seed):
    """``(train_idx, test_idx)``, both sorted, with per-class rounding."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0, 1), got {test_fraction}")
    y = np.asarray(y, dtype=np.int64)
    rng = make_rng(seed)
    test = []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_test = min(int(math.floor(idx.size * test_fraction + 0.5)), idx.size - 1)
        test.append(idx[:n_test])
    test_idx = np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
    mask = np.ones(y.size, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


# ---------------------------------------------------------------------------
# fitted preprocessing


@dataclass
class PreprocessModel:
    label_column: str
    feature_columns: list[str]
    encodings: dict
    class_names: list[str]
    medians: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    scores: np.ndarray
    selected: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        self.selected = np.asarray(self.selected, dtype=np.int64)
        sel = self.selected
        if sel.size != self.k or np.any(np.diff(sel) <= 0):
            raise PreprocessError("selected feature indices must be strictly increasing")
        if sel.size and (sel[0] < 0 or sel[-1] >= len(self.feature_columns)):
            raise PreprocessError("selected feature index out of range")
        if np.any(~(np.asarray(self.stds) > 0.0)):
            raise PreprocessError("stored standard deviations must be > 0")

    @property
    def k(self):
        return int(self.means.shape[0])

    @property
    def selected_names(self):
        return [self.feature_columns[i] for i in self.selected]

    def _check_schema(self, table):
        given = [n for n in table.column_names if n != self.label_column]
        missing = [n for n in self.feature_columns if n not in given]
        extra = [n for n in given if n not in self.feature_columns]
        if missing or extra:
            raise SchemaError(f"input schema mismatch: missing columns {missing}, extra columns {extra}")

    def raw_matrix(self, table):
        """Encoded and imputed feature matrix plus unseen-category tally."""
        self._check_schema(table)
        n = table.n_rows
        x = np.empty((n, len(self.feature_columns)))
        unseen = 0
        for j, name in enumerate(self.feature_columns):
            cells = table.column(name)
            if name in self.encodings:
                col, u = apply_encoding(cells, self.encodings[name])
                unseen += u
            else:
                col = np.empty(n)
                for i, c in enumerate(cells):
                    if c is None:
                        col[i] = np.nan
                    elif isinstance(c, str):
                        # text in a column that was numeric at fit time
                        unseen += 1
                        col[i] = np.nan
                    else:
                        col[i] = c
            x[:, j] = np.where(np.isnan(col), self.medians[j], col)
        return x, unseen

    def transform_features(self, table):
        x, unseen = self.raw_matrix(table)
        out, _ = standardize(x[:, self.selected], fit=False, stats=(self.means, self.stds))
        return out, unseen

    def encode_labels(self, cells):
        index = {v: i for i, v in enumerate(self.class_names)}
        y = np.empty(len(cells), dtype=np.int64)
        for i, c in enumerate(cells):
            if c is None:
                raise InputError(f"row {i}: missing class label")
            code = index.get(_label_text(c))
            if code is None:
                raise InputError(f"row {i}: unknown class label {c!r}")
            y[i] = code
        return y

    def apply(self, table):
        """Preprocess a labelled table with fitted statistics only."""
        if self.label_column not in table.column_names:
            raise SchemaError(f"label column {self.label_column!r} missing from input")
        x, unseen = self.transform_features(table)
        y = self.encode_labels(table.column(self.label_column))
        return Dataset(x, y, self.selected_names, list(self.class_names)), unseen


def _label_text(v):
    if isinstance(v, str):
        return v
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def fit_label_classes(cells):
    """Class names: numeric labels sort numerically, text labels by bytes."""
    if any(c is None for c in cells):
        raise PreprocessError("label column has missing values")
    if _is_text_column(cells):
        return sorted({_label_text(c) for c in cells}, key=_byte_key)
    values = sorted({float(c) for c in cells})
    return [_label_text(v) for v in values]


def fit_preprocess(table, k=DEFAULT_K):
    """Fit the preprocessing model; returns ``(model, training Dataset)``."""
    if table.label_column is None:
        raise PreprocessError("table has no label column designated")
    features = table.feature_names
    if k > len(features):
        raise ConfigError(f"k={k} exceeds the {len(features)} available features")
    class_names = fit_label_classes(table.column(table.label_column))
    encodings = {}
    for name in features:
        cells = table.column(name)
        if _is_text_column(cells):
            encodings[name] = fit_encoding(cells)
    encoded = []
    for name in features:
        cells = table.column(name)
        if name in encodings:
            col, _ = apply_encoding(cells, encodings[name])
        else:
            col = np.array([np.nan if c is None else c for c in cells], dtype=np.float64)
        encoded.append(col)
    x = np.column_stack(encoded) if encoded else np.zeros((table.n_rows, 0))
    medians = np.empty(len(features))
    for j, name in enumerate(features):
        present = x[~np.isnan(x[:, j]), j]
        if present.size == 0:
            raise PreprocessError(f"column {name!r} is entirely missing")
        medians[j] = _median(present)
    x = np.where(np.isnan(x), medians[None, :], x)
    index = {v: i for i, v in enumerate(class_names)}
    y = np.array([index[_label_text(c)] for c in table.column(table.label_column)], dtype=np.int64)
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    scores = chi2_scores(min_max_scale(x, mins, maxs), y, len(class_names))
    selected = select_top_k(scores, k)
    _, (means, stds) = standardize(x[:, selected], fit=True)
    model = PreprocessModel(
        label_column=table.label_column,
        feature_columns=list(features),
        encodings=encodings,
        class_names=class_names,
        medians=medians,
        mins=mins,
        maxs=maxs,
        scores=scores,
        selected=selected,
        means=means,
        stds=stds,
    )
    dataset, _ = model.apply(table)
    return model, dataset


# ---------------------------------------------------------------------------
# synthetic data


CATEGORY_ALPHABET = ("alpha", "bravo", "charlie", "delta", "echo")


def code_matrix(n_classes, dims):
    """Unit-norm class codes in ``dims`` coordinates.

    With ``dims >= n_classes - 1`` the codes are the vertices of a regular
    simplex (Helmert basis), so every pair of classes is equally far apart.
    Otherwise a fixed Gaussian draw is normalised row-wise.
    """
    if dims >= n_classes - 1:
        helmert = np.zeros((n_classes - 1, n_classes))
        for k in range(1, n_classes):
            helmert[k - 1, :k] = 1.0
            helmert[k - 1, k] = -float(k)
            helmert[k - 1] /= math.sqrt(k * (k + 1))
        centred = np.eye(n_classes) - 1.0 / n_classes
        codes = centred @ helmert.T * math.sqrt(n_classes / (n_classes - 1))
        out = np.zeros((n_classes, dims))
        out[:, : n_classes - 1] = codes
        return out
    g = make_rng(0x5EED).normal(size=(n_classes, dims))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class SyntheticSpec:
    class_counts: list[int]
    informative: int = 14
    noise: int = 46
    categorical: int = 2
    missing_rate: float = 0.01
    separation: float = 4.0
    seed: int = 42
    label_column: str = "Class"
    class_prefix: str = "class_"
    extras: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return len(self.class_counts)


def make_synthetic(spec):
    """Gaussian class blobs plus pure-noise and class-independent text columns.

    Returns ``(table, informative_matrix, labels)``; the last two expose the
    clean informative coordinates for oracle checks.
    """
    counts = [int(c) for c in spec.class_counts]
    if len(counts) < 2 or any(c < 1 for c in counts):
        raise ConfigError(f"need >= 2 classes with positive counts, got {counts}")
    if spec.informative < 1 or spec.noise < 0 or spec.categorical < 0:
        raise ConfigError("informative must be >= 1; noise and categorical >= 0")
    if not 0.0 <= spec.missing_rate < 1.0:
        raise ConfigError(f"missing rate must be in [0, 1), got {spec.missing_rate}")
    rng = make_rng(spec.seed)
    n = sum(counts)
    c = len(counts)
    y = np.repeat(np.arange(c), counts)
    y = y[rng.permutation(n)]
    means = spec.separation * code_matrix(c, spec.informative)
    informative = means[y] + rng.normal(size=(n, spec.informative))
    noise = rng.normal(size=(n, spec.noise))
    cats = rng.integers(0, len(CATEGORY_ALPHABET), size=(n, spec.categorical))
    names = (
        [f"inf_{j:03d}" for j in range(spec.informative)]
        + [f"noise_{j:03d}" for j in range(spec.noise)]
        + [f"cat_{j:02d}" for j in range(spec.categorical)]
    )
    columns = [list(map(float, informative[:, j])) for j in range(spec.informative)]
    columns += [list(map(float, noise[:, j])) for j in range(spec.noise)]
    columns += [[CATEGORY_ALPHABET[v] for v in cats[:, j]] for j in range(spec.categorical)]
    blank = rng.random(size=(n, len(columns))) < spec.missing_rate
    for j, col in enumerate(columns):
        for i in np.flatnonzero(blank[:, j]):
            col[i] = None
    width = max(2, len(str(c - 1)))
    labels = [f"{spec.class_prefix}{v:0{width}d}" for v in y]
    table = RawTable(names + [spec.label_column], columns + [labels], spec.label_column)
    return table, informative, y


def proportional_counts(weights, total):
    """Largest-remainder apportionment of ``total`` samples, each class >= 1."""
    w = np.asarray(weights, dtype=np.float64)
    raw = w / w.sum() * total
    base = np.maximum(np.floor(raw).astype(np.int64), 1)
    remainder = total - int(base.sum())
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    i = 0
    while remainder > 0:
        base[order[i % base.size]] += 1
        remainder -= 1
        i += 1
    while remainder < 0:
        j = int(np.argmax(base))
        base[j] -= 1
        remainder += 1
    return [int(v) for v in base]


def nearest_centroid_accuracy(x_train, y_train, x_test, y_test):
    """Reference classifier used as an oracle on clean informative columns."""
    classes = np.unique(y_train)
    cents = np.stack([x_train[y_train == c].mean(axis=0) for c in classes])
    d = ((x_test[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean(pred == y_test))
