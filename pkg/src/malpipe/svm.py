"""Soft-margin SVMs trained by SMO, combined one-vs-rest."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .dataio import class_weights as balanced_weights
from .errors import ConfigError, FitError, NumericError, ShapeError

KERNELS = ("linear", "rbf")
GAMMA_MODES = ("scale", "auto")
GRAM_LIMIT = 10_000
DUAL_EQ_TOL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: object = "scale"  # "scale", "auto" or a positive float

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if isinstance(self.gamma, str):
            if self.gamma not in GAMMA_MODES:
                raise ConfigError(f"unknown gamma mode {self.gamma!r}")
        elif not float(self.gamma) > 0.0:
            raise ConfigError(f"explicit gamma must be > 0, got {self.gamma}")


def resolve_gamma(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("cannot resolve gamma on an empty matrix")
    d = x.shape[1]
    if spec.gamma == "auto":
        return 1.0 / d
    if spec.gamma == "scale":
        var = float(x.var())
        if var == 0.0:
            raise NumericError("gamma='scale' is undefined for zero-variance input; pass an explicit gamma")
        return 1.0 / (d * var)
    return float(spec.gamma)


def gram(spec, gamma, u, v):
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if u.shape[1] != v.shape[1]:
        raise ShapeError(f"kernel inputs have widths {u.shape[1]} and {v.shape[1]}")
    if spec.kind == "linear":
        return u @ v.T
    return kernels.rbf_gram(u, v, float(gamma))


def kernel_eval(spec, gamma, u, v):
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    return float(gram(spec, gamma, u, v)[0, 0])


def dual_objective(alpha, y, k):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ k @ ay)


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    b: float
    gamma: float
    kernel: KernelSpec
    alpha: np.ndarray | None = field(default=None, repr=False)

    def decision(self, u):
        return decision(self, u)


def check_dual(alpha, y, cbox, name="machine"):
    if np.any(alpha < 0.0) or np.any(alpha > cbox):
        raise FitError(f"{name}: multipliers left the box [0, C]")
    if abs(float(np.dot(alpha, y))) > DUAL_EQ_TOL * max(1.0, float(cbox.max())):
        raise FitError(f"{name}: equality constraint violated")


def smo_fit(x, y, c=1.0, kernel=KernelSpec(), tol=1e-3, max_passes=50, seed=0, gamma=None, gram_matrix=None):
    """Train one binary machine on labels in {-1, +1}.

    Random-partner SMO passes run until a pass changes nothing (or
    ``max_passes``); a maximal-violating-pair phase then polishes the dual
    to ``kernels.SMO_POLISH_EPS``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"x {x.shape} and y {y.shape} do not align")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise FitError("binary labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise FitError("binary fit needs both labels present")
    cbox = np.broadcast_to(np.asarray(c, dtype=np.float64), y.shape).copy()
    if np.any(cbox <= 0.0):
        raise ConfigError("box constraints C must be > 0")
    if gamma is None:
        gamma = resolve_gamma(kernel, x)
    k = gram(kernel, gamma, x, x) if gram_matrix is None else gram_matrix
    n = y.shape[0]
    alpha, b, _, _ = kernels.smo(
        np.ascontiguousarray(k), y, cbox, float(tol), int(max_passes), int(seed),
        kernels.SMO_POLISH_EPS, max(100_000, 200 * n),
    )
    check_dual(alpha, y, cbox)
    sv = np.flatnonzero(alpha > 0.0)
    return BinarySvm(x[sv].copy(), (alpha * y)[sv], float(b) + 0.0, float(gamma), kernel, alpha)


def decision(machine, u):
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    width = machine.support_vectors.shape[1]
    if u.shape[1] != width:
        raise ShapeError(f"expected width {width}, got {u.shape[1]}")
    if machine.dual_coef.size == 0:
        out = np.full(u.shape[0], machine.b)
    else:
        out = gram(machine.kernel, machine.gamma, u, machine.support_vectors) @ machine.dual_coef + machine.b
    return float(out[0]) if single else out


@dataclass
class SvmConfig:
    c: float = 1.0
    kernel: str = "rbf"
    gamma: object = "scale"
    tol: float = 1e-3
    max_passes: int = 50
    balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"C must be > 0, got {self.c}")
        if self.tol <= 0 or self.max_passes < 1:
            raise ConfigError("tol must be > 0 and max_passes >= 1")
        self.spec  # validates kernel and gamma

    @property
    def spec(self):
        return KernelSpec(self.kernel, self.gamma)

    def to_dict(self):
        return asdict(self)


@dataclass
class MulticlassSvm:
    machines: list
    class_names: list
    config: SvmConfig

    def __post_init__(self):
        if len(self.machines) != len(self.class_names):
            raise FitError(f"{len(self.machines)} machines for {len(self.class_names)} classes")

    @property
    def n_features(self):
        return self.machines[0].support_vectors.shape[1]

    def predict(self, x):
        return predict(self, x)


def fit_multiclass(x, y, n_classes, config=None, class_names=None, class_weights=None):
    """One-vs-rest machines; per-sample C scaled by class weight when balanced."""
    config = config or SvmConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes)[:n_classes]
    if np.any(counts == 0):
        raise FitError(f"class {int(np.flatnonzero(counts == 0)[0])} has no samples")
    if y.size > GRAM_LIMIT:
        raise ConfigError(f"{y.size} samples exceed the in-memory Gram limit of {GRAM_LIMIT}")
    if config.balanced:
        if class_weights is None:
            class_weights = balanced_weights(y, n_classes)
        cbox = config.c * np.asarray(class_weights)[y]
    else:
        cbox = np.full(y.size, float(config.c))
    spec = config.spec
    gamma = resolve_gamma(spec, x)
    k = np.ascontiguousarray(gram(spec, gamma, x, x))
    machines = []
    for cls in range(n_classes):
        target = np.where(y == cls, 1.0, -1.0)
        machines.append(
            smo_fit(x, target, cbox, spec, config.tol, config.max_passes, config.seed + cls, gamma, k)
        )
    names = list(class_names) if class_names is not None else [str(i) for i in range(n_classes)]
    return MulticlassSvm(machines, names, config)


def predict(model, x):
    """``(labels, scores)``; ties go to the lowest class index."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise ShapeError(f"expected width {model.n_features}, got {x.shape[1]}")
    scores = np.column_stack([decision(m, x) for m in model.machines])
    return np.argmax(scores, axis=1), scores
