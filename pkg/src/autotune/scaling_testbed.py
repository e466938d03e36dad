"""Testbed planning.

An execution-time model ``t = th0 + th1*ds/nm + th2*ln(nm) + th3*nm`` is fit
by non-negative least squares on default-configuration runs at reduced data
scale ``ds`` and machine count ``nm``. Training data is bought in batches
until a learning curve of held-out error against training size can be
projected, the cost-optimal training size is bought, and finally every
``(ds, nm)`` setting whose predicted time is about ``f`` times the
production time is reported.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .eval_metrics import total_cost
from .param_space import Configuration, default_configuration
from .target_harness import TargetSystem

log = logging.getLogger(__name__)

DS_LADDER = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0)
FAMILIES = ("power-law", "logarithmic", "exponential", "weiss-tian")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingSample:
    ds: float
    nm: int
    time: float

    def __post_init__(self) -> None:
        if not 0 < self.ds <= 1:
            raise ValueError(f"ds must be in (0, 1], got {self.ds}")
        if self.nm < 1:
            raise ValueError(f"nm must be >= 1, got {self.nm}")
        if not self.time > 0:
            raise ValueError("time must be positive")


@dataclass(frozen=True)
class ScalingModel:
    theta: tuple[float, float, float, float]
    residual: float
    n: int
    rank: int = 4

    def predict(self, ds: float, nm: float) -> float:
        return float(features(ds, nm) @ np.asarray(self.theta))


@dataclass(frozen=True)
class LearningCurvePoint:
    n: int
    error: float


@dataclass(frozen=True)
class CurveFamily:
    family: str
    coef: tuple[float, float, float]
    corr: float

    def __call__(self, n) -> np.ndarray | float:
        return curve_value(self.family, self.coef, n)


@dataclass(frozen=True)
class TestbedSetting:
    ds: float
    nm: int
    predicted_ms: float


# --------------------------------------------------------------------------- #
# scaling model

def features(ds: float, nm: float) -> np.ndarray:
    if nm <= 0:
        raise ValueError("machine count must be positive")
    if ds <= 0:
        raise ValueError("data scale must be positive")
    return np.array([1.0, ds / nm, math.log(nm), float(nm)])


def design_matrix(samples: Sequence[ScalingSample]) -> np.ndarray:
    return np.vstack([features(s.ds, s.nm) for s in samples])


def nnls(A: np.ndarray, b: np.ndarray, tol: float | None = None, max_iter: int | None = None):
    """Lawson-Hanson active-set solver for ``min ||Ax - b||`` with ``x >= 0``.

    Returns:
        ``(x, residual_norm)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if tol is None:
        tol = 10 * max(m, n) * np.finfo(float).eps * np.linalg.norm(A, 1) * max(np.linalg.norm(b), 1.0)
    max_iter = max_iter or 30 * n
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    it = 0
    while (~passive).any() and w[~passive].max() > tol:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise FitError("NNLS did not converge")
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if (z[passive] > 0).all():
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))


def kkt_residual(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    """Largest violation of the NNLS optimality conditions at ``x``."""
    g = A.T @ (A @ x - b)
    viol = np.where(x > 0, np.abs(g), np.maximum(0.0, -g))
    return float(max(viol.max(), np.maximum(0.0, -x).max()))


def nnls_fit(samples: Sequence[ScalingSample]) -> ScalingModel:
    if len(samples) < 4:
        raise FitError(f"need at least 4 samples, got {len(samples)}")
    n_ds = len({s.ds for s in samples})
    n_nm = len({s.nm for s in samples})
    if n_ds < 2 or n_nm < 2:
        raise FitError(f"need >= 2 distinct ds and nm values (have {n_ds} ds, {n_nm} nm)")
    A = design_matrix(samples)
    t = np.array([s.time for s in samples])
    # column scaling keeps the active-set tolerance meaningful
    scale = np.linalg.norm(A, axis=0)
    x, res = nnls(A / scale, t)
    theta = x / scale
    return ScalingModel(tuple(float(v) for v in theta), res, len(samples), int(np.linalg.matrix_rank(A)))


# --------------------------------------------------------------------------- #
# learning curves

def curve_value(family: str, coef, n):
    a, b, c = coef
    n = np.asarray(n, dtype=float)
    if family == "power-law":
        return a * n ** (-b) + c
    if family == "logarithmic":
        return a - b * np.log(n)
    if family == "exponential":
        return a * np.exp(-b * n) + c
    if family == "weiss-tian":
        return a / (b + n) + c
    raise ValueError(f"unknown curve family {family!r}")


def _basis(family: str, b: float, n: np.ndarray) -> np.ndarray:
    """Increasing transform of ``n`` in which the family is linear with slope ``-a``."""
    if family == "power-law":
        return -(n ** (-b))
    if family == "exponential":
        return -np.exp(-b * n)
    if family == "weiss-tian":
        return -1.0 / (b + n)
    return np.log(n)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        return 0.0
    return float(dx @ dy / den)


def _fit_linear(u: np.ndarray, e: np.ndarray) -> tuple[float, float, float]:
    """Least squares ``e ~ c - a*u`` with ``a >= 0``; returns ``(a, c, sse)``."""
    du = u - u.mean()
    suu = float(du @ du)
    a = -float(du @ (e - e.mean())) / suu if suu > 0 else 0.0
    a = max(a, 0.0)
    c = float(e.mean() + a * u.mean())
    r = e - (c - a * u)
    return a, c, float(r @ r)


def _b_range(family: str, n: np.ndarray) -> tuple[float, float]:
    if family == "power-law":
        return 1e-3, 4.0
    if family == "exponential":
        return 1e-3 / n.max(), 10.0 / n.min()
    return 0.0, 100.0 * n.max()


def selection_score(family: str, n, e) -> float:
    """Pearson correlation of the points in the family's linearising coordinates.

    power-law ``(ln n, ln e)``, logarithmic ``(ln n, e)``, exponential
    ``(n, ln e)``, weiss-tian ``(-1/n, e)``. A well-behaved decreasing curve
    of the right family scores close to -1.
    """
    n = np.asarray(n, dtype=float)
    e = np.asarray(e, dtype=float)
    if family in ("power-law", "exponential") and np.any(e <= 0):
        return 0.0
    if family == "power-law":
        return pearson(np.log(n), np.log(e))
    if family == "logarithmic":
        return pearson(np.log(n), e)
    if family == "exponential":
        return pearson(n, np.log(e))
    if family == "weiss-tian":
        return pearson(-1.0 / n, e)
    raise ValueError(f"unknown curve family {family!r}")


def fit_curve(points: Sequence[LearningCurvePoint], family: str) -> CurveFamily:
    """Least-squares fit of one learning-curve family.

    The nonlinear coefficient is found by a coarse grid refined with a
    bounded scalar search; the linear ones by least squares with ``a >= 0``.
    ``corr`` is :func:`selection_score` of the observed points.
    """
    if len(points) < 3:
        raise FitError("need at least 3 learning-curve points")
    if family not in FAMILIES:
        raise ValueError(f"unknown curve family {family!r}")
    n = np.array([p.n for p in points], dtype=float)
    e = np.array([p.error for p in points], dtype=float)
    if np.ptp(e) == 0:
        if family == "logarithmic":
            return CurveFamily(family, (float(e[0]), 0.0, 0.0), 0.0)
        return CurveFamily(family, (0.0, 0.0, float(e[0])), 0.0)
    corr = selection_score(family, n, e)

    if family == "logarithmic":
        a, c, _ = _fit_linear(np.log(n), e)
        return CurveFamily(family, (c, a, 0.0), corr)

    lo, hi = _b_range(family, n)
    if family == "weiss-tian":
        grid = np.concatenate([[0.0], np.geomspace(1e-3 * n.min(), hi, 80)])
    else:
        grid = np.geomspace(lo, hi, 80)

    def sse(b):
        return _fit_linear(_basis(family, b, n), e)[2]

    vals = np.array([sse(b) for b in grid])
    k = int(np.argmin(vals))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    b = float(grid[k])
    if right > left:
        res = minimize_scalar(sse, bounds=(left, right), method="bounded",
                              options={"xatol": 1e-10 * max(1.0, right)})
        if res.fun <= vals[k]:
            b = float(res.x)
    a, c, _ = _fit_linear(_basis(family, b, n), e)
    return CurveFamily(family, (a, b, c), corr)


def select_family(points: Sequence[LearningCurvePoint]) -> CurveFamily:
    """Fit every family and keep the one with the most negative correlation.

    The caller should keep sampling while the returned ``corr >= 0``.
    """
    fits = [fit_curve(points, f) for f in FAMILIES]
    return min(fits, key=lambda c: c.corr)


def optimal_n(curve: CurveFamily | Callable, S: float, R: float = 1.0, n_max: int = 200) -> int:
    """Integer ``n`` in ``[1, n_max]`` minimising ``2n + eps(n)*S*R``.

    Projected errors are clipped to ``[0, 1]``; the first minimum wins.
    """
    ns = np.arange(1, int(n_max) + 1)
    eps = np.clip(np.asarray(curve(ns), dtype=float), 0.0, 1.0)
    costs = 2 * ns + eps * S * R
    return int(ns[int(np.argmin(costs))])


def mape(model: ScalingModel, samples: Sequence[ScalingSample]) -> float:
    pred = np.array([model.predict(s.ds, s.nm) for s in samples])
    t = np.array([s.time for s in samples])
    return float(np.mean(np.abs(pred - t) / t))


# --------------------------------------------------------------------------- #
# planner

@dataclass
class PlanReport:
    settings: list[TestbedSetting]
    model: ScalingModel | None
    curve: CurveFamily | None
    n_star: int | None
    n_train: int
    t0: float | None
    spent_ms: float
    curve_points: list[LearningCurvePoint] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def choice(self) -> TestbedSetting | None:
        """Default pick among qualifiers: most machines, then smallest data scale."""
        if not self.settings:
            return None
        return min(self.settings, key=lambda s: (-s.nm, s.ds))

    def to_dict(self) -> dict:
        return {
            "settings": [asdict(s) for s in self.settings],
            "choice": asdict(self.choice) if self.choice else None,
            "theta": list(self.model.theta) if self.model else None,
            "fit_residual": self.model.residual if self.model else None,
            "family": self.curve.family if self.curve else None,
            "family_coef": list(self.curve.coef) if self.curve else None,
            "best_corr": self.curve.corr if self.curve else None,
            "n_star": self.n_star,
            "n_train": self.n_train,
            "t0_ms": self.t0,
            "spent_ms": self.spent_ms,
            "curve_points": [asdict(p) for p in self.curve_points],
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = []
        if self.model:
            th = ", ".join(f"{v:.4g}" for v in self.model.theta)
            lines.append(f"scaling model theta = ({th}), residual {self.model.residual:.4g}")
        if self.curve:
            lines.append(f"learning curve: {self.curve.family} (corr {self.curve.corr:.3f}), n* = {self.n_star}")
        lines.append(f"training samples: {self.n_train}, budget spent: {self.spent_ms:.0f} ms")
        if self.t0 is not None:
            lines.append(f"production default time t0 = {self.t0:.1f} ms")
        if self.settings:
            lines.append(f"{'ds':>10} {'nm':>4} {'predicted ms':>14}")
            for s in self.settings:
                lines.append(f"{s.ds:>10.5g} {s.nm:>4d} {s.predicted_ms:>14.1f}")
            c = self.choice
            lines.append(f"suggested testbed: ds={c.ds:g}, nm={c.nm}")
        else:
            lines.append("no qualifying testbed setting")
        lines.extend(f"note: {d}" for d in self.diagnostics)
        return "\n".join(lines)


class _Budget:
    def __init__(self, tc: float):
        self.tc = tc
        self.spent = 0.0

    @property
    def permits(self) -> bool:
        return self.spent < self.tc

    def charge(self, t: float) -> None:
        self.spent += t


def plan_testbeds(
    target: TargetSystem,
    tc: float,
    f: float,
    *,
    production_nm: int,
    max_nm: int | None = None,
    max_ds: float = 1.0,
    delta: int = 5,
    seed=0,
    ds_ladder: Sequence[float] = DS_LADDER,
    tolerance: float = 0.2,
    R: float = 1.0,
    n_max: int = 100,
    config: Configuration | None = None,
) -> PlanReport:
    """Plan reduced-scale testbeds with projective sampling.

    Each round buys ``delta`` training and ``delta`` held-out runs of the
    default configuration at random ``(ds, nm)`` grid points, refits the
    model and records its held-out error. Rounds continue while budget
    remains and no learning-curve family correlates negatively. The
    cost-optimal training size is then topped up, the production time
    ``t0`` measured, and every grid setting within ``RC`` whose predicted
    time is within ``tolerance`` of ``t0 * f`` is returned, closest first.
    Every execution is charged against ``tc``.
    """
    if not 0 < f <= 1:
        raise ValueError("scale factor must be in (0, 1]")
    if delta < 1:
        raise ValueError("delta must be >= 1")
    if tc < 0:
        raise ValueError("time constraint must be non-negative")
    rng = np.random.default_rng(seed)
    max_nm = production_nm if max_nm is None else max_nm
    config = config or default_configuration(target.space)
    grid = [(float(ds), nm) for ds in ds_ladder for nm in range(1, production_nm + 1)]
    budget = _Budget(tc)
    train: list[ScalingSample] = []
    test: list[ScalingSample] = []
    points: list[LearningCurvePoint] = []
    pool: list[tuple[float, int]] = []
    diagnostics: list[str] = []
    model: ScalingModel | None = None
    best: CurveFamily | None = None

    def draw() -> tuple[float, int]:
        if not pool:
            pool.extend(grid[i] for i in rng.permutation(len(grid)))
        return pool.pop()

    def run(ds: float, nm: int) -> ScalingSample | None:
        if not budget.permits:
            return None
        t = target.execute(config, ds, nm, int(rng.integers(2**63)))
        budget.charge(t)
        return ScalingSample(ds, nm, t)

    def acquire() -> None:
        for bucket in (train, test):
            for _ in range(delta):
                s = run(*draw())
                if s is not None:
                    bucket.append(s)

    def refit() -> None:
        nonlocal model
        try:
            model = nnls_fit(train)
        except FitError as e:
            diagnostics.append(f"n={len(train)}: {e}")
            return
        if test:
            points.append(LearningCurvePoint(len(train), mape(model, test)))

    while True:
        acquire()
        refit()
        best_corr = 0.0
        if len(points) >= 3:
            best = select_family(points)
            best_corr = best.corr
        if not (budget.permits and best_corr >= 0 and len(train) < n_max):
            break

    n_star = None
    if best is not None and best.corr < 0:
        S = sum(1 for ds, nm in grid if nm <= max_nm and ds <= max_ds)
        n_star = optimal_n(best, S, R, n_max)
        while budget.permits and len(train) < n_star:
            acquire()
            refit()
    elif model is not None:
        diagnostics.append("learning curve never correlated negatively; using the last model")

    if model is None:
        diagnostics.append("time constraint exhausted before a scaling model could be fit")
        return PlanReport([], None, best, n_star, len(train), None, budget.spent, points, diagnostics)

    t0 = None
    if budget.permits:
        t0 = target.execute(config, 1.0, production_nm, int(rng.integers(2**63)))
        budget.charge(t0)
    else:
        diagnostics.append("no budget left to measure the production default; t0 predicted from the model")
        t0 = model.predict(1.0, production_nm)

    goal = t0 * f
    settings = []
    for ds, nm in grid:
        if nm > max_nm or ds > max_ds:
            continue
        p = model.predict(ds, nm)
        if abs(p / goal - 1) <= tolerance:
            settings.append(TestbedSetting(ds, nm, p))
    settings.sort(key=lambda s: (abs(s.predicted_ms - goal), -s.nm, s.ds))
    return PlanReport(settings, model, best, n_star, len(train), t0, budget.spent, points, diagnostics)


def progressive_sampling(
    target: TargetSystem,
    *,
    production_nm: int,
    n0: int = 5,
    a: float = 2.0,
    n_max: int = 200,
    S: float = 100,
    R: float = 1.0,
    seed=0,
    ds_ladder: Sequence[float] = DS_LADDER,
    tol: float = 0.01,
    config: Configuration | None = None,
) -> dict:
    """Geometric progressive-sampling baseline (``n_i = n0 * a**i``).

    Grows the training set along the schedule until the held-out error
    improves by less than ``tol`` or ``n_max`` is reached, and reports the
    final size, its error and the total cost.
    """
    rng = np.random.default_rng(seed)
    config = config or default_configuration(target.space)
    grid = [(float(ds), nm) for ds in ds_ladder for nm in range(1, production_nm + 1)]

    def sample(k):
        out = []
        for _ in range(k):
            ds, nm = grid[int(rng.integers(len(grid)))]
            out.append(ScalingSample(ds, nm, target.execute(config, ds, nm, int(rng.integers(2**63)))))
        return out

    train: list[ScalingSample] = []
    test: list[ScalingSample] = []
    prev = None
    err = 1.0
    i = 0
    while True:
        n = min(int(round(n0 * a ** i)), n_max)
        train.extend(sample(n - len(train)))
        test.extend(sample(n - len(test)))
        try:
            err = min(mape(nnls_fit(train), test), 1.0)
        except FitError:
            err = 1.0
        if (prev is not None and prev - err < tol) or n >= n_max:
            break
        prev = err
        i += 1
    n = len(train)
    return {"n": n, "error": err, "accuracy": 100 * (1 - err), "cost": total_cost(n, err, S, R)}
