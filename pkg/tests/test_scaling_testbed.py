import numpy as np
import pytest
from scipy.optimize import nnls as scipy_nnls

from autotune.eval_metrics import total_cost
from autotune.scaling_testbed import (
    DS_LADDER, FAMILIES, CurveFamily, FitError, LearningCurvePoint, ScalingSample, curve_value,
    fit_curve, kkt_residual, nnls, nnls_fit, optimal_n, plan_testbeds, progressive_sampling,
    select_family,
)


def projected_gradient(A, b, iters=200_000):
    """Plain projected-gradient NNLS, run until it stops moving."""
    L = np.linalg.norm(A, 2) ** 2
    x = np.zeros(A.shape[1])
    for _ in range(iters):
        nxt = np.maximum(0.0, x - A.T @ (A @ x - b) / L)
        if np.max(np.abs(nxt - x)) < 1e-15:
            break
        x = nxt
    return x


def obj(A, b, x):
    return 0.5 * float(np.sum((A @ x - b) ** 2))


@pytest.mark.parametrize("seed", range(10))
def test_nnls_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(12, 4))
    b = rng.normal(size=12)
    x, res = nnls(A, b)
    assert np.all(x >= 0)
    assert kkt_residual(A, b, x) <= 1e-8
    assert obj(A, b, x) == pytest.approx(obj(A, b, projected_gradient(A, b)), abs=1e-6)
    assert np.allclose(x, scipy_nnls(A, b)[0], atol=1e-8)
    assert res == pytest.approx(np.linalg.norm(A @ x - b))


def test_nnls_unconstrained_solution_when_positive():
    A = np.eye(3)
    x, _ = nnls(A, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(x, [1, 2, 3])


def test_eq3_recovery_noiseless():
    theta = (2.0, 5.0, 1.0, 0.5)
    samples = [ScalingSample(ds, nm, theta[0] + theta[1] * ds / nm + theta[2] * np.log(nm) + theta[3] * nm)
               for ds in DS_LADDER for nm in range(1, 9)]
    m = nnls_fit(samples)
    assert np.allclose(m.theta, theta, rtol=1e-8)
    assert m.predict(0.5, 2) == pytest.approx(2 + 1.25 + np.log(2) + 1)


def test_nnls_fit_needs_distinct_settings():
    with pytest.raises(FitError):
        nnls_fit([ScalingSample(1.0, 1, 1.0)] * 5)
    with pytest.raises(FitError):
        nnls_fit([ScalingSample(0.5, 2, 1.0)] * 3)


@pytest.mark.parametrize("family, coef", [
    ("power-law", (0.8, 0.5, 0.05)),
    ("logarithmic", (0.9, 0.15, 0.0)),
    ("exponential", (0.6, 0.1, 0.0)),
])
def test_noiseless_family_is_selected(family, coef):
    ns = np.arange(5, 45, 5)
    pts = [LearningCurvePoint(int(n), float(curve_value(family, coef, n))) for n in ns]
    best = select_family(pts)
    assert best.family == family
    assert np.allclose(best(ns), [p.error for p in pts], rtol=1e-3, atol=1e-4)


def test_fit_curve_handles_flat_errors():
    pts = [LearningCurvePoint(n, 0.1) for n in (5, 10, 15)]
    c = fit_curve(pts, "power-law")
    assert c.corr == 0
    assert np.allclose(c(np.array([1, 100])), 0.1)


def test_optimal_n_matches_brute_force():
    curve = CurveFamily("power-law", (0.8, 0.5, 0.05), -1.0)
    best = min(range(1, 201), key=lambda n: (total_cost(n, min(1, curve(n)), 100, 1), n))
    assert optimal_n(curve, 100, 1) == best


def test_optimal_n_clips_projected_error():
    assert optimal_n(lambda n: np.full_like(n, -5.0, dtype=float), 100) == 1
    assert optimal_n(lambda n: np.full_like(n, 5.0, dtype=float), 100, n_max=3) == 1


def test_plan_on_bundled_surface(surface):
    rep = plan_testbeds(surface, 2e7, 1 / 16, production_nm=5, max_nm=5, seed=0)
    assert rep.settings, rep.diagnostics
    assert rep.spent_ms <= 2e7 + 2 * rep.t0
    for s in rep.settings:
        assert s.nm <= 5
        assert abs(s.predicted_ms - rep.t0 / 16) <= 0.2 * rep.t0 / 16
    assert rep.choice in rep.settings
    assert '"settings"' in rep.to_json()


def test_plan_with_no_budget_is_empty(surface):
    rep = plan_testbeds(surface, 0, 1 / 16, production_nm=5)
    assert rep.settings == [] and rep.diagnostics and rep.choice is None


def test_progressive_sampling_reports_cost(surface):
    out = progressive_sampling(surface, production_nm=5, seed=1)
    assert out["cost"] == pytest.approx(total_cost(out["n"], out["error"], 100, 1))
    assert 0 <= out["error"] <= 1
