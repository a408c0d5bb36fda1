import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecindex.core import cohort_from_arrays
from ecindex.coxfit import (
    CollinearityError,
    CoxOptions,
    TieMethod,
    fit_cox,
    model_from_hazards,
    partial_loglik,
    partial_loglik_gradient,
    predict_hazard_ratios,
)
from ecindex.baseline import kaplan_meier, observed_hazards
from ecindex.core import HazardAssignment, Provenance

from conftest import random_cohort, ref_partial_loglik

FOUR = cohort_from_arrays([1, 2, 3, 4], [1, 1, 1, 1], [[1], [0], [1], [0]])
GRID = np.round(np.arange(-5.0, 5.0001, 0.1), 10)


def test_loglik_at_zero_hand_value():
    expected = math.log(1 / 4) + math.log(1 / 3) + math.log(1 / 2) + math.log(1)
    assert partial_loglik(FOUR, [0.0]) == pytest.approx(expected, abs=1e-14)


def test_loglik_matches_reference(rng):
    c = random_cohort(rng, m=15)
    beta = np.array([0.3, -0.7])
    ref = ref_partial_loglik(c.time, c.event, c.covariates, beta)
    assert partial_loglik(c, beta) == pytest.approx(ref, rel=1e-12)


def test_fit_beats_grid():
    fit = fit_cox(FOUR)
    ll = partial_loglik(FOUR, fit.coefficients)
    assert all(ll >= partial_loglik(FOUR, [b]) - 1e-12 for b in GRID)


def test_fit_matches_grid_maximiser():
    # non-degenerate variant of the four-record example (the original has a
    # monotone likelihood in one direction only if events order by z)
    c = cohort_from_arrays([1, 2, 3, 4, 5], [1, 1, 1, 1, 0], [[1], [0], [1], [0], [1]])
    fine = np.arange(-5.0, 5.0, 1e-4)
    lls = [partial_loglik(c, [b]) for b in fine]
    best = fine[int(np.argmax(lls))]
    assert fit_cox(c).coefficients[0] == pytest.approx(best, abs=1e-3)


@pytest.mark.parametrize("method", ["breslow", "efron"])
def test_gradient_finite_difference(rng, method):
    for _ in range(10):
        c = random_cohort(rng, m=25, p=3)
        # introduce ties so Efron differs from Breslow
        c = c.replace(time=np.ceil(c.time / 3))
        beta = rng.normal(scale=0.5, size=3)
        g, H = partial_loglik_gradient(c, beta, method)
        step = 1e-5
        fd = np.array(
            [
                (partial_loglik(c, beta + step * e, method) - partial_loglik(c, beta - step * e, method)) / (2 * step)
                for e in np.eye(3)
            ]
        )
        assert np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-8) <= 1e-5
        fdh = np.array(
            [
                (partial_loglik_gradient(c, beta + step * e, method)[0] - partial_loglik_gradient(c, beta - step * e, method)[0])
                / (2 * step)
                for e in np.eye(3)
            ]
        )
        assert np.allclose(fdh, H, rtol=1e-4, atol=1e-6)


def test_efron_equals_breslow_without_ties(small_cohort):
    b = np.array([0.2, 0.1])
    assert partial_loglik(small_cohort, b, "efron") == pytest.approx(partial_loglik(small_cohort, b, "breslow"))


def test_efron_hand_case():
    # two tied events at t=1 with z = 1, 0 and a censored member z = 0
    c = cohort_from_arrays([1, 1, 2], [1, 1, 0], [[1], [0], [0]])
    b = 0.4
    e = math.exp(b)
    tot = e + 2
    expected = b - math.log(tot) - math.log(tot - 0.5 * (e + 1))
    assert partial_loglik(c, [b], TieMethod.EFRON) == pytest.approx(expected, abs=1e-14)


def test_loglik_non_decreasing_over_iterations(rng):
    c = random_cohort(rng, m=200, p=3)
    fit = fit_cox(c, CoxOptions(standardize=False))
    assert fit.converged
    assert np.all(np.diff(fit.history) >= -1e-12)


def test_collinear_columns():
    z = np.random.default_rng(0).normal(size=(50, 1))
    c = cohort_from_arrays(np.arange(1, 51), np.ones(50), np.hstack([z, 2 * z]))
    with pytest.raises(CollinearityError, match="collinear"):
        fit_cox(c)


def test_scale_invariance_of_ranking(rng):
    c = random_cohort(rng, m=150, p=2)
    r1 = predict_hazard_ratios(fit_cox(c), c).rates
    scaled = c.covariates * np.array([1000.0, 1.0])
    c2 = cohort_from_arrays(c.time, c.event, scaled)
    r2 = predict_hazard_ratios(fit_cox(c2), c2).rates
    assert np.array_equal(np.argsort(r1), np.argsort(r2))


def test_predict_hazard_ratios_closed_form():
    fit = fit_cox(FOUR)
    fit.coefficients = np.array([math.log(2)])
    assert predict_hazard_ratios(fit, FOUR).rates.tolist() == pytest.approx([2, 1, 2, 1])
    fit.coefficients = np.array([0.0])
    assert predict_hazard_ratios(fit, FOUR).rates.tolist() == [1, 1, 1, 1]


def test_model_from_hazards_ordering():
    s0 = kaplan_meier(FOUR)
    m = model_from_hazards(HazardAssignment(("a", "b"), [1.0, 2.0], Provenance.MODEL_FITTED), s0)
    assert m.predicted_survival[0] > m.predicted_survival[1]
    eq = model_from_hazards(HazardAssignment(("a", "b"), [1.5, 1.5], Provenance.MODEL_FITTED), s0)
    assert eq.predicted_survival[0] == eq.predicted_survival[1]


def test_model_from_observed_hazards_ranks_like_times(small_cohort):
    s0 = kaplan_meier(small_cohort)
    hz = observed_hazards(small_cohort, s0)
    free = np.array([0.0 < h < 1e12 for h in hz.rates]) & (hz.rates > 1e-12)
    pred = model_from_hazards(hz, s0).predicted_survival
    assert np.array_equal(np.argsort(pred[free]), np.argsort(small_cohort.time[free]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_gradient_small_at_convergence(seed):
    c = random_cohort(np.random.default_rng(seed), m=60, p=2)
    fit = fit_cox(c)
    if fit.converged:
        g, _ = partial_loglik_gradient(c, fit.coefficients)
        assert np.max(np.abs(g * fit.scale)) <= 1e-5
