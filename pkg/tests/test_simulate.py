import math

import numpy as np
import pytest

from ecindex.baseline import invert_hazards
from ecindex.simulate import (
    Censoring,
    CovariateSpec,
    ExponentialBaseline,
    GroupRule,
    SimulationConfig,
    StepBaseline,
    WeibullBaseline,
    discretize,
    expected_observation_time,
    generate_cohort,
    inverse_mean,
    monte_carlo_realized_ci,
    monte_carlo_win_probability,
    observation_hazards,
    sample_event_times,
    substreams,
)


def test_null_exponential_mean():
    tb = generate_cohort(SimulationConfig(m=10_000, seed=1))
    t = tb.cohort.time
    assert tb.cohort.event.all()
    assert abs(t.mean() - 1.0) < 3 * t.std(ddof=1) / math.sqrt(t.size)


def test_administrative_censoring_fraction():
    lam, tstar, m = 0.7, 1.2, 10_000
    cfg = SimulationConfig(m=m, baseline=ExponentialBaseline(lam), censoring=Censoring("administrative", time=tstar), seed=4)
    cens = 1 - generate_cohort(cfg).cohort.event.mean()
    p = math.exp(-lam * tstar)
    assert abs(cens - p) < 3 * math.sqrt(p * (1 - p) / m)


def test_determinism():
    cfg = SimulationConfig(m=50, beta=(0.3, 1.0), censoring=Censoring("both", time=2.0, rate=0.2), seed=9)
    a, b = generate_cohort(cfg), generate_cohort(cfg)
    assert a.cohort.time.tobytes() == b.cohort.time.tobytes()
    assert a.cohort.covariates.tobytes() == b.cohort.covariates.tobytes()
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize(
    "baseline",
    [ExponentialBaseline(0.5), WeibullBaseline(2.0, 1.0), StepBaseline((0.5, 1.0, 2.0), (0.7, 0.3, 0.0))],
)
def test_inverse_transform_matches_survival(baseline):
    h = 1.7
    t = sample_event_times(baseline, np.full(100_000, h), np.random.default_rng(3))
    checks = np.quantile(t, np.linspace(0.05, 0.95, 10))
    emp = np.array([(t > c).mean() for c in checks])
    assert np.max(np.abs(emp - baseline.survival(checks) ** h)) < 0.01


def test_step_tail_never_reached():
    b = StepBaseline((1.0,), (0.5,))
    t = sample_event_times(b, np.full(1000, 1.0), np.random.default_rng(0))
    assert np.isinf(t).any() and set(t[np.isfinite(t)]) == {1.0}
    with pytest.raises(ValueError):
        SimulationConfig(m=5, baseline=b)


def test_win_probability_oracle():
    for base in (ExponentialBaseline(1.0), WeibullBaseline(2.0, 1.0)):
        assert monte_carlo_win_probability(base, 1, 3, 100_000, seed=1) == pytest.approx(0.75, abs=0.01)
        assert monte_carlo_win_probability(base, 2, 2, 100_000, seed=2) == pytest.approx(0.5, abs=0.01)


def test_groups_and_covariates():
    cfg = SimulationConfig(
        m=2000,
        beta=(0.5, 0.0),
        covariates=(CovariateSpec("uniform", a=0, b=10), CovariateSpec("bernoulli", p=0.25)),
        groups=GroupRule("threshold", ("lo", "hi"), column=0, cuts=(5.0,)),
        seed=3,
    )
    tb = generate_cohort(cfg)
    X = tb.cohort.covariates
    assert X[:, 0].min() >= 0 and X[:, 0].max() < 10
    assert set(np.unique(X[:, 1])) == {0.0, 1.0}
    assert np.all((tb.cohort.group == "hi") == (X[:, 0] >= 5))
    assert np.allclose(tb.true_hazards.rates, np.exp(0.5 * X[:, 0]))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(m=1)
    with pytest.raises(ValueError):
        GroupRule("multinomial", ("a", "b"), (0.5, 0.6))
    with pytest.raises(ValueError):
        SimulationConfig.from_dict({"m": 5, "bogus": 1})
    with pytest.raises(ValueError):
        Censoring("administrative")


def test_config_dict_roundtrip():
    cfg = SimulationConfig(
        m=20,
        baseline=WeibullBaseline(1.5, 2.0),
        beta=(0.1,),
        censoring=Censoring("independent_exponential", rate=0.3),
        groups=GroupRule("multinomial", ("a", "b"), (0.3, 0.7)),
        seed=5,
    )
    d = cfg.to_dict()
    d["baseline"] = {k: v for k, v in d["baseline"].items()}
    assert SimulationConfig.from_dict(d) == cfg


def test_realized_ci_equal_hazards_near_half():
    cfg = SimulationConfig(m=200, seed=2)
    preds = np.random.default_rng(0).permutation(200).astype(float)
    vals = monte_carlo_realized_ci(cfg, n_reps=100, seed=3, predictions=preds)
    assert np.mean(vals) == pytest.approx(0.5, abs=0.01)


def test_true_model_beats_wrong_ordering():
    cfg = SimulationConfig(m=150, beta=(1.0,), seed=6)
    true = monte_carlo_realized_ci(cfg, "true_model", n_reps=60, seed=1)
    wrong = monte_carlo_realized_ci(cfg, n_reps=60, seed=1, predictions=np.arange(150.0))
    assert np.mean(true) >= np.mean(wrong)


def test_expected_observation_time_monte_carlo():
    h = np.array([0.5, 2.0])
    rng = np.random.default_rng(0)
    for base in (ExponentialBaseline(1.0), WeibullBaseline(2.0, 1.0)):
        for cens in (Censoring("administrative", time=1.0), Censoring("both", time=1.5, rate=0.4)):
            exact = expected_observation_time(base, h, cens)
            for k in range(2):
                T = sample_event_times(base, np.full(200_000, h[k]), rng)
                D = cens.draw(rng, 200_000)
                assert np.minimum(T, D).mean() == pytest.approx(exact[k], abs=5e-3)


def test_inverse_mean():
    for base in (ExponentialBaseline(2.0), WeibullBaseline(1.5, 0.7)):
        h = np.array([0.3, 1.0, 4.0])
        assert inverse_mean(base, base.mean(h)) == pytest.approx(h, rel=1e-12)


def test_observation_hazards_never_below_truth():
    for base in (ExponentialBaseline(1.0), WeibullBaseline(2.0, 1.0)):
        for cens in (
            Censoring("administrative", time=1.0),
            Censoring("independent_exponential", rate=0.5),
            Censoring("both", time=1.5, rate=0.3),
        ):
            cfg = SimulationConfig(m=300, baseline=base, beta=(1.0, -0.5), censoring=cens, seed=1)
            tb = generate_cohort(cfg)
            ht = observation_hazards(tb, cfg)
            c = ~tb.cohort.event
            assert c.any()
            assert np.all(ht.rates[c] >= tb.true_hazards.rates[c])
            assert np.array_equal(ht.rates[~c], tb.true_hazards.rates[~c])


def test_censoring_raises_inverted_hazard_in_expectation():
    # average observed time over 2000 re-draws of T and D, inverted through the
    # true baseline, is never below the true hazard
    base = ExponentialBaseline(1.0)
    cens = Censoring("administrative", time=1.0)
    h = np.array([0.2, 0.7, 1.0, 1.8, 3.5])
    rng = np.random.default_rng(11)
    n = 2000
    T = sample_event_times(base, np.tile(h, (n, 1)), rng)
    D = cens.draw(rng, n * len(h)).reshape(n, len(h))
    mean_obs = np.minimum(T, D).mean(axis=0)
    s0 = discretize(base, 40.0, 40_000)
    h_tilde, clamp, _ = invert_hazards(s0, mean_obs)
    assert np.all(clamp == 0)
    assert np.all(h_tilde >= h - 1e-8)


def test_substreams_independent_and_reproducible():
    a = [g.random(3) for g in substreams(7)]
    b = [g.random(3) for g in substreams(7)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])
