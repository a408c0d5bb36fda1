"""Synthetic proportional-hazards cohorts with known ground truth, and
Monte-Carlo oracles for the pairwise win probability and the expected C-Index.

Event times are drawn by inverse transform: with U ~ Unif(0, 1) the member's
survival function satisfies S_0(T)**h = U, i.e. T = S_0^{-1}(U**(1/h)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .concordance import c_index
from .core import Cohort, HazardAssignment, PredictionModel, Provenance, BaselineSurvival
from .coxfit import CoxOptions, fit_cox

# substream indices of the per-purpose generators
COVARIATES, EVENTS, CENSORING, GROUPS = range(4)


def substreams(seed, n: int = 4) -> list[np.random.Generator]:
    """Independent generators derived from one 64-bit seed (or SeedSequence)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]


# --- baselines ---------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialBaseline:
    rate: float = 1.0
    kind: str = field(default="exponential", init=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def survival(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def sample(self, log_u, h):
        # S_0(T)**h = U  <=>  -rate * T * h = log U
        return -log_u / (h * self.rate)

    def mean(self, h):
        return 1.0 / (np.asarray(h, dtype=float) * self.rate)


@dataclass(frozen=True)
class WeibullBaseline:
    shape: float = 2.0
    scale: float = 1.0
    kind: str = field(default="weibull", init=False)

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("weibull shape and scale must be positive")

    def survival(self, t):
        return np.exp(-((np.asarray(t, dtype=float) / self.scale) ** self.shape))

    def sample(self, log_u, h):
        return self.scale * (-log_u / h) ** (1.0 / self.shape)

    def mean(self, h):
        h = np.asarray(h, dtype=float)
        return self.scale * h ** (-1.0 / self.shape) * math.gamma(1 + 1 / self.shape)


@dataclass(frozen=True)
class StepBaseline:
    """S_0 = 1 before knots[0] and values[j] on [knots[j], knots[j+1])."""

    knots: tuple[float, ...]
    values: tuple[float, ...]
    kind: str = field(default="step", init=False)

    def __post_init__(self):
        # reuse the validation of the estimator-side type
        BaselineSurvival(self.knots, self.values, self.knots[-1])
        object.__setattr__(self, "knots", tuple(float(v) for v in self.knots))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def never_ends(self) -> bool:
        return self.values[-1] > 0

    def survival(self, t):
        idx = np.searchsorted(self.knots, np.asarray(t, dtype=float), side="right")
        return np.concatenate([[1.0], self.values])[idx]

    def sample(self, log_u, h):
        # smallest knot with S_0 <= U**(1/h); +inf when the tail never gets there
        target = np.asarray(log_u, dtype=float) / h
        with np.errstate(divide="ignore"):
            logs = np.log(np.asarray(self.values))
        # logs is non-increasing; want first index with logs <= target
        idx = np.searchsorted(-logs, -target, side="left")
        knots = np.append(self.knots, np.inf)
        return knots[idx]


Baseline = ExponentialBaseline | WeibullBaseline | StepBaseline


def baseline_from_dict(d: Mapping) -> Baseline:
    kind = d.get("kind")
    if kind == "exponential":
        return ExponentialBaseline(float(d.get("rate", 1.0)))
    if kind == "weibull":
        return WeibullBaseline(float(d.get("shape", 2.0)), float(d.get("scale", 1.0)))
    if kind == "step":
        return StepBaseline(tuple(d["knots"]), tuple(d["values"]))
    raise ValueError(f"unknown baseline kind {kind!r}")


def discretize(baseline: Baseline, horizon: float, n: int = 20000) -> BaselineSurvival:
    """Dense step approximation of a parametric baseline on ``(0, horizon]``."""
    if isinstance(baseline, StepBaseline):
        return BaselineSurvival(baseline.knots, baseline.values, max(horizon, baseline.knots[-1]))
    t = np.linspace(horizon / n, horizon, n)
    return BaselineSurvival(t, baseline.survival(t), horizon)


# --- covariates, censoring, groups --------------------------------------------


@dataclass(frozen=True)
class CovariateSpec:
    dist: str = "normal"
    p: float = 0.5
    a: float = 0.0
    b: float = 1.0
    name: str | None = None

    def __post_init__(self):
        if self.dist not in ("normal", "bernoulli", "uniform"):
            raise ValueError(f"unknown covariate distribution {self.dist!r}")
        if self.dist == "bernoulli" and not 0 <= self.p <= 1:
            raise ValueError("bernoulli p must be in [0, 1]")
        if self.dist == "uniform" and not self.a < self.b:
            raise ValueError("uniform needs a < b")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        if self.dist == "normal":
            return rng.standard_normal(m)
        if self.dist == "bernoulli":
            return (rng.random(m) < self.p).astype(float)
        return rng.uniform(self.a, self.b, m)


@dataclass(frozen=True)
class Censoring:
    kind: str = "none"  # none | administrative | independent_exponential | both
    time: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "administrative", "independent_exponential", "both"):
            raise ValueError(f"unknown censoring kind {self.kind!r}")
        if self.kind in ("administrative", "both") and not (self.time and self.time > 0):
            raise ValueError("administrative censoring needs a positive time")
        if self.kind in ("independent_exponential", "both") and not (self.rate and self.rate > 0):
            raise ValueError("exponential censoring needs a positive rate")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        d = np.full(m, np.inf)
        if self.kind in ("independent_exponential", "both"):
            d = rng.exponential(1.0 / self.rate, m)
        if self.kind in ("administrative", "both"):
            d = np.minimum(d, self.time)
        return d


@dataclass(frozen=True)
class GroupRule:
    kind: str = "single"  # single | multinomial | threshold
    labels: tuple[str, ...] = ("all",)
    probs: tuple[float, ...] | None = None
    column: int = 0
    cuts: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))
        if self.kind == "multinomial":
            if self.probs is None or len(self.probs) != len(self.labels):
                raise ValueError("multinomial groups need one probability per label")
            if any(p < 0 for p in self.probs) or not math.isclose(sum(self.probs), 1.0, abs_tol=1e-9):
                raise ValueError("multinomial weights must be non-negative and sum to 1")
        elif self.kind == "threshold":
            if len(self.labels) != len(self.cuts) + 1 or list(self.cuts) != sorted(self.cuts):
                raise ValueError("threshold groups need sorted cuts and len(cuts)+1 labels")
        elif self.kind != "single" or len(self.labels) != 1:
            raise ValueError(f"bad group rule {self.kind!r}")

    def assign(self, rng: np.random.Generator, X: np.ndarray) -> np.ndarray:
        m = X.shape[0]
        labels = np.array(self.labels, dtype=object)
        if self.kind == "single":
            return np.full(m, self.labels[0], dtype=object)
        if self.kind == "multinomial":
            return labels[rng.choice(len(self.labels), size=m, p=np.asarray(self.probs))]
        if not 0 <= self.column < X.shape[1]:
            raise ValueError("threshold column out of range")
        return labels[np.searchsorted(self.cuts, X[:, self.column], side="right")]


@dataclass(frozen=True)
class SimulationConfig:
    m: int
    baseline: Baseline = field(default_factory=ExponentialBaseline)
    beta: tuple[float, ...] = ()
    covariates: tuple[CovariateSpec, ...] = ()
    censoring: Censoring = field(default_factory=Censoring)
    groups: GroupRule = field(default_factory=GroupRule)
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        covs = self.covariates or tuple(CovariateSpec() for _ in self.beta)
        object.__setattr__(self, "covariates", tuple(covs))
        if len(self.covariates) != len(self.beta):
            raise ValueError("need one covariate spec per coefficient")
        if isinstance(self.baseline, StepBaseline) and self.baseline.never_ends and self.censoring.kind == "none":
            raise ValueError("step baseline with positive tail needs censoring")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name or f"x{k + 1}" for k, c in enumerate(self.covariates))

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimulationConfig":
        known = {"m", "baseline", "beta", "covariates", "censoring", "groups", "seed"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        if "m" not in d:
            raise ValueError("config needs 'm'")
        beta = tuple(d.get("beta", ()))
        covs = tuple(CovariateSpec(**c) for c in d.get("covariates", ()))
        g = dict(d.get("groups", {"kind": "single"}))
        for k in ("labels", "probs", "cuts"):
            if k in g and g[k] is not None:
                g[k] = tuple(g[k])
        return cls(
            m=int(d["m"]),
            baseline=baseline_from_dict(d.get("baseline", {"kind": "exponential"})),
            beta=beta,
            covariates=covs,
            censoring=Censoring(**d.get("censoring", {"kind": "none"})),
            groups=GroupRule(**g),
            seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariates"] = [asdict(c) for c in self.covariates]
        return d


@dataclass(frozen=True, eq=False)
class TruthBundle:
    cohort: Cohort
    true_hazards: HazardAssignment
    true_event_times: np.ndarray
    censor_times: np.ndarray

    def to_dict(self) -> dict:
        def enc(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "ids": list(self.cohort.ids),
            "hazards": self.true_hazards.rates.tolist(),
            "event_times": enc(self.true_event_times),
            "censor_times": enc(self.censor_times),
        }

    def uncensored(self) -> Cohort:
        """The same members observed at their true event times."""
        return self.cohort.replace(time=self.true_event_times, event=np.ones(self.cohort.m, bool))


def _draw_covariates(config: SimulationConfig, rng) -> np.ndarray:
    cols = [spec.draw(rng, config.m) for spec in config.covariates]
    return np.column_stack(cols) if cols else np.zeros((config.m, 0))


def _observe(config, T, D):
    if np.any(~np.isfinite(np.minimum(T, D))):
        raise ValueError("some members never have an event nor a censoring time")
    return np.minimum(T, D), T < D


def sample_event_times(baseline: Baseline, hazards, rng: np.random.Generator) -> np.ndarray:
    h = np.asarray(hazards, dtype=float)
    # 1 - random() lies in (0, 1], avoiding log(0)
    log_u = np.log1p(-rng.random(h.shape))
    return baseline.sample(log_u, h)


def generate_cohort(config: SimulationConfig) -> TruthBundle:
    """Draw one cohort; deterministic given ``config.seed``."""
    streams = substreams(config.seed)
    X = _draw_covariates(config, streams[COVARIATES])
    h = np.exp(X @ np.asarray(config.beta)) if config.beta else np.ones(config.m)
    T = sample_event_times(config.baseline, h, streams[EVENTS])
    D = config.censoring.draw(streams[CENSORING], config.m)
    obs, ev = _observe(config, T, D)
    groups = config.groups.assign(streams[GROUPS], X)
    levels = tuple(lvl for lvl in config.groups.labels if np.any(groups == lvl))
    ids = tuple(f"s{k:06d}" for k in range(config.m))
    cohort = Cohort(
        ids=ids,
        time=obs,
        event=ev,
        covariates=X,
        group=groups,
        covariate_names=config.covariate_names,
        group_levels=levels,
    )
    return TruthBundle(cohort, HazardAssignment(ids, h, Provenance.TRUE_SYNTHETIC), T, D)


def resample(bundle: TruthBundle, config: SimulationConfig, seed) -> TruthBundle:
    """New event and censoring times for the same members and hazards."""
    streams = substreams(seed)
    h = bundle.true_hazards.rates
    T = sample_event_times(config.baseline, h, streams[EVENTS])
    D = config.censoring.draw(streams[CENSORING], len(h))
    obs, ev = _observe(config, T, D)
    return TruthBundle(bundle.cohort.replace(time=obs, event=ev), bundle.true_hazards, T, D)


def monte_carlo_win_probability(baseline: Baseline, h_i: float, h_j: float, n_pairs: int, seed=0) -> float:
    """Fraction of ``n_pairs`` independent draws with T_i > T_j."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng_i, rng_j = substreams(seed, 2)
    ti = sample_event_times(baseline, np.full(n_pairs, float(h_i)), rng_i)
    tj = sample_event_times(baseline, np.full(n_pairs, float(h_j)), rng_j)
    return float(np.mean(ti > tj))


def monte_carlo_realized_ci(
    config: SimulationConfig,
    model_rule: str = "true_model",
    n_reps: int = 100,
    seed=0,
    predictions: Sequence[float] | None = None,
) -> list[float]:
    """Realised C-Index of a fixed model over re-drawn event times.

    The cohort (covariates, hazards, groups) is drawn once from ``config``;
    every replicate re-draws event and censoring times. ``model_rule`` is
    ``"true_model"`` (rank by true hazard) or ``"fitted_cox"`` (rank by a Cox
    model fitted on the first draw); ``predictions`` overrides both.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    bundle = generate_cohort(config)
    ids = bundle.cohort.ids
    if predictions is not None:
        model = PredictionModel(ids, predictions)
    elif model_rule == "true_model":
        model = PredictionModel(ids, -bundle.true_hazards.rates)
    elif model_rule == "fitted_cox":
        fit = fit_cox(bundle.cohort, CoxOptions())
        model = PredictionModel(ids, -(bundle.cohort.covariates @ fit.coefficients))
    else:
        raise ValueError(f"unknown model_rule {model_rule!r}")
    children = np.random.SeedSequence(seed).spawn(n_reps)
    out = []
    for child in children:
        rep = resample(bundle, config, child)
        out.append(float(c_index(rep.cohort, model)[0]))
    return out


def _censoring_of(censoring) -> Censoring:
    if isinstance(censoring, Censoring):
        return censoring
    return Censoring("administrative", time=float(censoring))


def expected_observation_time(baseline: Baseline, hazards, censoring, n_grid: int = 20000) -> np.ndarray:
    """E[min(T_i, D_i)] = integral_0^inf S_0(t)**h_i * G(t) dt.

    ``censoring`` is a :class:`Censoring` or a fixed censoring time; G is the
    censoring survival function. Exponential baselines use the closed form.
    """
    c = _censoring_of(censoring)
    h = np.atleast_1d(np.asarray(hazards, dtype=float))
    rate = c.rate if c.kind in ("independent_exponential", "both") else 0.0
    stop = c.time if c.kind in ("administrative", "both") else np.inf
    if c.kind == "none":
        if isinstance(baseline, StepBaseline):
            raise ValueError("step baseline needs censoring for a finite mean")
        return np.asarray(baseline.mean(h), dtype=float)
    if isinstance(baseline, ExponentialBaseline):
        lam = baseline.rate * h + rate
        return -np.expm1(-lam * stop) / lam if np.isfinite(stop) else 1.0 / lam
    if not np.isfinite(stop):
        stop = 30.0 / rate  # G(stop) = e^-30
    grid = np.linspace(0.0, stop, n_grid + 1)
    with np.errstate(divide="ignore"):
        logs = np.log(baseline.survival(grid))
    vals = np.exp(np.outer(h, logs) - rate * grid)
    return np.trapezoid(vals, grid, axis=1)


def inverse_mean(baseline: Baseline, target) -> np.ndarray:
    """Hazard whose mean survival time under ``baseline`` equals ``target``.

    Step baselines use the restricted mean up to their last knot.
    """
    y = np.atleast_1d(np.asarray(target, dtype=float))
    if np.any(y <= 0):
        raise ValueError("target means must be positive")
    if isinstance(baseline, ExponentialBaseline):
        return 1.0 / (baseline.rate * y)
    if isinstance(baseline, WeibullBaseline):
        return (baseline.scale * math.gamma(1 + 1 / baseline.shape) / y) ** baseline.shape
    from .baseline import invert_hazards

    h, _, _ = invert_hazards(discretize(baseline, baseline.knots[-1]), y)
    return h


def observation_hazards(bundle: TruthBundle, config: SimulationConfig) -> HazardAssignment:
    """Hazards matching expected observation times: true hazards for members
    with an event, and for censored members the hazard whose mean survival
    equals E[min(T_i, D_i)] given their true hazard.

    Censoring only shortens observation, so for exponential and Weibull
    baselines these hazards are never below the true ones.
    """
    h = bundle.true_hazards.rates
    ev = bundle.cohort.event
    out = h.copy()
    cens = ~ev
    if cens.any():
        et = expected_observation_time(config.baseline, h[cens], config.censoring)
        out[cens] = inverse_mean(config.baseline, et)
    return HazardAssignment(bundle.cohort.ids, out, Provenance.TRUE_SYNTHETIC)
