"""Baseline survival estimation and the restricted-mean / hazard inversion pair.

The restricted mean of a member with hazard ``h`` is

    phi(h) = integral_0^tau S_0(t)^h dt,

evaluated exactly on the step function. ``phi`` is continuous and strictly
decreasing in ``h`` as soon as some segment has ``0 < S_0 < 1``, so observed
times can be inverted into hazards.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import (
    BaselineSurvival,
    Cohort,
    HazardAssignment,
    NoEventsError,
    Provenance,
)

H_MIN = 1e-12
H_MAX = 1e12
DEFAULT_TOL = 1e-8
MAX_ITER = 200


def _event_table(cohort: Cohort):
    if cohort.m == 0:
        raise ValueError("empty cohort")
    if not cohort.event.any():
        raise NoEventsError("no events")
    t = cohort.time
    uniq = np.unique(t[cohort.event])
    deaths = np.searchsorted(uniq, t[cohort.event])
    d = np.bincount(deaths, minlength=len(uniq)).astype(float)
    return uniq, d


def _as_baseline(knots, values, cohort: Cohort, horizon):
    tau = float(cohort.time.max()) if horizon is None else float(horizon)
    # float noise can push a product or exp(-H) a hair outside [0, 1]
    values = np.minimum.accumulate(np.clip(values, 0.0, 1.0))
    return BaselineSurvival(knots, values, max(tau, knots[-1]), values[-1])


def kaplan_meier(cohort: Cohort, horizon: float | None = None) -> BaselineSurvival:
    """Product-limit estimator over the distinct event times of ``cohort``."""
    uniq, d = _event_table(cohort)
    at_risk = cohort.m - np.searchsorted(np.sort(cohort.time), uniq, side="left")
    surv = np.cumprod((at_risk - d) / at_risk)
    return _as_baseline(uniq, surv, cohort, horizon)


def breslow_cumulative_hazard(cohort: Cohort, coefficients) -> tuple[np.ndarray, np.ndarray]:
    beta = np.asarray(coefficients, dtype=float).reshape(-1)
    if beta.shape[0] != cohort.dim:
        raise ValueError(f"expected {cohort.dim} coefficients, got {beta.shape[0]}")
    uniq, d = _event_table(cohort)
    w = np.exp(cohort.covariates @ beta) if cohort.dim else np.ones(cohort.m)
    order = np.argsort(cohort.time, kind="stable")
    ts = cohort.time[order]
    # risk-set sum at t: sum of weights with time >= t
    tail = np.cumsum(w[order][::-1])[::-1]
    first = np.searchsorted(ts, uniq, side="left")
    return uniq, np.cumsum(d / tail[first])


def breslow_baseline(cohort: Cohort, coefficients, horizon: float | None = None) -> BaselineSurvival:
    """S_0(t) = exp(-H_0(t)) with the Breslow cumulative baseline hazard."""
    uniq, cumhaz = breslow_cumulative_hazard(cohort, coefficients)
    return _as_baseline(uniq, np.exp(-cumhaz), cohort, horizon)


def nelson_aalen(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    return breslow_cumulative_hazard(cohort, np.zeros(cohort.dim))


# --- restricted mean ---------------------------------------------------------


class _Phi:
    """Vectorised phi(h) and d phi / d log h for one baseline."""

    def __init__(self, baseline: BaselineSurvival):
        lead, vals, lengths = baseline.segments()
        keep = lengths > 0
        self.lead = lead
        self.vals = vals[keep]
        self.lengths = lengths[keep]
        with np.errstate(divide="ignore"):
            self.logs = np.log(self.vals)
        self.zero = self.vals == 0
        # phi at h -> 0+: segments with S_0 > 0 count fully
        self.sup = lead + float(self.lengths[~self.zero].sum())

    def __call__(self, h, with_slope=False):
        h = np.asarray(h, dtype=float)
        shape = h.shape
        h = h.reshape(-1)
        out = np.empty_like(h)
        slope = np.empty_like(h) if with_slope else None
        k = max(len(self.vals), 1)
        step = max(1, 2_000_000 // k)
        for a in range(0, len(h), step):
            hb = h[a:a + step, None]
            with np.errstate(invalid="ignore"):
                pw = np.exp(hb * self.logs)
            pw[:, self.zero] = 0.0
            out[a:a + step] = self.lead + pw @ self.lengths
            if with_slope:
                term = pw * np.where(self.zero, 0.0, self.logs)
                slope[a:a + step] = hb[:, 0] * (term @ self.lengths)
        if with_slope:
            return out.reshape(shape), slope.reshape(shape)
        return out.reshape(shape)


def restricted_mean(baseline: BaselineSurvival, hazard) -> float | np.ndarray:
    """Integral of ``S_0(t)**hazard`` over ``[0, horizon]``; accepts arrays."""
    h = np.asarray(hazard, dtype=float)
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise ValueError("hazard must be positive and finite")
    out = _Phi(baseline)(h)
    return float(out) if out.ndim == 0 else out


class Clamp(str, enum.Enum):
    NONE = "none"
    AT_MIN = "at_min"
    AT_MAX = "at_max"


@dataclass(frozen=True)
class InversionResult:
    hazard: float
    clamped: Clamp
    residual: float


def _invert(phi: _Phi, targets: np.ndarray, tol: float, h_min: float, h_max: float):
    """Safeguarded Newton on u = log h, bracketed, falling back to bisection."""
    n = len(targets)
    u_lo = np.full(n, np.log(h_min))
    u_hi = np.full(n, np.log(h_max))
    f_lo = phi(np.exp(u_lo)) - targets  # >= 0 when target reachable
    f_hi = phi(np.exp(u_hi)) - targets  # <= 0 when target reachable
    clamp = np.zeros(n, dtype=np.int8)  # 0 none, 1 at_min, 2 at_max
    clamp[f_lo <= 0] = 1
    clamp[(f_hi >= 0) & (clamp == 0)] = 2
    u = np.where(clamp == 1, u_lo, np.where(clamp == 2, u_hi, 0.0))
    resid = np.where(clamp == 1, -f_lo, np.where(clamp == 2, f_hi, np.inf))

    active = np.flatnonzero(clamp == 0)
    if len(active):
        # coarse grid to start each target inside a narrow bracket
        grid = np.linspace(np.log(h_min), np.log(h_max), 65)
        pg = phi(np.exp(grid))
        # pg is non-increasing; find the last grid point with phi >= target
        pos = np.searchsorted(-pg, -targets[active], side="right") - 1
        pos = np.clip(pos, 0, len(grid) - 2)
        lo, hi = grid[pos], grid[pos + 1]
        cur = 0.5 * (lo + hi)
        tgt = targets[active]
        idx = active
        # aim well inside tol; quadratic convergence makes this almost free
        aim = 1e-3 * tol
        for _ in range(MAX_ITER):
            f, slope = phi(np.exp(cur), with_slope=True)
            f = f - tgt
            done = np.abs(f) <= aim
            u[idx[done]] = cur[done]
            resid[idx[done]] = np.abs(f[done])
            keep = ~done
            if not keep.any():
                break
            idx, cur, f, slope, lo, hi, tgt = (
                a[keep] for a in (idx, cur, f, slope, lo, hi, tgt)
            )
            # phi decreasing in u: f > 0 means u too small
            lo = np.where(f > 0, cur, lo)
            hi = np.where(f > 0, hi, cur)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = cur - f / slope
            ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
            cur = np.where(ok, newton, 0.5 * (lo + hi))
            stalled = hi - lo <= 1e-15 * np.maximum(1.0, np.abs(cur))
            if stalled.any():
                fs = phi(np.exp(cur[stalled])) - tgt[stalled]
                u[idx[stalled]] = cur[stalled]
                resid[idx[stalled]] = np.abs(fs)
                keep = ~stalled
                idx, cur, lo, hi, tgt = (a[keep] for a in (idx, cur, lo, hi, tgt))
                if not len(idx):
                    break
        else:
            fs = phi(np.exp(cur)) - tgt
            u[idx] = cur
            resid[idx] = np.abs(fs)
    return np.exp(u), clamp, resid


_CLAMPS = (Clamp.NONE, Clamp.AT_MIN, Clamp.AT_MAX)


def invert_hazard(
    baseline: BaselineSurvival,
    target_time: float,
    tolerance: float = DEFAULT_TOL,
    h_min: float = H_MIN,
    h_max: float = H_MAX,
) -> InversionResult:
    """Hazard ``h`` with ``restricted_mean(baseline, h) == target_time``.

    Targets at or beyond ``phi(h_min)`` clamp to ``h_min``; targets at or below
    ``phi(h_max)`` (roughly the first knot time) clamp to ``h_max``.
    """
    if not target_time > 0:
        raise ValueError("target_time must be positive")
    h, clamp, resid = _invert(_Phi(baseline), np.array([float(target_time)]), tolerance, h_min, h_max)
    return InversionResult(float(h[0]), _CLAMPS[clamp[0]], float(resid[0]))


def invert_hazards(
    baseline: BaselineSurvival,
    targets,
    tolerance: float = DEFAULT_TOL,
    h_min: float = H_MIN,
    h_max: float = H_MAX,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`invert_hazard`; returns (hazards, clamp codes, residuals)."""
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if np.any(targets <= 0):
        raise ValueError("target times must be positive")
    return _invert(_Phi(baseline), targets, tolerance, h_min, h_max)


def observed_hazards(
    cohort: Cohort, baseline: BaselineSurvival, tolerance: float = DEFAULT_TOL
) -> HazardAssignment:
    """Invert every observed time into the hazard whose restricted mean equals it."""
    h, clamp, _ = invert_hazards(baseline, cohort.time, tolerance)
    counts = Counter(_CLAMPS[c].value for c in clamp)
    return HazardAssignment(
        cohort.ids,
        h,
        Provenance.OBSERVED_INVERTED,
        clamp_counts={c.value: counts.get(c.value, 0) for c in _CLAMPS},
    )
