"""C-Index, expected C-Index and their subpopulation variants.

A pair ``(i, j)`` is comparable (``A_ij = 1``) when ``time_i > time_j`` and
``j`` had an observed event. Every comparable pair is scored once, in the
direction the model predicts: ``M_ij`` for the concordance count and
``p_ij = h_j / (h_i + h_j)`` or ``p_ji`` for the expected count.

Pairs are scanned in row blocks, so memory stays O(block * m).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Cohort,
    ConcordanceReport,
    GroupMetrics,
    HazardAssignment,
    PredictionModel,
    TiesError,
)

BLOCK = 256


class NoComparablePairsError(ValueError):
    pass


class DegenerateBoundError(ValueError):
    pass


def pairwise_win_probability(h_i: float, h_j: float) -> float:
    """P(T_i > T_j) for proportional-hazards members with rates ``h_i``, ``h_j``."""
    if not (h_i > 0 and h_j > 0):
        raise ValueError("hazards must be positive")
    return h_j / (h_i + h_j)


@dataclass
class PairUniverse:
    """Comparable-pair counts for one cohort."""

    time: np.ndarray = field(repr=False)
    event: np.ndarray = field(repr=False)
    K: int
    per_group: dict[str, int]
    within_group: dict[str, int]

    def comparable(self, i: int, j: int) -> bool:
        return bool(i != j and self.time[i] > self.time[j] and self.event[j])


@dataclass
class _Scan:
    K: float
    conc: float
    expd: float
    K_l: np.ndarray
    conc_l: np.ndarray
    expd_l: np.ndarray
    Kw_l: np.ndarray
    concw_l: np.ndarray
    expdw_l: np.ndarray


def _require_distinct(values: np.ndarray, what: str):
    s = np.sort(values)
    if len(s) > 1 and np.any(s[1:] == s[:-1]):
        raise TiesError(f"{what} contain ties; perturb them first")


def _scan(time, event, pred, hazards, codes, n_groups) -> _Scan:
    m = len(time)
    G = np.zeros((m, n_groups))
    G[np.arange(m), codes] = 1.0
    K_l = np.zeros(n_groups)
    conc_l = np.zeros(n_groups)
    expd_l = np.zeros(n_groups)
    Kw_l = np.zeros(n_groups)
    concw_l = np.zeros(n_groups)
    expdw_l = np.zeros(n_groups)
    K = conc = expd = 0.0
    ev = event.astype(bool)
    for a in range(0, m, BLOCK):
        b = slice(a, min(a + BLOCK, m))
        rows = np.arange(b.start, b.stop)
        A = (time[b, None] > time[None, :]) & ev[None, :]
        Af = A.astype(float)
        Mf = (pred[b, None] > pred[None, :]) & A
        Cf = Mf.astype(float)
        gi = codes[b]
        for mat, tot_l, w_l, slot in ((Af, K_l, Kw_l, 0), (Cf, conc_l, concw_l, 1)):
            rs = mat.sum(axis=1)
            by_col = mat @ G
            tot_l += np.bincount(gi, weights=rs, minlength=n_groups) + by_col.sum(axis=0)
            w_l += np.bincount(gi, weights=by_col[np.arange(len(rows)), gi], minlength=n_groups)
            if slot == 0:
                K += rs.sum()
            else:
                conc += rs.sum()
        if hazards is not None:
            hi = hazards[b, None]
            hj = hazards[None, :]
            p_ij = hj / (hi + hj)
            P = np.where(Mf, p_ij, 1.0 - p_ij) * Af
            rs = P.sum(axis=1)
            by_col = P @ G
            expd_l += np.bincount(gi, weights=rs, minlength=n_groups) + by_col.sum(axis=0)
            expdw_l += np.bincount(gi, weights=by_col[np.arange(len(rows)), gi], minlength=n_groups)
            expd += rs.sum()
    return _Scan(K, conc, expd, K_l, conc_l, expd_l, Kw_l, concw_l, expdw_l)


def _prepare(cohort: Cohort, model: PredictionModel, hazards: HazardAssignment | None):
    pred = model.aligned(cohort)
    _require_distinct(pred, "predictions")
    _require_distinct(cohort.time, "observed times")
    h = None if hazards is None else hazards.aligned(cohort)
    return pred, h


def _run(cohort, model, hazards=None) -> _Scan:
    pred, h = _prepare(cohort, model, hazards)
    return _scan(cohort.time, cohort.event, pred, h, cohort.group_codes(), len(cohort.group_levels))


def _universe(cohort: Cohort, s: _Scan) -> PairUniverse:
    return PairUniverse(
        cohort.time,
        cohort.event,
        int(s.K),
        {g: int(k) for g, k in zip(cohort.group_levels, s.K_l)},
        {g: int(k) for g, k in zip(cohort.group_levels, s.Kw_l)},
    )


def _level(cohort: Cohort, label) -> int:
    try:
        return cohort.group_levels.index(label)
    except ValueError:
        raise ValueError(f"unknown group {label!r}") from None


def pair_universe(cohort: Cohort) -> PairUniverse:
    m = cohort.m
    s = _scan(cohort.time, cohort.event, np.zeros(m), None, cohort.group_codes(), len(cohort.group_levels))
    return _universe(cohort, s)


def c_index(cohort: Cohort, model: PredictionModel) -> tuple[float, PairUniverse]:
    """Harrell's C-Index over comparable pairs."""
    s = _run(cohort, model)
    if s.K == 0:
        raise NoComparablePairsError("no comparable pairs")
    return float(s.conc / s.K), _universe(cohort, s)


def expected_c_index(cohort: Cohort, hazards: HazardAssignment, model: PredictionModel) -> float:
    """Expected C-Index: each comparable pair scores the win probability of the
    member the model ranks higher."""
    s = _run(cohort, model, hazards)
    if s.K == 0:
        raise NoComparablePairsError("no comparable pairs")
    return float(s.expd / s.K)


def uncensored_expected_c_index(
    cohort: Cohort, hazards: HazardAssignment, model: PredictionModel
) -> float:
    """Expected C-Index over all m(m-1)/2 pairs; requires every member to have an event."""
    if not np.all(cohort.event):
        raise ValueError("uncensored case only: cohort contains censored members")
    pred = model.aligned(cohort)
    _require_distinct(pred, "predictions")
    h = hazards.aligned(cohort)
    m = cohort.m
    if m < 2:
        raise NoComparablePairsError("no comparable pairs")
    total = 0.0
    for a in range(0, m, BLOCK):
        b = slice(a, min(a + BLOCK, m))
        hi, hj = h[b, None], h[None, :]
        p_ij = hj / (hi + hj)
        # ordered pairs with M_ij = 1 contribute p_ij
        total += np.where(pred[b, None] > pred[None, :], p_ij, 0.0).sum()
    return float(total / (m * (m - 1) / 2))


def sub_c_index(cohort: Cohort, model: PredictionModel, label) -> float:
    """Concordance over comparable pairs with at least one member in ``label``,
    scored against the whole population."""
    k = _level(cohort, label)
    s = _run(cohort, model)
    if s.K_l[k] == 0:
        raise NoComparablePairsError(f"group {label!r} has no comparable pairs")
    return float(s.conc_l[k] / s.K_l[k])


def within_sub_c_index(cohort: Cohort, model: PredictionModel, label) -> float:
    k = _level(cohort, label)
    s = _run(cohort, model)
    if s.Kw_l[k] == 0:
        raise NoComparablePairsError(f"group {label!r} has no within-group comparable pairs")
    return float(s.concw_l[k] / s.Kw_l[k])


def expected_sub_c_index(
    cohort: Cohort, hazards: HazardAssignment, model: PredictionModel, label
) -> float:
    k = _level(cohort, label)
    s = _run(cohort, model, hazards)
    if s.K_l[k] == 0:
        raise NoComparablePairsError(f"group {label!r} has no comparable pairs")
    return float(s.expd_l[k] / s.K_l[k])


def discrimination_ratio(ci: float, eci: float) -> float:
    """(ci - 0.5) / (eci - 0.5); also serves the subpopulation ratio."""
    if not eci > 0.5:
        raise DegenerateBoundError(f"degenerate bound: expected C-Index {eci} <= 0.5")
    return (ci - 0.5) / (eci - 0.5)


def _safe_ratio(ci, eci):
    try:
        return discrimination_ratio(ci, eci)
    except DegenerateBoundError:
        return None


def _div(a, b):
    return float(a / b) if b else None


def concordance_report(
    cohort: Cohort,
    model: PredictionModel,
    bound_hazards: HazardAssignment,
    bound_model: PredictionModel,
    scenario: str = "",
    replicate: int | None = None,
) -> ConcordanceReport:
    """All metrics for one evaluation cohort.

    ``model`` supplies CI/SUBCI; ``bound_model`` with ``bound_hazards`` supplies
    the expected bound (ECI/SUBECI), typically the observed-time ordering with
    hazards inverted from observed times.
    """
    codes = cohort.group_codes()
    L = len(cohort.group_levels)
    pred, _ = _prepare(cohort, model, None)
    s = _scan(cohort.time, cohort.event, pred, None, codes, L)
    bpred, bh = _prepare(cohort, bound_model, bound_hazards)
    e = _scan(cohort.time, cohort.event, bpred, bh, codes, L)
    if s.K == 0:
        raise NoComparablePairsError("no comparable pairs")
    ci = s.conc / s.K
    eci = e.expd / e.K
    groups = {}
    for k, g in enumerate(cohort.group_levels):
        if s.K_l[k] == 0:
            continue
        subci = s.conc_l[k] / s.K_l[k]
        subeci = e.expd_l[k] / e.K_l[k]
        groups[str(g)] = GroupMetrics(
            subci=float(subci),
            subeci=float(subeci),
            subdr=_safe_ratio(subci, subeci),
            within_subci=_div(s.concw_l[k], s.Kw_l[k]),
            pair_count=int(s.K_l[k]),
            within_pair_count=int(s.Kw_l[k]),
        )
    return ConcordanceReport(
        ci=float(ci),
        eci=float(eci),
        dr=_safe_ratio(ci, eci),
        pair_count=int(s.K),
        per_group=groups,
        scenario=scenario,
        replicate=replicate,
    )
