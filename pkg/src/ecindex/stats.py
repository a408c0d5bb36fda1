"""Replicate summaries and the two significance tests used to flag subgroups."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

EXACT_MAX_N = 8


@dataclass(frozen=True)
class ReplicateSummary:
    values: tuple[float, ...]
    mean: float
    sd: float
    ci95: tuple[float, float]
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "values": list(self.values),
            "mean": self.mean,
            "sd": self.sd,
            "ci95": list(self.ci95),
            "level": self.level,
        }


def replicate_summary(values, level: float = 0.95) -> ReplicateSummary:
    """Mean, sample sd and normal-approximation interval mean +/- z * sd / sqrt(n)."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("need at least one value")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    half = float(sps.norm.ppf(0.5 + level / 2)) * sd / math.sqrt(v.size)
    return ReplicateSummary(tuple(v.tolist()), mean, sd, (mean - half, mean + half), level)


def sign_test(differences) -> float:
    """Exact two-sided sign test; zero differences are dropped."""
    d = np.asarray(list(differences), dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("sign test needs at least one nonzero difference")
    k = int(min((d > 0).sum(), (d < 0).sum()))
    return float(min(1.0, 2.0 * sps.binom.cdf(k, n, 0.5)))


def mann_whitney_u(a, b) -> float:
    """Count of pairs with a > b, ties counted one half."""
    a = np.asarray(list(a), dtype=float)
    b = np.asarray(list(b), dtype=float)
    return float((a[:, None] > b[None, :]).sum() + 0.5 * (a[:, None] == b[None, :]).sum())


def _asymptotic_p(a: np.ndarray, b: np.ndarray, u: float) -> float:
    n1, n2 = len(a), len(b)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie = float((counts**3 - counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return 1.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * sps.norm.sf(z)))


def _exact_p(n1: int, n2: int, u: float) -> float:
    # distribution of U by counting rank subsets; exact only without ties
    n = n1 + n2
    mu = n1 * n2 / 2.0
    dev = abs(u - mu)
    total = 0
    extreme = 0
    base = n1 * (n1 + 1) // 2
    for ranks in itertools.combinations(range(1, n + 1), n1):
        total += 1
        if abs(sum(ranks) - base - mu) >= dev - 1e-9:
            extreme += 1
    return min(1.0, extreme / total)


def mann_whitney(a, b, method: str = "auto") -> tuple[float, float]:
    """Two-sided Mann-Whitney test returning ``(U, p)``.

    ``U`` counts a-over-b wins. ``method`` is ``"asymptotic"`` (normal
    approximation with tie and continuity correction), ``"exact"`` (full
    enumeration of rank assignments, no ties allowed) or ``"auto"``, which is
    exact when both samples have at most 8 values and there are no ties.
    """
    a = np.asarray(list(a), dtype=float)
    b = np.asarray(list(b), dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    u = mann_whitney_u(a, b)
    ties = len(np.unique(np.concatenate([a, b]))) < a.size + b.size
    if method == "auto":
        method = "exact" if max(a.size, b.size) <= EXACT_MAX_N and not ties else "asymptotic"
    if method == "exact":
        if ties:
            raise ValueError("exact Mann-Whitney p-value requires untied samples")
        return u, _exact_p(a.size, b.size, u)
    if method == "asymptotic":
        return u, _asymptotic_p(a, b, u)
    raise ValueError(f"unknown method {method!r}")
