"""Shared fixtures and naive reference implementations.

The references below are written as plain double loops over members, without
reusing anything from the package, so they can serve as oracles.
"""

import numpy as np
import pytest

from ecindex.core import cohort_from_arrays


def ref_comparable(time, event):
    m = len(time)
    return [(i, j) for i in range(m) for j in range(m) if i != j and time[i] > time[j] and event[j]]


def _A(time, event, i, j):
    return int(time[i] > time[j] and event[j])


def ref_c_index(time, event, pred):
    num = den = 0
    for i, j in ref_comparable(time, event):
        den += 1
        num += pred[i] > pred[j]
    return num / den, den


def ref_sub_c_index(time, event, pred, members):
    """Literal double sum over i in the group and j anywhere, both directions,
    so a pair with both ends in the group is counted twice."""
    num = den = 0
    for i in members:
        for j in range(len(time)):
            if j == i:
                continue
            a_ij, a_ji = _A(time, event, i, j), _A(time, event, j, i)
            num += (pred[i] > pred[j]) * a_ij + (pred[j] > pred[i]) * a_ji
            den += a_ij + a_ji
    return num / den, den


def ref_within_c_index(time, event, pred, members):
    num = den = 0
    for i in members:
        for j in members:
            if j != i and _A(time, event, i, j):
                den += 1
                num += pred[i] > pred[j]
    return num / den, den


def ref_expected(time, event, pred, h, members=None):
    """Win probability of the higher-ranked member, averaged over the same
    (multi)set of pairs as the matching concordance index."""
    rows = range(len(time)) if members is None else members
    tot = den = 0.0
    for i in rows:
        for j in range(len(time)):
            if j == i or (members is None and not _A(time, event, i, j)):
                continue
            for a, b in ((i, j), (j, i)) if members is not None else ((i, j),):
                if not _A(time, event, a, b):
                    continue
                p_ab = h[b] / (h[a] + h[b])
                tot += p_ab if pred[a] > pred[b] else 1 - p_ab
                den += 1
    return tot / den


def ref_partial_loglik(time, event, z, beta):
    """Breslow log partial likelihood by explicit risk-set sums."""
    ll = 0.0
    for j in range(len(time)):
        if not event[j]:
            continue
        risk = sum(np.exp(z[k] @ beta) for k in range(len(time)) if time[k] >= time[j])
        ll += z[j] @ beta - np.log(risk)
    return ll


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_cohort(rng, m=30, p=2, groups=("a", "b", "c"), censor=0.3):
    time = rng.permutation(np.arange(1, m + 1)).astype(float) + rng.uniform(0, 0.5, m)
    event = rng.random(m) > censor
    event[np.argmin(time)] = True
    z = rng.normal(size=(m, p))
    g = [groups[k % len(groups)] for k in rng.permutation(m)]
    return cohort_from_arrays(time, event, z, g)


@pytest.fixture
def small_cohort(rng):
    return random_cohort(rng)
