"""Mann-Whitney U test with an exact small-sample path.

U is computed from midrank sums, so ties are handled. The exact two-sided
p-value enumerates the permutation distribution of U over every way of
assigning the pooled values to the two groups (computed by dynamic
programming over midranks, which is equivalent to full enumeration); the
large-sample path uses the normal approximation with tie-corrected variance
and a continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSamplesError

EXACT_LIMIT = 10_000  # exact enumeration whenever n1 * n2 is at most this

METHOD_EXACT = "exact"
METHOD_NORMAL = "normal_approx"


@dataclass(frozen=True)
class StatTestResult:
    u_statistic: float
    p_value: float
    method: str


def _midranks(values: Sequence[float]) -> list[float]:
    """Fractional ranks: ties get the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def _exact_tail_probs(doubled: list[int], n1: int, s_obs: int) -> tuple[float, float]:
    """P(rank-sum <= s_obs) and P(rank-sum >= s_obs) over all assignments.

    `doubled` holds 2x the pooled midranks (integers). The DP table counts
    subsets of each size by their doubled rank-sum; row n1 is the full
    permutation distribution of the observed statistic.
    """
    smax = sum(doubled)
    table = np.zeros((n1 + 1, smax + 1), dtype=np.float64)
    table[0, 0] = 1.0
    for r in doubled:
        for j in range(n1, 0, -1):
            table[j, r:] += table[j - 1, : smax + 1 - r]
    dist = table[n1]
    total = dist.sum()
    le = float(dist[: s_obs + 1].sum()) / total
    ge = float(dist[s_obs:].sum()) / total
    return le, ge


def mann_whitney_u(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    method: str = "auto",
) -> StatTestResult:
    """Two-sided Mann-Whitney U test; U is reported for sample_a.

    method "auto" picks exact enumeration when n1*n2 <= 10,000 and the
    normal approximation otherwise; "exact" or "normal_approx" force a path.
    Raises DegenerateSamplesError when every pooled value is identical
    (callers conventionally treat that as p = 1).
    """
    a = [float(v) for v in sample_a]
    b = [float(v) for v in sample_b]
    if not a or not b:
        raise ValueError("both samples must be non-empty")
    pooled = a + b
    if all(v == pooled[0] for v in pooled):
        raise DegenerateSamplesError("all values identical across both samples")
    n1, n2 = len(a), len(b)
    ranks = _midranks(pooled)
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2.0

    if method == "auto":
        method = METHOD_EXACT if n1 * n2 <= EXACT_LIMIT else METHOD_NORMAL
    if method == METHOD_EXACT:
        doubled = [int(round(2 * r)) for r in ranks]
        s_obs = int(round(2 * r1))
        le, ge = _exact_tail_probs(doubled, n1, s_obs)
        p = min(1.0, 2.0 * min(le, ge))
        return StatTestResult(u1, p, METHOD_EXACT)
    if method != METHOD_NORMAL:
        raise ValueError(f"unknown method {method!r}")

    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = 0.0
    for _, group in _tie_groups(pooled):
        tie_term += group**3 - group
    variance = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        raise DegenerateSamplesError("zero variance under the normal approximation")
    delta = u1 - mu
    correction = 0.5 * (1 if delta > 0 else -1 if delta < 0 else 0)
    z = (delta - correction) / math.sqrt(variance) if delta != 0 else 0.0
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return StatTestResult(u1, min(1.0, p), METHOD_NORMAL)


def _tie_groups(values: Sequence[float]) -> list[tuple[float, int]]:
    groups: list[tuple[float, int]] = []
    for v in sorted(values):
        if groups and groups[-1][0] == v:
            groups[-1] = (v, groups[-1][1] + 1)
        else:
            groups.append((v, 1))
    return groups
