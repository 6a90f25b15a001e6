"""Independent brute-force oracles used to freeze expected statistic values.

Everything here is written from definitions (explicit loops, enumeration),
deliberately independent of the implementations under test.
"""

from __future__ import annotations

import itertools
import math


def rank_by_definition(values) -> list[float]:
    """Average ranks computed by counting comparisons, one value at a time."""
    ranks = []
    for v in values:
        less = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        # positions occupied by the tie group: less+1 .. less+equal
        ranks.append(less + (equal + 1) / 2)
    return ranks


def pearson_by_definition(xs, ys) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    dx = math.sqrt(sum((x - mx) ** 2 for x in xs))
    dy = math.sqrt(sum((y - my) ** 2 for y in ys))
    return num / (dx * dy)


def spearman_rho_by_definition(xs, ys) -> float:
    return pearson_by_definition(rank_by_definition(xs), rank_by_definition(ys))


def spearman_permutation_p(xs, ys) -> float:
    """Exact two-sided permutation p-value over all orderings of ys."""
    rx = rank_by_definition(xs)
    ry = rank_by_definition(ys)
    observed = abs(pearson_by_definition(rx, ry))
    hits = 0
    total = 0
    for perm in itertools.permutations(ry):
        total += 1
        if abs(pearson_by_definition(rx, list(perm))) >= observed - 1e-12:
            hits += 1
    return hits / total


def wilson_by_definition(k: int, n: int, z: float) -> tuple[float, float]:
    """Wilson bounds as the roots of the score equation, found numerically."""

    def score(p: float) -> float:
        if p <= 0 or p >= 1:
            return float("inf")
        return abs(k / n - p) / math.sqrt(p * (1 - p) / n)

    # The interval is {p : |p_hat - p| <= z * sqrt(p(1-p)/n)}; scan for the
    # boundary by bisection on each side of p_hat.
    p_hat = k / n

    def boundary(lo: float, hi: float) -> float:
        for _ in range(200):
            mid = (lo + hi) / 2
            if score(mid) > z:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2

    lower = 0.0 if k == 0 else boundary(1e-12, p_hat)
    upper = 1.0 if k == n else boundary(1 - 1e-12, p_hat)
    if k == 0:
        upper = boundary(1 - 1e-12, p_hat if p_hat > 0 else 1e-9)
    return lower, upper
