"""Aggregate statistics over a run ledger.

Binomial rates carry Wilson score intervals; mean shifts carry bootstrap
percentile intervals (nearest-rank, deterministic for a fixed seed); the
baseline-vs-valid-count association uses Spearman rank correlation with
average-rank tie handling and a two-sided t-approximation p-value, with an
exact permutation mode for small samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import permutations
from typing import Sequence

import numpy as np
from scipy.special import stdtr

from .model import LeverlabError


class DegenerateSample(LeverlabError):
    """A statistic that is undefined for the given sample."""


class EmptySample(LeverlabError):
    pass


class LengthMismatch(LeverlabError):
    pass


class IntervalMethod(str, Enum):
    WILSON = "Wilson"
    BOOTSTRAP_PERCENTILE = "BootstrapPercentile"


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    n: int
    method: IntervalMethod

    def to_payload(self) -> dict:
        return {"point": self.point, "lo": self.lo, "hi": self.hi,
                "n": self.n, "method": self.method.value}


def wilson_interval(k: int, n: int, z: float = 1.96) -> IntervalEstimate:
    """Wilson score interval for a binomial proportion.

    point is the raw rate k/n; lo and hi are the score-interval bounds and
    always stay inside [0, 1].
    """
    if n < 1:
        raise DegenerateSample("wilson_interval requires n >= 1")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    if z <= 0:
        raise ValueError("z must be positive")
    p_hat = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p_hat + z2 / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n))
    # The score interval provably contains k/n; clamping guards the float
    # half-ulp cases at the k=0 and k=n boundaries.
    return IntervalEstimate(
        point=p_hat,
        lo=min(p_hat, max(0.0, centre - margin)),
        hi=max(p_hat, min(1.0, centre + margin)),
        n=n,
        method=IntervalMethod.WILSON,
    )


def bootstrap_mean_ci(
    values: Sequence[float],
    B: int = 10_000,
    alpha: float = 0.05,
    seed: int = 0,
    clusters: Sequence[object] | None = None,
) -> IntervalEstimate:
    """Bootstrap percentile interval for the mean.

    Resamples with replacement B times; bounds are the nearest-rank
    alpha/2 and 1-alpha/2 empirical percentiles of the resample means.
    Deterministic for a fixed (values, B, alpha, seed).

    With `clusters` (one label per value, e.g. the scene id), whole clusters
    are resampled instead of individual values, preserving within-cluster
    dependence; the default stays edit-level.
    """
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise EmptySample("bootstrap_mean_ci requires at least one value")
    if B < 100:
        raise ValueError("B must be >= 100")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if clusters is None:
        idx = rng.integers(0, data.size, size=(B, data.size))
        means = data[idx].mean(axis=1)
    else:
        if len(clusters) != data.size:
            raise LengthMismatch("one cluster label per value is required")
        groups: dict[object, list[int]] = {}
        for position, label in enumerate(clusters):
            groups.setdefault(label, []).append(position)
        members = [np.asarray(positions) for positions in groups.values()]
        draws = rng.integers(0, len(members), size=(B, len(members)))
        means = np.empty(B)
        for b in range(B):
            picked = np.concatenate([members[j] for j in draws[b]])
            means[b] = data[picked].mean()
    means.sort()
    # Nearest-rank percentile: the ceil(q*B)-th smallest value, 1-based.
    lo_rank = max(1, math.ceil(alpha / 2 * B))
    hi_rank = max(1, math.ceil((1 - alpha / 2) * B))
    return IntervalEstimate(
        point=float(data.mean()),
        lo=float(means[lo_rank - 1]),
        hi=float(means[hi_rank - 1]),
        n=int(data.size),
        method=IntervalMethod.BOOTSTRAP_PERCENTILE,
    )


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=float)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def _pearson(xs: np.ndarray, ys: np.ndarray) -> float:
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise DegenerateSample("constant rank vector; correlation undefined")
    return float(xc @ yc) / denom


def spearman(
    xs: Sequence[float],
    ys: Sequence[float],
    method: str = "t_approximation",
) -> tuple[float, float]:
    """Spearman rank correlation with a two-sided p-value.

    rho is the Pearson correlation of the average-rank vectors. The default
    p-value uses the t-approximation with n-2 degrees of freedom; method
    "exact_permutation" enumerates all permutations (n <= 10 only).
    """
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} observations")
    n = len(xs)
    if n < 3:
        raise DegenerateSample("spearman requires at least 3 observations")
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    rho = _pearson(rx, ry)

    if method == "exact_permutation":
        if n > 10:
            raise ValueError("exact permutation mode is limited to n <= 10")
        return rho, _permutation_pvalue(rx, ry, rho)
    if method != "t_approximation":
        raise ValueError(f"unknown p-value method: {method!r}")

    if abs(rho) >= 1.0:
        return rho, 0.0
    df = n - 2
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    p = 2.0 * float(stdtr(df, -abs(t)))
    return rho, min(1.0, p)


def _permutation_pvalue(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    """Two-sided exact permutation p-value over all orderings of one vector."""
    perms = np.array(list(permutations(range(rx.size))), dtype=np.intp)
    ry_perm = ry[perms]
    xc = rx - rx.mean()
    yc = ry_perm - ry_perm.mean(axis=1, keepdims=True)
    num = yc @ xc
    denom = math.sqrt(float(xc @ xc)) * np.sqrt((yc * yc).sum(axis=1))
    rhos = num / denom
    hits = np.abs(rhos) >= abs(rho_obs) - 1e-12
    return float(hits.sum()) / len(perms)


@dataclass(frozen=True)
class GroupSummary:
    group_key: str
    valid: int
    proposed: int
    rate: IntervalEstimate
    mean_delta: IntervalEstimate | None
    shortlisted_mean_per_scene: float

    def __post_init__(self) -> None:
        if self.valid > self.proposed:
            raise ValueError("valid count cannot exceed proposed count")

    def to_payload(self) -> dict:
        return {
            "group_key": self.group_key,
            "valid": self.valid,
            "proposed": self.proposed,
            "rate": self.rate.to_payload(),
            "mean_delta": self.mean_delta.to_payload() if self.mean_delta else None,
            "shortlisted_mean_per_scene": self.shortlisted_mean_per_scene,
        }


@dataclass(frozen=True)
class SweepPoint:
    cutoff: float
    group_key: str
    shortlisted_total: int
    scene_count: int

    @property
    def mean_per_scene(self) -> float:
        return self.shortlisted_total / self.scene_count

    def exact_mean(self) -> Fraction:
        return Fraction(self.shortlisted_total, self.scene_count)


def threshold_sweep(
    deltas_by_scene: dict[str, list[tuple[str, float]]],
    cutoffs: Sequence[float],
    comparator: str = "ge",
) -> list[SweepPoint]:
    """Mean shortlisted-per-scene by group at each cutoff.

    deltas_by_scene maps scene_id -> [(group_key, delta), ...] over retained
    edits; every scene in the mapping counts toward the denominator, edits or
    not. The default comparator is >= (the sweep convention); "gt" gives the
    strict shortlist comparator. Counts are monotone non-increasing in the
    cutoff.
    """
    if list(cutoffs) != sorted(cutoffs):
        raise ValueError("cutoffs must be sorted ascending")
    if comparator not in ("ge", "gt"):
        raise ValueError("comparator must be 'ge' or 'gt'")
    meets = (lambda d, c: d >= c) if comparator == "ge" else (lambda d, c: d > c)

    scene_count = len(deltas_by_scene)
    groups = sorted({g for edits in deltas_by_scene.values() for g, _ in edits})
    points: list[SweepPoint] = []
    for cutoff in cutoffs:
        for group in groups:
            total = sum(
                1
                for edits in deltas_by_scene.values()
                for g, delta in edits
                if g == group and meets(delta, cutoff)
            )
            points.append(SweepPoint(cutoff, group, total, scene_count))
        overall = sum(
            1
            for edits in deltas_by_scene.values()
            for _, delta in edits
            if meets(delta, cutoff)
        )
        points.append(SweepPoint(cutoff, "Overall", overall, scene_count))
    return points


def summarize_groups(view, key: str, config) -> list[GroupSummary]:
    """One GroupSummary per group plus an Overall row recomputed over the
    ungrouped pool (never an average of the rows).

    Rates are Wilson intervals over (valid, proposed); mean shifts are
    bootstrap percentile intervals over the group's retained-edit deltas with
    a seed derived from the master seed and group key. Groups with zero
    proposed candidates are omitted (callers may note them).
    """
    from .model import stable_hash64

    strict = getattr(config, "strict_backend_accounting", False)

    def counted(candidate) -> bool:
        if candidate.status == "BackendFailed" and strict:
            return False
        return True

    pool = [c for c in view.candidates() if counted(c)]
    scene_count = sum(1 for s in view.scene_list if not s.planner_failed)

    def row(group_key: str, members) -> GroupSummary | None:
        proposed = len(members)
        if proposed == 0:
            return None
        valid = [c for c in members if c.is_valid]
        deltas = [c.delta_aux for c in valid if c.delta_aux is not None]
        rate = wilson_interval(len(valid), proposed, config.confidence_z)
        mean_delta = None
        if deltas:
            seed = stable_hash64(config.master_seed, "bootstrap", key, group_key) % 2**32
            mean_delta = bootstrap_mean_ci(deltas, config.bootstrap_B, 0.05, seed)
        shortlisted = sum(1 for d in deltas if d > config.theta_aux)
        return GroupSummary(
            group_key=group_key,
            valid=len(valid),
            proposed=proposed,
            rate=rate,
            mean_delta=mean_delta,
            shortlisted_mean_per_scene=shortlisted / scene_count if scene_count else 0.0,
        )

    rows: list[GroupSummary] = []
    if key != "Overall":
        groups: dict[str, list] = {}
        for candidate in pool:
            groups.setdefault(view.group_key(candidate, key), []).append(candidate)
        for group_key in sorted(groups):
            summary = row(group_key, groups[group_key])
            if summary is not None:
                rows.append(summary)
    overall = row("Overall", pool)
    if overall is not None:
        rows.append(overall)
    return rows


def summarize_concepts(view, config) -> list[GroupSummary]:
    """Per-concept rows (the finest grouping the vocabulary admits)."""
    groups: dict[str, list] = {}
    for candidate in view.candidates():
        groups.setdefault(candidate.concept_id, []).append(candidate)
    rows = []
    for concept_id in sorted(groups):
        members = groups[concept_id]
        valid = [c for c in members if c.is_valid]
        deltas = [c.delta_aux for c in valid if c.delta_aux is not None]
        rate = wilson_interval(len(valid), len(members), config.confidence_z)
        mean_delta = None
        if deltas:
            from .model import stable_hash64

            seed = stable_hash64(config.master_seed, "bootstrap", "Concept", concept_id) % 2**32
            mean_delta = bootstrap_mean_ci(deltas, config.bootstrap_B, 0.05, seed)
        scene_count = sum(1 for s in view.scene_list if not s.planner_failed)
        shortlisted = sum(1 for d in deltas if d > config.theta_aux)
        rows.append(GroupSummary(
            group_key=concept_id,
            valid=len(valid),
            proposed=len(members),
            rate=rate,
            mean_delta=mean_delta,
            shortlisted_mean_per_scene=shortlisted / scene_count if scene_count else 0.0,
        ))
    return rows


def failure_taxonomy(
    rejected_verdict_criteria: Sequence[Sequence[str]],
) -> tuple[dict[str, int], int]:
    """Multi-label counts of failed audit criteria over rejected candidates.

    Input is one sequence of failure-mode identifiers per rejected candidate
    (already reduced per the configured attempt-selection rule); each distinct
    identifier contributes one count, so totals may exceed the rejected count.
    """
    from .model import FAILURE_MODES

    counts = {mode: 0 for mode in FAILURE_MODES}
    for modes in rejected_verdict_criteria:
        for mode in set(modes):
            if mode not in counts:
                raise ValueError(f"failure mode outside closed set: {mode!r}")
            counts[mode] += 1
    return counts, len(rejected_verdict_criteria)
