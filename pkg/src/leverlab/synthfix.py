"""Construction of the bundled synthetic 50-scene fixture.

The fixture is a scene manifest plus a tuned mock schedule whose end-to-end
mock run reproduces the reference run's aggregate numbers exactly: 250
proposed / 177 valid candidates, the per-scene valid-count distribution, the
per-family and per-city valid counts, the rejection taxonomy, the shortlist
counts at the operating threshold, and the grouped mean proxy shifts. The
builder solves the implied marginal constraints deterministically and
verifies every target before writing anything; regeneration is therefore
safe, and tests assert the same targets against the shipped files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import pngutil
from .model import family_of, stable_hash64
from .stats import spearman

FIXTURE_SEED = 617

CITIES = (
    ("amsterdam", "AMS"),
    ("abuja", "ABJ"),
    ("san_francisco", "SFO"),
    ("santiago", "SCL"),
    ("singapore", "SIN"),
)

# Scene valid-count layout per city: sums give the per-city valid totals
# {40, 32, 36, 38, 31} and pooled counts give the distribution
# {1: 2, 2: 3, 3: 16, 4: 24, 5: 5}.
CITY_VALID_COUNTS = {
    "amsterdam": (3, 3, 4, 4, 4, 4, 4, 4, 5, 5),
    "abuja": (1, 2, 3, 3, 3, 3, 4, 4, 4, 5),
    "san_francisco": (2, 3, 3, 3, 4, 4, 4, 4, 4, 5),
    "santiago": (3, 3, 3, 4, 4, 4, 4, 4, 4, 5),
    "singapore": (1, 2, 3, 3, 3, 3, 4, 4, 4, 4),
}

# concept -> (proposed, valid, delta sum over valid edits, shortlisted count)
# Family sums: proposed {92, 82, 10, 66}, valid {71, 54, 7, 45},
# shortlisted {38, 27, 2, 28}; delta sums are the reference per-concept
# means times the valid counts.
CONCEPT_TARGETS = {
    "graffiti_removal": (6, 4, 4 * 0.396, 3),
    "litter_removal": (33, 25, 25 * 0.296, 13),
    "facade_repair": (6, 4, 4 * 0.519, 2),
    "surface_cleaning": (45, 38, 38 * 0.352, 20),
    "shutter_repair": (2, 0, 0.0, 0),
    "localised_greenery_addition": (36, 32, 32 * 0.650, 24),
    "lighting_repair": (27, 8, 8 * -0.232, 1),
    "tree_canopy_management": (19, 14, 14 * -0.245, 2),
    "signage_decluttering": (7, 5, 5 * -0.631, 0),
    "storefront_transparency_increase": (3, 2, 2 * 0.958, 2),
    "crosswalk_repainting": (22, 15, 15 * 0.767, 9),
    "lane_marking_repainting": (44, 30, 30 * 0.485, 19),
}

# Per-city delta sums, chosen inside the rounding window of the reference
# city means (0.400, -0.136, 0.704, 0.742, -0.012) and summing to the
# concept-sum total 64.766.
CITY_DELTA_SUMS = {
    "amsterdam": 15.990,
    "abuja": -4.362,
    "san_francisco": 25.329,
    "santiago": 28.181,
    "singapore": -0.372,
}

# Shortlisted (delta > 0.1) edits per city; per scene the profile is
# 10 scenes with none, 16 with one, 24 with several.
CITY_SHORTLIST = {
    "amsterdam": 20,
    "abuja": 11,
    "san_francisco": 25,
    "santiago": 26,
    "singapore": 13,
}
CITY_PROFILE = {
    # (zero-scenes, one-scenes, multi counts ascending)
    "amsterdam": (2, 3, (3, 3, 3, 4, 4)),
    "abuja": (3, 4, (2, 2, 3)),
    "san_francisco": (1, 2, (2, 3, 3, 3, 4, 4, 4)),
    "santiago": (1, 3, (3, 4, 4, 4, 4, 4)),
    "singapore": (3, 4, (3, 3, 3)),
}

# Failure profiles over the 73 rejected candidates: plausibility fails on
# every rejection; 45 also show no target change, 25 drift non-locally,
# 5 are unrealistic, none violate same-place.
FAILURE_PROFILES = (
    (("implausible_lever", "no_target_change"), 43),
    (("implausible_lever", "no_target_change", "non_local_drift"), 2),
    (("implausible_lever", "non_local_drift"), 23),
    (("implausible_lever", "unrealistic"), 5),
)

# Fixed-value edits pinning the reference order statistics: the overall
# median, the range endpoints, the top of the shortlist band, and six
# shortlisted values between theta and the median.
ANCHORS = (
    ("max_lane", "lane_marking_repainting", 3.842, True,
     ("santiago", "san_francisco", "amsterdam")),
    ("high_crosswalk", "crosswalk_repainting", 3.580, True,
     ("san_francisco", "santiago", "amsterdam")),
    ("high_greenery", "localised_greenery_addition", 3.410, True,
     ("santiago", "san_francisco", "amsterdam")),
    ("median", "surface_cleaning", 0.184, True,
     ("amsterdam", "santiago", "san_francisco", "abuja", "singapore")),
    ("band_0", "surface_cleaning", 0.152, True, ()),
    ("band_1", "surface_cleaning", 0.158, True, ()),
    ("band_2", "litter_removal", 0.163, True, ()),
    ("band_3", "litter_removal", 0.169, True, ()),
    ("band_4", "localised_greenery_addition", 0.175, True, ()),
    ("band_5", "lane_marking_repainting", 0.181, True, ()),
    ("min_canopy", "tree_canopy_management", -3.624, False,
     ("abuja", "singapore", "san_francisco")),
)

SHORT_BOUNDS = (0.19, 3.0)
NONSHORT_BOUNDS = (-3.5, 0.05)

_SUPPORTS = (
    "the wall beside the doorway", "the pavement along the kerb line",
    "the ground-floor frontage", "the roadway in the near foreground",
    "the verge next to the crossing", "the shopfront on the right",
    "the corner facade", "the left-hand footpath", "the central carriageway",
    "the row of windows above the entrance",
)
_TARGETS = {
    "graffiti_removal": "spray-painted tags",
    "litter_removal": "scattered litter",
    "facade_repair": "cracked render",
    "surface_cleaning": "stained paving",
    "shutter_repair": "broken roller shutter",
    "localised_greenery_addition": "bare planting strip",
    "lighting_repair": "broken street lamp",
    "tree_canopy_management": "overgrown canopy",
    "signage_decluttering": "cluttered signboards",
    "storefront_transparency_increase": "blacked-out windows",
    "crosswalk_repainting": "faded zebra stripes",
    "lane_marking_repainting": "worn lane markings",
}
_DIAGNOSES = {
    "no_target_change": "output looks identical to the original at the target",
    "non_local_drift": "changes spill well beyond the stated support",
    "unrealistic": "result is physically incoherent",
    "implausible_lever": "the requested lever is not recognisable at the support",
    "same_place_violation": "the scene no longer reads as the same place",
}


class FixtureInfeasible(RuntimeError):
    pass


@dataclass
class CandidateSpec:
    scene_id: str
    city: str
    concept: str
    is_valid: bool
    ordinal: int = 0
    shortlisted: bool = False
    anchor: str | None = None
    delta: float | None = None
    accept_attempt: int | None = None
    failure_modes: tuple[str, ...] = ()


@dataclass
class Fixture:
    scenes: dict[str, dict]                   # scene_id -> {city, baseline_score}
    candidates: list[CandidateSpec]
    spearman_rho: float
    spearman_p: float

    def by_scene(self) -> dict[str, list[CandidateSpec]]:
        grouped: dict[str, list[CandidateSpec]] = {s: [] for s in self.scenes}
        for cand in self.candidates:
            grouped[cand.scene_id].append(cand)
        for specs in grouped.values():
            specs.sort(key=lambda c: c.ordinal)
        return grouped


def _scene_ids() -> dict[str, list[str]]:
    return {
        city: [f"{code}_{i:03d}" for i in range(1, 11)] for city, code in CITIES
    }


def _shuffled(items: list, *key_parts) -> list:
    return sorted(items, key=lambda item: stable_hash64(FIXTURE_SEED, *key_parts, item))


def _layout_scenes() -> dict[str, tuple[str, int]]:
    """scene_id -> (city, valid count); valid counts hash-shuffled per city."""
    layout: dict[str, tuple[str, int]] = {}
    for city, _code in CITIES:
        ids = _scene_ids()[city]
        counts = list(CITY_VALID_COUNTS[city])
        order = _shuffled(list(range(10)), "valid-order", city)
        for scene_index, count_index in enumerate(order):
            layout[ids[scene_index]] = (city, counts[count_index])
    return layout


def _scene_shortlist_quota(layout: dict[str, tuple[str, int]]) -> dict[str, int]:
    """Per-scene shortlisted counts matching the city totals and the global
    10/16/24 zero/one/multi scene profile."""
    quota: dict[str, int] = {}
    for city, _code in CITIES:
        zeros, ones, multis = CITY_PROFILE[city]
        scenes = [s for s, (c, _v) in layout.items() if c == city]
        scenes.sort(key=lambda s: (layout[s][1], s))  # valid count ascending
        counts = [0] * zeros + [1] * ones + list(multis)
        if len(counts) != len(scenes):
            raise FixtureInfeasible(f"profile length mismatch for {city}")
        for scene_id, count in zip(scenes, counts):
            if count > layout[scene_id][1]:
                raise FixtureInfeasible(f"scene {scene_id} cannot host {count} shortlisted")
            quota[scene_id] = count
        if sum(counts) != CITY_SHORTLIST[city]:
            raise FixtureInfeasible(f"city shortlist total mismatch for {city}")
    return quota


def _assign_concepts(layout: dict[str, tuple[str, int]], tiebreak: int) -> list[CandidateSpec]:
    """Place concepts into scenes so every marginal comes out exactly.

    Three passes over one shared per-scene exclusion set (a concept appears
    at most once per scene): shortlisted valid edits against the per-scene
    shortlist quotas, remaining valid edits against the leftover valid slots,
    then rejected edits against the reject slots. Each pass fills scenes in
    descending slot order, placing a concept early whenever its leftover
    demand could not survive the loss of a hosting scene (Hall's condition),
    and otherwise spending the tightest concepts first.
    """
    quota = _scene_shortlist_quota(layout)
    taken: dict[str, set[str]] = {s: set() for s in layout}

    def assign_pass(demand: dict[str, int], slots: dict[str, int], salt: str) -> dict[str, list[str]]:
        order = sorted((s for s in slots if slots[s] > 0),
                       key=lambda s: (-slots[s],
                                      stable_hash64(FIXTURE_SEED, tiebreak, salt, s)))
        picks: dict[str, list[str]] = {s: [] for s in slots}
        for position, scene_id in enumerate(order):
            future = order[position + 1 :]

            def hosts(concept: str) -> int:
                return sum(1 for s in future if concept not in taken[s])

            available = [c for c in demand
                         if demand[c] > 0 and c not in taken[scene_id]]
            forced = [c for c in available if demand[c] >= hosts(c) + 1]
            if len(forced) > slots[scene_id]:
                raise FixtureInfeasible(
                    f"{salt}: scene {scene_id}: {len(forced)} forced concepts "
                    f"exceed {slots[scene_id]} slots")
            ranked = forced + sorted(
                (c for c in available if c not in forced),
                key=lambda c: (hosts(c) - demand[c], -demand[c],
                               stable_hash64(FIXTURE_SEED, tiebreak, salt, scene_id, c)),
            )
            if len(ranked) < slots[scene_id]:
                raise FixtureInfeasible(
                    f"{salt}: scene {scene_id}: cannot pick {slots[scene_id]} concepts")
            for concept in ranked[: slots[scene_id]]:
                demand[concept] -= 1
                picks[scene_id].append(concept)
                taken[scene_id].add(concept)
        return picks

    short_by_scene = assign_pass(
        demand={c: t[3] for c, t in CONCEPT_TARGETS.items()},
        slots=dict(quota),
        salt="short",
    )
    slack_by_scene = assign_pass(
        demand={c: t[1] - t[3] for c, t in CONCEPT_TARGETS.items()},
        slots={s: layout[s][1] - quota[s] for s in layout},
        salt="slack",
    )
    reject_by_scene = assign_pass(
        demand={c: t[0] - t[1] for c, t in CONCEPT_TARGETS.items()},
        slots={s: 5 - layout[s][1] for s in layout},
        salt="reject",
    )

    specs: list[CandidateSpec] = []
    for scene_id, (city, _count) in layout.items():
        for concept in short_by_scene[scene_id]:
            specs.append(CandidateSpec(scene_id, city, concept, True, shortlisted=True))
        for concept in slack_by_scene[scene_id]:
            specs.append(CandidateSpec(scene_id, city, concept, True))
        for concept in reject_by_scene[scene_id]:
            specs.append(CandidateSpec(scene_id, city, concept, False))

    # Scene-internal candidate order: stable shuffle so valid edits are not
    # systematically first.
    by_scene: dict[str, list[CandidateSpec]] = {}
    for spec in specs:
        by_scene.setdefault(spec.scene_id, []).append(spec)
    for scene_id, scene_specs in by_scene.items():
        ordered = _shuffled(list(range(len(scene_specs))), "ordinal", scene_id)
        for position, index in enumerate(ordered, start=1):
            scene_specs[index].ordinal = position
    return specs


def _place_anchors(specs: list[CandidateSpec]) -> dict[str, CandidateSpec]:
    """Tag one existing edit per anchor, honouring each anchor's shortlist
    side and city preference order."""
    placed: dict[str, CandidateSpec] = {}
    for name, concept, value, shortlisted, city_prefs in ANCHORS:
        cities = list(city_prefs) + [c for c, _ in CITIES if c not in city_prefs]
        host: CandidateSpec | None = None
        for city in cities:
            pool = sorted(
                (s for s in specs
                 if s.is_valid and s.anchor is None and s.city == city
                 and s.concept == concept and s.shortlisted == shortlisted),
                key=lambda s: (s.scene_id, s.ordinal),
            )
            if pool:
                host = pool[0]
                break
        if host is None:
            raise FixtureInfeasible(f"no host for anchor {name}")
        host.anchor = name
        host.delta = value
        placed[name] = host
    return placed


def _solve_deltas(specs: list[CandidateSpec]) -> None:
    """Stage D: pick delta values for non-anchored valid edits so per-concept
    and per-city sums land exactly, inside the shortlist band bounds."""
    from scipy.optimize import linprog

    variables = [s for s in specs if s.is_valid and s.anchor is None]
    n = len(variables)

    concept_rows = {c: i for i, c in enumerate(CONCEPT_TARGETS)}
    city_rows = {c: len(concept_rows) + i for i, (c, _) in enumerate(CITIES)}
    a_eq = np.zeros((len(concept_rows) + len(city_rows), n))
    b_eq = np.zeros(len(concept_rows) + len(city_rows))
    for concept, (_p, _v, total, _k) in CONCEPT_TARGETS.items():
        b_eq[concept_rows[concept]] = total
    for city, _code in CITIES:
        b_eq[city_rows[city]] = CITY_DELTA_SUMS[city]
    for spec in specs:
        if not spec.is_valid:
            continue
        if spec.anchor is not None:
            b_eq[concept_rows[spec.concept]] -= spec.delta
            b_eq[city_rows[spec.city]] -= spec.delta
    for j, spec in enumerate(variables):
        a_eq[concept_rows[spec.concept], j] = 1.0
        a_eq[city_rows[spec.city], j] = 1.0

    bounds = []
    targets = np.zeros(n)
    rng = np.random.default_rng(FIXTURE_SEED)
    for j, spec in enumerate(variables):
        lo, hi = SHORT_BOUNDS if spec.shortlisted else NONSHORT_BOUNDS
        bounds.append((lo, hi))
        mean = CONCEPT_TARGETS[spec.concept][2] / max(1, CONCEPT_TARGETS[spec.concept][1])
        jitter = rng.normal(0.0, 0.30)
        targets[j] = min(hi, max(lo, mean + jitter))

    # minimise sum |x - target|: variables [x, u], u >= |x - target|
    c = np.concatenate([np.zeros(n), np.ones(n)])
    a_ub = np.zeros((2 * n, 2 * n))
    b_ub = np.zeros(2 * n)
    for j in range(n):
        a_ub[2 * j, j] = 1.0
        a_ub[2 * j, n + j] = -1.0
        b_ub[2 * j] = targets[j]
        a_ub[2 * j + 1, j] = -1.0
        a_ub[2 * j + 1, n + j] = -1.0
        b_ub[2 * j + 1] = -targets[j]
    a_eq_full = np.hstack([a_eq, np.zeros((a_eq.shape[0], n))])
    u_bounds = [(0.0, None)] * n

    result = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq_full, b_eq=b_eq,
                     bounds=bounds + u_bounds, method="highs")
    if not result.success:
        raise FixtureInfeasible(f"delta solve failed: {result.message}")
    for j, spec in enumerate(variables):
        spec.delta = float(result.x[j])


def _assign_failures(specs: list[CandidateSpec]) -> None:
    rejected = [s for s in specs if not s.is_valid]
    rejected = _shuffled(rejected and list(range(len(rejected))), "failures")
    profiles: list[tuple[str, ...]] = []
    for modes, count in FAILURE_PROFILES:
        profiles.extend([modes] * count)
    if len(profiles) != len(rejected):
        raise FixtureInfeasible("failure profile count mismatch")
    flat = [s for s in specs if not s.is_valid]
    for index, profile in zip(rejected, profiles):
        flat[index].failure_modes = profile


def _assign_accept_attempts(specs: list[CandidateSpec], T: int = 5) -> None:
    weights = ((1, 62), (2, 20), (3, 10), (4, 5), (5, 3))
    total = sum(w for _, w in weights)
    for spec in specs:
        if not spec.is_valid:
            continue
        draw = stable_hash64(FIXTURE_SEED, "attempt", spec.scene_id, spec.concept) % total
        for attempt, weight in weights:
            if draw < weight:
                spec.accept_attempt = min(attempt, T)
                break
            draw -= weight


def _tune_baselines(layout: dict[str, tuple[str, int]]) -> tuple[dict[str, float], float, float]:
    """Baseline scores whose rank correlation with valid counts prints as the
    reference near-null result (rho 0.10, p 0.511)."""
    scene_ids = sorted(layout)
    valid_counts = [float(layout[s][1]) for s in scene_ids]

    def evaluate(values: np.ndarray) -> tuple[float, float]:
        return spearman(list(values), valid_counts)

    # Baselines must keep baseline + delta inside the 0-10 proxy scale for
    # every edit, whichever scene ends up hosting the range anchors.
    lo = 0.0 - ANCHORS[-1][2] + 0.05   # min_canopy delta
    hi = 10.0 - ANCHORS[0][2] - 0.05   # max_lane delta
    for attempt in range(200):
        rng = np.random.default_rng(stable_hash64(FIXTURE_SEED, "baseline", attempt) % 2**32)
        baselines = np.round(rng.uniform(lo, hi, size=len(scene_ids)), 3)
        if len(set(baselines)) < len(baselines):
            continue
        rho, p = evaluate(baselines)
        best = baselines.copy()
        for _step in range(4000):
            if round(rho, 2) == 0.10 and round(p, 3) == 0.511:
                return (
                    {s: float(b) for s, b in zip(scene_ids, best)},
                    rho, p,
                )
            i, j = rng.integers(0, len(scene_ids), size=2)
            if i == j:
                continue
            trial = best.copy()
            trial[i], trial[j] = trial[j], trial[i]
            trial_rho, trial_p = evaluate(trial)
            if abs(trial_rho - 0.0952) < abs(rho - 0.0952):
                best, rho, p = trial, trial_rho, trial_p
    raise FixtureInfeasible("baseline tuning did not converge")


def build_fixture() -> Fixture:
    layout = _layout_scenes()
    last_error: Exception | None = None
    for tiebreak in range(64):
        try:
            specs = _assign_concepts(layout, tiebreak)
            _place_anchors(specs)
            break
        except FixtureInfeasible as exc:
            last_error = exc
    else:
        raise FixtureInfeasible(f"assignment failed on all tiebreaks: {last_error}")

    _solve_deltas(specs)
    _assign_failures(specs)
    _assign_accept_attempts(specs)
    baselines, rho, p = _tune_baselines(layout)

    scenes = {
        scene_id: {"city": layout[scene_id][0], "baseline_score": baselines[scene_id]}
        for scene_id in sorted(layout)
    }
    fixture = Fixture(scenes, specs, rho, p)
    verify_fixture(fixture)
    return fixture


def expected_counts() -> dict:
    """The reference-run targets in one place (tests assert against these)."""
    families = {"PhysicalMaintenance": [0, 0], "EnvironmentalAmenity": [0, 0],
                "VisualLegibility": [0, 0], "MobilityInfrastructure": [0, 0]}
    for concept, (proposed, valid, _s, _k) in CONCEPT_TARGETS.items():
        fam = family_of(concept).value
        families[fam][0] += proposed
        families[fam][1] += valid
    return {
        "proposed": 250,
        "valid": 177,
        "rejected": 73,
        "valid_rate": Fraction(177, 250),
        "distribution": {1: 2, 2: 3, 3: 16, 4: 24, 5: 5},
        "family_proposed": {f: pv[0] for f, pv in families.items()},
        "family_valid": {f: pv[1] for f, pv in families.items()},
        "city_valid": {"amsterdam": 40, "abuja": 32, "san_francisco": 36,
                       "santiago": 38, "singapore": 31},
        "city_proposed": {city: 50 for city, _ in CITIES},
        "taxonomy": {"implausible_lever": 73, "no_target_change": 45,
                     "non_local_drift": 25, "unrealistic": 5,
                     "same_place_violation": 0},
        "shortlisted": 95,
        "family_shortlisted": {"PhysicalMaintenance": 38, "EnvironmentalAmenity": 27,
                               "VisualLegibility": 2, "MobilityInfrastructure": 28},
        "city_shortlisted": dict(CITY_SHORTLIST),
        "concept_valid": {c: t[1] for c, t in CONCEPT_TARGETS.items()},
        "concept_mean_delta": {
            c: t[2] / t[1] for c, t in CONCEPT_TARGETS.items() if t[1] > 0},
        "median_delta": 0.184,
        "delta_range": (-3.624, 3.842),
        "overall_mean_display": 0.366,
        "family_mean_display": {"PhysicalMaintenance": 0.344, "EnvironmentalAmenity": 0.287,
                                "VisualLegibility": -0.177, "MobilityInfrastructure": 0.579},
        "city_mean_display": {"amsterdam": 0.400, "abuja": -0.136,
                              "san_francisco": 0.704, "santiago": 0.742,
                              "singapore": -0.012},
    }


def verify_fixture(fixture: Fixture) -> None:
    """Assert every tuned marginal; raises FixtureInfeasible on any miss."""
    targets = expected_counts()
    specs = fixture.candidates

    def check(label: str, actual, expected) -> None:
        if actual != expected:
            raise FixtureInfeasible(f"{label}: {actual!r} != {expected!r}")

    check("total proposed", len(specs), targets["proposed"])
    check("total valid", sum(s.is_valid for s in specs), targets["valid"])

    per_scene: dict[str, int] = {}
    for spec in specs:
        per_scene.setdefault(spec.scene_id, 0)
        if spec.is_valid:
            per_scene[spec.scene_id] += 1
    distribution: dict[int, int] = {}
    for count in per_scene.values():
        distribution[count] = distribution.get(count, 0) + 1
    check("distribution", dict(sorted(distribution.items())), targets["distribution"])

    for key, mapping in (("proposed", targets["family_proposed"]),
                         ("valid", targets["family_valid"]),
                         ("short", targets["family_shortlisted"])):
        actual: dict[str, int] = {f: 0 for f in mapping}
        for spec in specs:
            fam = family_of(spec.concept).value
            if key == "proposed":
                actual[fam] += 1
            elif key == "valid":
                actual[fam] += spec.is_valid
            else:
                actual[fam] += spec.shortlisted
        check(f"family {key}", actual, mapping)

    city_valid = {c: 0 for c, _ in CITIES}
    city_short = {c: 0 for c, _ in CITIES}
    city_prop = {c: 0 for c, _ in CITIES}
    for spec in specs:
        city_prop[spec.city] += 1
        city_valid[spec.city] += spec.is_valid
        city_short[spec.city] += spec.shortlisted
    check("city proposed", city_prop, targets["city_proposed"])
    check("city valid", city_valid, targets["city_valid"])
    check("city shortlisted", city_short, targets["city_shortlisted"])

    concept_valid = {c: 0 for c in CONCEPT_TARGETS}
    concept_prop = {c: 0 for c in CONCEPT_TARGETS}
    for spec in specs:
        concept_prop[spec.concept] += 1
        concept_valid[spec.concept] += spec.is_valid
    check("concept proposed", concept_prop,
          {c: t[0] for c, t in CONCEPT_TARGETS.items()})
    check("concept valid", concept_valid, targets["concept_valid"])

    # Deltas: per-concept and per-city sums, shortlist strictness, order stats.
    deltas = [s.delta for s in specs if s.is_valid]
    if any(d is None for d in deltas):
        raise FixtureInfeasible("valid edit without delta")
    for concept, (_p, valid, total, _k) in CONCEPT_TARGETS.items():
        actual_sum = sum(s.delta for s in specs if s.is_valid and s.concept == concept)
        if abs(actual_sum - total) > 1e-6:
            raise FixtureInfeasible(f"concept sum {concept}: {actual_sum} != {total}")
    for city, expected_sum in CITY_DELTA_SUMS.items():
        actual_sum = sum(s.delta for s in specs if s.is_valid and s.city == city)
        if abs(actual_sum - expected_sum) > 1e-6:
            raise FixtureInfeasible(f"city sum {city}: {actual_sum} != {expected_sum}")

    shortlisted = [s for s in specs if s.shortlisted]
    check("shortlisted", len(shortlisted), targets["shortlisted"])
    for spec in specs:
        if not spec.is_valid:
            continue
        if spec.shortlisted and not spec.delta > 0.1:
            raise FixtureInfeasible(f"shortlisted edit below theta: {spec}")
        if not spec.shortlisted and not spec.delta <= 0.05:
            raise FixtureInfeasible(f"non-shortlisted edit above gap: {spec}")

    ordered = sorted(deltas)
    check("median", round(ordered[88], 3), targets["median_delta"])
    check("range", (round(min(deltas), 3), round(max(deltas), 3)),
          targets["delta_range"])
    top3 = {s.concept for s in sorted(specs, key=lambda s: -(s.delta or -99))[:3]
            if s.is_valid}
    check("top shifts", top3, {"lane_marking_repainting", "crosswalk_repainting",
                               "localised_greenery_addition"})

    # Scene shortlist profile: 10 zero-, 16 one-, 24 multi-shortlist scenes.
    short_per_scene: dict[str, int] = {s: 0 for s in fixture.scenes}
    for spec in shortlisted:
        short_per_scene[spec.scene_id] += 1
    profile = {"zero": 0, "one": 0, "multi": 0}
    for count in short_per_scene.values():
        profile["zero" if count == 0 else "one" if count == 1 else "multi"] += 1
    check("scene shortlist profile", profile, {"zero": 10, "one": 16, "multi": 24})

    taxonomy = {mode: 0 for mode in targets["taxonomy"]}
    rejected = 0
    for spec in specs:
        if spec.is_valid:
            continue
        rejected += 1
        if not spec.failure_modes:
            raise FixtureInfeasible(f"rejected edit without failure profile: {spec}")
        for mode in spec.failure_modes:
            taxonomy[mode] += 1
    check("rejected", rejected, targets["rejected"])
    check("taxonomy", taxonomy, targets["taxonomy"])

    check("spearman print", (round(fixture.spearman_rho, 2), round(fixture.spearman_p, 3)),
          (0.10, 0.511))

    for spec in specs:
        if spec.is_valid and not 1 <= (spec.accept_attempt or 0) <= 5:
            raise FixtureInfeasible(f"valid edit without accept attempt: {spec}")


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def _candidate_entry(spec: CandidateSpec) -> dict:
    support = _SUPPORTS[stable_hash64(FIXTURE_SEED, "support", spec.scene_id,
                                      spec.concept) % len(_SUPPORTS)]
    from .model import DEFAULT_VOCABULARY

    concept = DEFAULT_VOCABULARY.get(spec.concept)
    entry = {
        "concept": spec.concept,
        "scene_support": support,
        "target_object": _TARGETS[spec.concept],
        "direction": concept.direction_default.value,
        "edit_template": f"{concept.display_name} confined to {support}",
        "edit_plan": (f"Apply {concept.display_name.lower()} at {support}; "
                      f"leave every surrounding element untouched."),
        "accept_attempt": spec.accept_attempt,
        "delta": spec.delta if spec.is_valid else None,
        "failure_modes": list(spec.failure_modes),
    }
    if spec.failure_modes:
        entry["diagnosis"] = "; ".join(_DIAGNOSES[m] for m in spec.failure_modes)
        entry["repair_suggestion"] = "tighten the edit plan to the stated support"
    return entry


def write_fixture(out_dir: str | Path, fixture: Fixture | None = None) -> Path:
    """Materialise manifest, scene images, mock schedule and run config."""
    fixture = fixture or build_fixture()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    image_index: dict[str, str] = {}
    manifest_lines = []
    for scene_id, meta in fixture.scenes.items():
        png = pngutil.patterned_png(stable_hash64(FIXTURE_SEED, "image", scene_id))
        (out / "images" / f"{scene_id}.png").write_bytes(png)
        image_index[hashlib.sha256(png).hexdigest()] = scene_id
        manifest_lines.append(json.dumps({
            "scene_id": scene_id,
            "city": meta["city"],
            "image_path": f"images/{scene_id}.png",
            "baseline_score": meta["baseline_score"],
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")

    schedule = {
        "version": 1,
        "scenes": {
            scene_id: {
                "city": meta["city"],
                "baseline_score": meta["baseline_score"],
                "candidates": [_candidate_entry(s) for s in fixture.by_scene()[scene_id]],
            }
            for scene_id, meta in fixture.scenes.items()
        },
        "image_index": image_index,
    }
    (out / "schedule.json").write_text(
        json.dumps(schedule, indent=1, sort_keys=True), encoding="utf-8")

    (out / "run.cfg").write_text(
        "[run]\n"
        "k = 5\n"
        "t = 5\n"
        "theta_aux = 0.1\n"
        "bootstrap_b = 10000\n"
        "confidence_z = 1.96\n"
        "master_seed = 20250617\n"
        "percept = safety\n"
        "scale_min = 0\n"
        "scale_max = 10\n"
        "\n"
        "[mock]\n"
        "schedule = schedule.json\n",
        encoding="utf-8")
    return out
