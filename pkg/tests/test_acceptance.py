"""Acceptance suite: one test per exit criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Every tolerance is pinned here, not calibrated elsewhere. Criterion 5's
p-value closeness bound is mathematically unattainable over samples of size 4
(the permutation null has atoms wider than twice the bound); the attainable
reading is green below and the literal full-range reading is kept as a strict
expected failure with the analysis in its reason string.
"""

import json
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from leverlab.stats import (
    bootstrap_mean_ci,
    failure_taxonomy,
    spearman,
    threshold_sweep,
    wilson_interval,
)
from .oracles import spearman_rho_by_definition


def announce(number: int, text: str) -> None:
    print(f"\n[PASS] criterion {number}: {text}")


# -- 1. Wilson reproduction --------------------------------------------------

REFERENCE_TABLE_ROWS = [
    # (valid, proposed, rate, lo, hi) for every family and city row
    (71, 92, 0.77, 0.68, 0.85),
    (54, 82, 0.66, 0.55, 0.75),
    (7, 10, 0.70, 0.40, 0.89),
    (45, 66, 0.68, 0.56, 0.78),
    (177, 250, 0.71, 0.65, 0.76),
    (40, 50, 0.80, 0.67, 0.89),
    (32, 50, 0.64, 0.50, 0.76),
    (36, 50, 0.72, 0.58, 0.83),
    (38, 50, 0.76, 0.63, 0.86),
    (31, 50, 0.62, 0.48, 0.74),
]


def test_criterion_1_wilson_reproduction():
    started = time.monotonic()
    for k, n, rate, lo, hi in REFERENCE_TABLE_ROWS:
        est = wilson_interval(k, n, 1.96)
        assert round(est.point, 2) == rate, (k, n)
        assert round(est.lo, 2) == lo, (k, n)
        assert round(est.hi, 2) == hi, (k, n)
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    announce(1, f"all {len(REFERENCE_TABLE_ROWS)} grouped intervals exact at "
                f"two decimals in {elapsed * 1000:.0f} ms")


# -- 2. Fixture-count reproduction -------------------------------------------


def test_criterion_2_fixture_count_reproduction(fixture_dir, tmp_path):
    from leverlab.config import load_config
    from leverlab.ledger import load_run
    from leverlab.runner import start_run
    from leverlab.runview import build_view
    from leverlab.synthfix import expected_counts

    started = time.monotonic()
    config, schedule = load_config(fixture_dir / "run.cfg")
    run_dir = start_run(fixture_dir / "manifest.jsonl", config, tmp_path,
                        mock=True, schedule_path=schedule)
    view = build_view(load_run(run_dir))
    elapsed = time.monotonic() - started
    assert elapsed < 120.0

    targets = expected_counts()
    assert len(view.candidates()) == 250
    valid = view.valid_candidates()
    assert len(valid) == 177
    assert Fraction(len(valid), len(view.candidates())) == Fraction(177, 250)
    assert view.valid_count_distribution() == {1: 2, 2: 3, 3: 16, 4: 24, 5: 5}

    family_valid: dict[str, int] = {}
    city_valid: dict[str, int] = {}
    for c in valid:
        family_valid[c.family] = family_valid.get(c.family, 0) + 1
        city = view.scenes[c.scene_id].city
        city_valid[city] = city_valid.get(city, 0) + 1
    assert family_valid == {"PhysicalMaintenance": 71, "EnvironmentalAmenity": 54,
                            "VisualLegibility": 7, "MobilityInfrastructure": 45}
    assert city_valid == {"amsterdam": 40, "abuja": 32, "san_francisco": 36,
                          "santiago": 38, "singapore": 31}

    taxonomy, rejected = failure_taxonomy(view.rejected_failure_modes("final_attempt"))
    assert rejected == 73
    assert taxonomy == {"implausible_lever": 73, "no_target_change": 45,
                        "non_local_drift": 25, "unrealistic": 5,
                        "same_place_violation": 0}
    announce(2, f"50-scene mock run exact on every count in {elapsed:.1f} s")


# -- 3. Shortlist arithmetic --------------------------------------------------


def test_criterion_3_shortlist_arithmetic(reference_view):
    from leverlab.engine import shortlist
    from leverlab.model import RetainedEdit

    view = reference_view
    retained = [
        RetainedEdit(c.candidate_id, c.retained["accepted_attempt_index"],
                     c.retained["edited_image_ref"], c.retained["baseline_score"],
                     c.retained["edited_score"], c.retained["delta_aux"])
        for c in view.valid_candidates()
    ]
    picked = shortlist(retained, 0.1)
    assert len(picked) == 95
    scene_count = len(view.scenes)
    assert Fraction(len(picked), scene_count) == Fraction(95, 50)

    points = threshold_sweep(view.deltas_by_scene("Family"), [0.1], comparator="ge")
    by_group = {p.group_key: p for p in points}
    means = {g: by_group[g].exact_mean() for g in by_group}
    assert means["PhysicalMaintenance"] == Fraction(38, 50)   # 0.76
    assert means["MobilityInfrastructure"] == Fraction(28, 50)  # 0.56
    assert means["EnvironmentalAmenity"] == Fraction(27, 50)  # 0.54
    assert means["VisualLegibility"] == Fraction(2, 50)       # 0.04
    family_sum = sum((means[g] for g in ("PhysicalMaintenance", "MobilityInfrastructure",
                                         "EnvironmentalAmenity", "VisualLegibility")),
                     Fraction(0))
    assert family_sum == means["Overall"] == Fraction(95, 50)
    announce(3, "95 of 177 shortlisted; family means 0.76+0.56+0.54+0.04 "
                "sum exactly to the overall 1.90")


# -- 4. Bootstrap validity ----------------------------------------------------


def test_criterion_4_bootstrap_validity():
    started = time.monotonic()
    n, B, trials = 177, 10_000, 1_000
    results = {}
    for label, sampler, true_mean in (
        ("normal", lambda rng: rng.normal(0.4, 1.1, size=n), 0.4),
        ("exponential", lambda rng: rng.exponential(1.0, size=n), 1.0),
    ):
        rng = np.random.default_rng(20_250_800)
        hits = 0
        for trial in range(trials):
            sample = sampler(rng)
            est = bootstrap_mean_ci(sample, B=B, alpha=0.05, seed=trial)
            hits += est.lo <= true_mean <= est.hi
        coverage = hits / trials
        results[label] = coverage
        assert 0.92 <= coverage <= 0.98, (label, coverage)

    values = list(np.random.default_rng(5).normal(size=n))
    a = bootstrap_mean_ci(values, B=B, alpha=0.05, seed=77)
    b = bootstrap_mean_ci(values, B=B, alpha=0.05, seed=77)
    assert (a.point, a.lo, a.hi) == (b.point, b.lo, b.hi)  # bit-equal

    elapsed = time.monotonic() - started
    assert elapsed < 300.0
    announce(4, "coverage " + ", ".join(
        f"{label} {coverage:.3f}" for label, coverage in results.items())
        + f"; deterministic; {elapsed:.0f} s")


# -- 5. Spearman oracle ---------------------------------------------------------


def _tied_pair(rng: random.Random, n: int) -> tuple[list[int], list[int]]:
    while True:
        xs = [rng.randint(0, 9) for _ in range(n)]
        ys = [rng.randint(0, 9) for _ in range(n)]
        if len(set(xs)) >= 2 and len(set(ys)) >= 2:
            return xs, ys


MONOTONE_TRANSFORMS = (
    lambda v, a, b: a * v + b,          # affine, a > 0
    lambda v, a, b: v ** 3 + a * v,     # odd cubic, a > 0
    lambda v, a, b: np.arctan(v) * a,   # bounded, a > 0
)


def test_criterion_5_spearman_oracle():
    rng = random.Random(20_250_801)

    # (a) rho vs brute-force rank-definition oracle, full n in [4, 8] w/ ties
    for _ in range(200):
        n = rng.randint(4, 8)
        xs, ys = _tied_pair(rng, n)
        rho, _ = spearman(xs, ys)
        assert abs(rho - spearman_rho_by_definition(xs, ys)) <= 1e-12

    # (b) t-approximation vs exact permutation p at the reference size n=8
    worst = 0.0
    for _ in range(200):
        xs, ys = _tied_pair(rng, 8)
        _, p_t = spearman(xs, ys)
        _, p_exact = spearman(xs, ys, method="exact_permutation")
        worst = max(worst, abs(p_t - p_exact))
        assert abs(p_t - p_exact) <= 0.08

    # (c) exact invariance under 100 random strictly monotone transforms
    base_xs, base_ys = _tied_pair(rng, 8)
    rho_base, _ = spearman(base_xs, base_ys)
    for index in range(100):
        transform = MONOTONE_TRANSFORMS[index % len(MONOTONE_TRANSFORMS)]
        a = rng.uniform(0.1, 5.0)
        b = rng.uniform(-10.0, 10.0)
        txs = [float(transform(x, a, b)) for x in base_xs]
        rho_t, _ = spearman(txs, base_ys)
        assert rho_t == rho_base
    announce(5, f"rho matches the rank-definition oracle to 1e-12 on 200 tied "
                f"pairs (n 4-8); |p_t - p_perm| <= 0.08 at n=8 (worst {worst:.3f}); "
                f"invariance exact on 100 transforms")


@pytest.mark.xfail(
    strict=True,
    reason="Literal reading of criterion 5: the 0.08 p-closeness bound cannot "
           "hold over samples of size 4; the permutation null of |rho| at n=4 "
           "has atoms of mass up to 8/24, so any continuous approximation "
           "evaluated at an atom misses the inclusive permutation p by up to "
           "~0.167, and the t(df=2) approximation misses by ~0.15 on most "
           "untied n=4 pairs. See the decisions ledger.")
def test_criterion_5_literal_full_range_p_bound():
    rng = random.Random(20_250_801)
    for _ in range(200):
        n = rng.randint(4, 8)
        xs, ys = _tied_pair(rng, n)
        _, p_t = spearman(xs, ys)
        _, p_exact = spearman(xs, ys, method="exact_permutation")
        assert abs(p_t - p_exact) <= 0.08


# -- 6. Pipeline contracts ------------------------------------------------------


def test_criterion_6_pipeline_contracts(tmp_path):
    import hashlib

    from leverlab import pngutil
    from leverlab.backends import build_mock_gateway, read_marker
    from leverlab.engine import execute_run, gate_verdict
    from leverlab.ledger import LedgerWriter, RecordKind, load_run
    from leverlab.model import RunConfig, Scene, ValidityVerdict

    rng = random.Random(20_250_802)
    total_scenes = 0
    batch = 0
    while total_scenes < 1000:
        batch += 1
        scene_count = 100
        scenes = []
        shas = {}
        batch_dir = tmp_path / f"batch-{batch}"
        batch_dir.mkdir()
        for i in range(scene_count):
            scene_id = f"B{batch:02d}S{i:03d}"
            data = pngutil.patterned_png(hash((batch, i)) & 0xFFFF)
            path = batch_dir / f"{scene_id}.png"
            path.write_bytes(data)
            shas[scene_id] = hashlib.sha256(data).hexdigest()
            scenes.append(Scene(scene_id, "propville", str(path)))

        # adversarial critic schedule: extremes and random per-attempt rates
        patterns = [
            {j: 0.0 for j in range(1, 6)},
            {j: 1.0 for j in range(1, 6)},
            {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0, 5: 1.0},
            {j: rng.random() for j in range(1, 6)},
            {j: rng.choice([0.0, 0.3, 1.0]) for j in range(1, 6)},
        ]
        pass_rate = patterns[batch % len(patterns)]

        run_dir = batch_dir / "run"
        config = RunConfig(master_seed=1000 + batch, T=5)
        with LedgerWriter(run_dir, f"run-{batch}") as writer:
            writer.append(RecordKind.RUN_HEADER, {
                "schema_version": 1, "run_id": f"run-{batch}",
                "config": config.to_payload(), "generation_fingerprint": "fp"})
            gateway = build_mock_gateway(run_dir, config.master_seed, config.T,
                                         pass_rate=pass_rate)
            results = execute_run(scenes, config, gateway, writer)

        snapshot = load_run(run_dir)
        attempts_by_candidate: dict[str, list[dict]] = {}
        for record in snapshot.by_kind(RecordKind.ATTEMPT):
            attempts_by_candidate.setdefault(
                record.payload["candidate_id"], []).append(record.payload)
        outcomes = {r.payload["candidate_id"]: r.payload
                    for r in snapshot.by_kind(RecordKind.CANDIDATE_OUTCOME)}

        for candidate_id, attempts in attempts_by_candidate.items():
            # budget: never more than T attempts
            assert len(attempts) <= config.T
            scene_id = candidate_id.split(":", 1)[0]
            for attempt in attempts:
                ref = attempt.get("edited_image_ref")
                if ref is None:
                    continue
                # base-image identity: every edit starts from the original
                marker = read_marker((run_dir / ref).read_bytes())
                assert marker["base_image_sha256"] == shas[scene_id]

        for candidate_id, outcome in outcomes.items():
            verdicts = [a["verdict"] for a in outcome["attempts"] if a.get("verdict")]
            if outcome["status"] == "Accepted":
                # first-accept: the accepted attempt is the only passing one
                accepted_index = outcome["retained"]["accepted_attempt_index"]
                assert accepted_index == len(outcome["attempts"])
                for attempt in outcome["attempts"][:-1]:
                    verdict = ValidityVerdict.from_payload(attempt["verdict"])
                    assert not gate_verdict(verdict).passed
                final = ValidityVerdict.from_payload(outcome["attempts"][-1]["verdict"])
                assert gate_verdict(final).passed

        # baseline scored exactly once per scene
        baseline_scores: dict[str, int] = {}
        for record in snapshot.by_kind(RecordKind.SCORE):
            if record.payload["subject"] == "baseline":
                scene_id = record.payload["scene_id"]
                baseline_scores[scene_id] = baseline_scores.get(scene_id, 0) + 1
        assert all(count == 1 for count in baseline_scores.values())
        assert len(baseline_scores) == scene_count

        total_scenes += scene_count

    announce(6, f"first-accept, budget, base-image identity and "
                f"baseline-scored-once hold over {total_scenes} randomized scenes")


# -- 7. Resume equivalence ------------------------------------------------------


def test_criterion_7_resume_equivalence(fixture_dir, tmp_path):
    from leverlab.config import load_config
    from leverlab.ledger import SimulatedCrash, load_run
    from leverlab.report import emit_report
    from leverlab.runner import resume_run, start_run
    from leverlab.runview import build_view

    config, schedule = load_config(fixture_dir / "run.cfg")
    manifest = fixture_dir / "manifest.jsonl"

    baseline_dir = start_run(manifest, config, tmp_path / "baseline", mock=True,
                             schedule_path=schedule)
    emit_report(build_view(load_run(baseline_dir)), tmp_path / "baseline-report")
    baseline = {p.name: p.read_bytes()
                for p in (tmp_path / "baseline-report").iterdir()}
    total_appends = len(load_run(baseline_dir).records)

    rng = random.Random(20_250_803)
    kill_points = sorted(rng.sample(range(2, total_appends - 1), 10))
    for trial, kill_after in enumerate(kill_points):
        root = tmp_path / f"trial-{trial}"
        with pytest.raises(SimulatedCrash):
            start_run(manifest, config, root, mock=True, schedule_path=schedule,
                      abort_after_appends=kill_after)
        run_dir = next(p for p in root.iterdir() if p.is_dir())
        resume_run(run_dir, config, mock=True, schedule_path=schedule,
                   manifest_path=manifest)
        emit_report(build_view(load_run(run_dir)), root / "report")
        resumed = {p.name: p.read_bytes() for p in (root / "report").iterdir()}
        assert resumed == baseline, f"kill point {kill_after} diverged"
    announce(7, f"10/10 kill-and-resume trials reproduce the uninterrupted "
                f"run's reports byte-for-byte (kill points {kill_points})")


# -- 8. Contract parser robustness ------------------------------------------------


def _violation_corpus(seed: int, size: int):
    """Mixed planner/critic replies with known mutation bookkeeping."""
    from leverlab.model import VOCABULARY

    rng = random.Random(seed)
    concepts = [c.id for c in VOCABULARY]

    def planner_entry(concept=None, family=None):
        concept = concept or rng.choice(concepts)
        from leverlab.model import family_of

        return {
            "lever_concept": concept,
            "lever_family": family or family_of(concept).display_name,
            "scene_support": f"support {rng.randint(1, 30)}",
            "target_object": "object",
            "intervention_direction": rng.choice(["add", "remove", "repair"]),
            "edit_template": "template",
            "edit_plan": "plan",
        }

    cases = []
    kinds = ("planner_valid", "planner_overbudget", "planner_missing_field",
             "planner_family_mismatch", "planner_unknown_concept",
             "planner_duplicate", "planner_fenced", "planner_prose",
             "planner_truncated", "planner_garbage",
             "critic_valid", "critic_missing_boolean", "critic_fenced",
             "critic_unknown_modes", "critic_truncated", "critic_garbage")
    while len(cases) < size:
        kind = kinds[len(cases) % len(kinds)]
        if kind.startswith("planner"):
            entries = [planner_entry() for _ in range(rng.randint(1, 5))]
            if kind == "planner_overbudget":
                entries = [planner_entry(concept=c) for c in
                           rng.sample(concepts, 6)]
            elif kind == "planner_missing_field":
                entries[0] = {k: v for k, v in entries[0].items()
                              if k != "edit_plan"}
            elif kind == "planner_family_mismatch":
                entries[0]["lever_family"] = "Visual Legibility" \
                    if entries[0]["lever_family"] != "Visual Legibility" \
                    else "Physical Maintenance"
            elif kind == "planner_unknown_concept":
                entries[0]["lever_concept"] = "hologram_billboards"
            elif kind == "planner_duplicate":
                entries = [entries[0], dict(entries[0])] + entries[1:]
            raw = json.dumps({"candidates": entries})
            if kind == "planner_fenced":
                raw = f"Sure!\n```json\n{raw}\n```"
            elif kind == "planner_prose":
                raw = f"As requested, the plan: {raw} -- end of reply."
            elif kind == "planner_truncated":
                raw = raw[: rng.randint(1, max(2, len(raw) - 2))]
            elif kind == "planner_garbage":
                raw = "".join(rng.choice("{}[],:\"abc \n") for _ in range(80))
            cases.append((kind, raw, len(entries)))
        else:
            doc = {
                "edit_attempted": True, "same_place_preserved": True,
                "is_localised": rng.choice([True, False]),
                "is_realistic": True, "is_plausible": rng.choice([True, False]),
                "notes": {"failure_modes": ["non_local_drift"],
                          "diagnosis": "", "repair_suggestion": ""},
            }
            if kind == "critic_missing_boolean":
                del doc["is_realistic"]
            elif kind == "critic_unknown_modes":
                doc["notes"]["failure_modes"] = ["melty walls", "Non-Local Drift"]
            raw = json.dumps(doc)
            if kind == "critic_fenced":
                raw = f"```\n{raw}\n```"
            elif kind == "critic_truncated":
                raw = raw[: rng.randint(1, max(2, len(raw) - 2))]
            elif kind == "critic_garbage":
                raw = "".join(rng.choice("{}[],:\"abc \n") for _ in range(60))
            cases.append((kind, raw, 0))
    return cases


def test_criterion_8_contract_parser_robustness():
    from leverlab.contracts import (
        MalformedDocument,
        MissingField,
        parse_critic_output,
        parse_planner_output,
    )
    from leverlab.model import ValidityVerdict

    cases = _violation_corpus(20_250_804, 500)
    assert len(cases) == 500
    typed_errors = 0
    paired = 0
    for kind, raw, entry_count in cases:
        if kind.startswith("planner"):
            try:
                candidates, violations = parse_planner_output(raw, K=5)
            except MalformedDocument:
                typed_errors += 1
                continue
            # pairing: every submitted entry is either accepted or carries
            # exactly one typed violation; nothing vanishes silently
            assert len(candidates) + len(violations) == entry_count, kind
            assert len(candidates) <= 5
            if kind in ("planner_overbudget", "planner_missing_field",
                        "planner_family_mismatch", "planner_unknown_concept",
                        "planner_duplicate"):
                assert violations, kind
            paired += 1
        else:
            try:
                verdict = parse_critic_output(raw)
                assert isinstance(verdict, ValidityVerdict)
            except (MalformedDocument, MissingField):
                typed_errors += 1
    announce(8, f"500-case corpus: zero crashes; {typed_errors} typed errors; "
                f"{paired} parsed planner replies all satisfy the "
                f"drop/violation pairing")


# -- 9. Report determinism ---------------------------------------------------------


def test_criterion_9_report_determinism(reference_view, tmp_path):
    from leverlab.model import stable_hash64
    from leverlab.report import emit_report

    emit_report(reference_view, tmp_path / "a")
    emit_report(reference_view, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name

    # every family-table number equals an independent recomputation
    config = reference_view.config
    scene_count = len(reference_view.scenes)
    recomputed = 0
    for line in (tmp_path / "a" / "family_table.tsv").read_text().splitlines()[1:]:
        cells = line.split("\t")
        from leverlab.model import LeverFamily

        display = cells[0]
        members = [
            c for c in reference_view.candidates()
            if display == "Overall"
            or LeverFamily(c.family).display_name == display
        ]
        valid = [c for c in members if c.is_valid]
        rate = wilson_interval(len(valid), len(members), config.confidence_z)
        assert cells[1:6] == [str(len(valid)), str(len(members)),
                              f"{rate.point:.2f}", f"{rate.lo:.2f}", f"{rate.hi:.2f}"]
        deltas = [c.delta_aux for c in valid]
        group_key = "Overall" if display == "Overall" else valid[0].family
        seed = stable_hash64(config.master_seed, "bootstrap", "Family",
                             group_key) % 2**32
        ci = bootstrap_mean_ci(deltas, config.bootstrap_B, 0.05, seed)
        assert cells[6:9] == [f"{ci.point:+.3f}", f"{ci.lo:+.3f}", f"{ci.hi:+.3f}"]
        shortlisted = sum(1 for d in deltas if d > config.theta_aux)
        assert cells[9] == f"{shortlisted / scene_count:.2f}"
        recomputed += 1
    announce(9, f"report bytes identical across emissions; {recomputed} table "
                f"rows recomputed independently")


# -- 10. 2AFC schedule balance (secondary surface, server side) ---------------------


def test_criterion_10_judgement_schedule_balance(reference_run, tmp_path):
    import os
    import shutil

    from fastapi.testclient import TestClient

    from leverlab.judging import build_schedule
    from leverlab.ledger import load_run
    from leverlab.runview import build_view
    from leverlab.service import create_app

    view = build_view(load_run(reference_run))
    candidate_ids = sorted(c.candidate_id for c in view.valid_candidates())
    schedule = build_schedule(candidate_ids, 2, view.config.master_seed)
    assert len(schedule) == 354
    sides: dict[str, list[bool]] = {}
    for slot in schedule:
        sides.setdefault(slot.candidate_id, []).append(slot.left_is_edited)
    assert all(sorted(v) == [False, True] for v in sides.values())
    fraction = sum(s.left_is_edited for s in schedule) / len(schedule)
    assert 0.45 <= fraction <= 0.55

    runs_root = tmp_path / "runs"
    run_dir = runs_root / reference_run.name
    shutil.copytree(reference_run / "images", run_dir / "images",
                    copy_function=os.link)
    shutil.copy(reference_run / "ledger.jsonl", run_dir / "ledger.jsonl")
    with TestClient(create_app(runs_root)) as client:
        inspected = 0
        pair = None
        for _ in range(20):
            pair = client.get("/judge/next", params={"session": "audit"}).json()
            if pair["done"]:
                break
            blob = json.dumps(pair).lower()
            for forbidden in ("left_is_edited", "edited", "candidate", "concept",
                              "family", "delta", "sha"):
                assert forbidden not in blob, forbidden
            inspected += 1
            client.post("/judge", json={"assignment_id": pair["assignment_id"],
                                        "choice": "left"})
        assert inspected == 20

        raw_lines = (run_dir / "ledger.jsonl").read_text().splitlines()
        stored = [json.loads(l) for l in raw_lines if json.loads(l)["kind"] == "Judgement"]
        duplicate = client.post("/judge", json={"assignment_id": pair["assignment_id"],
                                                "choice": "right"})
        assert duplicate.status_code == 409
        after = [json.loads(l) for l in (run_dir / "ledger.jsonl").read_text().splitlines()
                 if json.loads(l)["kind"] == "Judgement"]
        assert len(after) == len(stored) == 20  # duplicate left no record
    announce(10, "354 balanced assignments (177 x 1/1 split, global left-edited "
                 f"{fraction:.3f}); duplicates rejected; 20 rater payloads leak-free")


# -- 11. Synthetic-rater concordance -------------------------------------------------


def test_criterion_11_synthetic_rater_concordance(reference_run, tmp_path):
    import os
    import shutil

    from fastapi.testclient import TestClient

    from leverlab.ledger import load_run
    from leverlab.runview import build_view
    from leverlab.service import create_app
    from leverlab.judging import aggregate_judgements

    runs_root = tmp_path / "runs"
    run_dir = runs_root / reference_run.name
    shutil.copytree(reference_run / "images", run_dir / "images",
                    copy_function=os.link)
    shutil.copy(reference_run / "ledger.jsonl", run_dir / "ledger.jsonl")

    view = build_view(load_run(run_dir))
    info = {c.candidate_id: {"family": c.family, "delta_aux": c.delta_aux}
            for c in view.valid_candidates()}

    rng = np.random.default_rng(20_250_805)
    with TestClient(create_app(runs_root)) as client:
        book = client.app.state.leverlab
        answered = 0
        session = "synthetic-rater"
        while True:
            pair = client.get("/judge/next", params={"session": session}).json()
            if pair["done"]:
                break
            assignment_id = pair["assignment_id"]
            slot = client.app.state.leverlab.book.slots[assignment_id]
            delta = info[slot.candidate_id]["delta_aux"]
            perceived = delta + rng.normal(0, 0.15)
            prefers_edited = perceived > 0
            choice = ("left" if prefers_edited == slot.left_is_edited else "right")
            response = client.post("/judge", json={
                "assignment_id": assignment_id, "choice": choice,
                "rater_tag": "sim"})
            assert response.status_code == 200
            answered += 1
        assert answered == 354

        results = client.get("/judge/results").json()
        assert results["judgements"] == 354
        assert results["concordance"] is not None
        assert results["concordance"] > 0.5

        # aggregate Wilson CIs equal direct stats-engine output
        refreshed = build_view(load_run(run_dir))
        aggregate = aggregate_judgements(refreshed.judgements, info,
                                         refreshed.config.confidence_z)
        by_id = {row["candidate_id"]: row for row in results["per_edit"]}
        for row in aggregate.per_edit:
            expected = wilson_interval(row.chose_edited, row.judgements,
                                       refreshed.config.confidence_z)
            reported = by_id[row.candidate_id]["win_rate"]
            assert reported["point"] == expected.point
            assert reported["lo"] == expected.lo
            assert reported["hi"] == expected.hi
    announce(11, f"354 synthetic judgements; concordance "
                 f"{results['concordance']:.3f} > 0.5; per-edit Wilson CIs "
                 f"match stats-engine exactly")
