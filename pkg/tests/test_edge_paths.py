"""Edge paths and spec-example cases not covered by the main suites."""

import json

import pytest

from leverlab import pngutil
from leverlab.backends import ArtifactStore, Gateway, MockCritic, MockEditor, MockScorer
from leverlab.engine import SceneEngine, execute_run
from leverlab.ledger import LedgerWriter, RecordKind, load_run
from leverlab.model import Percept, RunConfig, Scene, attempt_seed_for
from leverlab.runview import build_view


def test_attempt_seed_collision_scan_one_million():
    # brute-force scan: 10^6 derived seeds over distinct inputs, no duplicates
    seeds = set()
    count = 0
    for master in range(2):
        for scene in range(50):
            scene_id = f"S{scene:03d}"
            for cand in range(80):
                candidate_id = f"{scene_id}:c{cand:02d}"
                for attempt in range(1, 126):
                    seeds.add(attempt_seed_for(master, scene_id, candidate_id, attempt))
                    count += 1
    assert count == 1_000_000
    assert len(seeds) == count


class ListPlanner:
    """Planner stub replying with a fixed candidate list."""

    def __init__(self, entries):
        self.entries = entries

    def plan(self, scene, image, percept, K):
        return json.dumps({"candidates": self.entries})


def _engine_for(tmp_path, planner, pass_rate=1.0, master_seed=5):
    run_dir = tmp_path / "run"
    writer = LedgerWriter(run_dir, "r1")
    writer.append(RecordKind.RUN_HEADER, {
        "schema_version": 1, "run_id": "r1", "config": RunConfig().to_payload(),
        "generation_fingerprint": "fp"})
    store = ArtifactStore(run_dir)
    gateway = Gateway(planner, MockEditor(), MockCritic(master_seed, 5, pass_rate=pass_rate),
                      MockScorer(master_seed), store, Percept(), backoff_base_s=0.0)
    return run_dir, writer, gateway


def _scene(tmp_path):
    image = tmp_path / "scene.png"
    image.write_bytes(pngutil.patterned_png(1))
    return Scene("S1", "edgeville", str(image))


def test_scene_with_zero_candidates_has_null_coverage(tmp_path):
    scene = _scene(tmp_path)
    run_dir, writer, gateway = _engine_for(tmp_path, ListPlanner([]))
    result = execute_run([scene], RunConfig(master_seed=5), gateway, writer)[0]
    writer.close()
    assert result.candidates == ()
    assert result.coverage is None

    view = build_view(load_run(run_dir))
    assert not view.scenes["S1"].planner_failed  # empty is legitimate, not a failure
    assert view.valid_count_distribution() == {}  # excluded from coverage pools
    # the scene still contributes a baseline to the scatter series
    assert view.scenes["S1"].baseline_score is not None


def test_planner_returning_three_candidates_is_not_padded(tmp_path):
    entries = []
    for concept, family in (("litter_removal", "Physical Maintenance"),
                            ("lighting_repair", "Environmental Amenity"),
                            ("crosswalk_repainting", "Mobility Infrastructure")):
        entries.append({
            "lever_concept": concept, "lever_family": family,
            "scene_support": f"support for {concept}", "target_object": "t",
            "intervention_direction": "repair", "edit_template": "e",
            "edit_plan": "p"})
    scene = _scene(tmp_path)
    run_dir, writer, gateway = _engine_for(tmp_path, ListPlanner(entries))
    result = execute_run([scene], RunConfig(master_seed=5), gateway, writer)[0]
    writer.close()
    assert len(result.candidates) == 3
    assert result.coverage == 1.0


def test_backend_failed_candidate_accounting(tmp_path):
    from leverlab.backends import BackendRole, TransportError
    from leverlab.stats import summarize_groups

    class DeadEditor:
        def edit(self, image, instruction, context):
            raise TransportError(BackendRole.EDITOR, "unreachable")

    entries = [{
        "lever_concept": "litter_removal", "lever_family": "Physical Maintenance",
        "scene_support": "kerb", "target_object": "litter",
        "intervention_direction": "remove", "edit_template": "e", "edit_plan": "p"}]
    scene = _scene(tmp_path)
    run_dir = tmp_path / "run"
    writer = LedgerWriter(run_dir, "r1")
    writer.append(RecordKind.RUN_HEADER, {
        "schema_version": 1, "run_id": "r1", "config": RunConfig().to_payload(),
        "generation_fingerprint": "fp"})
    store = ArtifactStore(run_dir)
    gateway = Gateway(ListPlanner(entries), DeadEditor(), MockCritic(5, 5),
                      MockScorer(5), store, Percept(), backoff_base_s=0.0)
    result = execute_run([scene], RunConfig(master_seed=5), gateway, writer)[0]
    writer.close()

    assert result.retained == ()
    view = build_view(load_run(run_dir))
    candidate = view.candidates()[0]
    assert candidate.status == "BackendFailed"
    assert candidate.attempts[0]["backend_error"]

    # default: counts as proposed, not valid
    rows = summarize_groups(view, "Overall", RunConfig())
    assert rows[0].proposed == 1 and rows[0].valid == 0
    # strict mode: excluded from the proposed pool entirely
    strict_rows = summarize_groups(view, "Overall",
                                   RunConfig(strict_backend_accounting=True))
    assert strict_rows == []


def test_taxonomy_rule_final_vs_union(tmp_path):
    """The default rule reads the final attempt's verdict; the union rule
    accumulates every attempt's failed criteria."""
    from leverlab.stats import failure_taxonomy

    run_dir = tmp_path / "run"
    with LedgerWriter(run_dir, "r1") as writer:
        writer.append(RecordKind.RUN_HEADER, {
            "schema_version": 1, "run_id": "r1", "config": RunConfig().to_payload(),
            "generation_fingerprint": "fp"})
        writer.append(RecordKind.CANDIDATE_PROPOSED, {
            "scene_id": "S1", "candidate_id": "S1:litter_removal:01", "ordinal": 1,
            "candidate": {"lever_concept": "litter_removal",
                          "lever_family": "PhysicalMaintenance",
                          "scene_support": "kerb", "target_object": "litter",
                          "intervention_direction": "remove",
                          "edit_template": "t", "edit_plan": "p",
                          "canonical_concept": True}})
        attempts = []
        for index, flags in enumerate((
            {"is_realistic": False},                      # attempt 1: unrealistic
            {"is_plausible": False, "is_localised": False},  # attempt 2: final
        ), start=1):
            verdict = {"edit_attempted": True, "same_place_preserved": True,
                       "is_localised": True, "is_realistic": True,
                       "is_plausible": True,
                       "notes": {"failure_modes": [], "diagnosis": "",
                                 "repair_suggestion": ""}}
            verdict.update(flags)
            attempts.append({
                "candidate_id": "S1:litter_removal:01", "attempt_index": index,
                "attempt_seed": index, "edited_image_ref": "images/x.png",
                "verdict": verdict, "backend_error": None})
        writer.append(RecordKind.CANDIDATE_OUTCOME, {
            "scene_id": "S1", "candidate_id": "S1:litter_removal:01",
            "status": "RejectedAllAttempts", "attempts": attempts,
            "retained": None})

    view = build_view(load_run(run_dir))
    final_counts, _ = failure_taxonomy(view.rejected_failure_modes("final_attempt"))
    union_counts, _ = failure_taxonomy(view.rejected_failure_modes("union"))
    assert final_counts["unrealistic"] == 0
    assert final_counts["implausible_lever"] == 1
    assert final_counts["non_local_drift"] == 1
    assert union_counts["unrealistic"] == 1  # first attempt's failure surfaces
    assert union_counts["implausible_lever"] == 1
    assert union_counts["non_local_drift"] == 1


def test_ledger_referential_integrity_on_reference_run(reference_run):
    """Every image reference in the ledger resolves in the artifact store."""
    snapshot = load_run(reference_run)
    checked = 0
    for record in snapshot.records:
        refs = []
        payload = record.payload
        if record.kind is RecordKind.SCENE_INGESTED:
            refs.append(payload["image_ref"])
        elif record.kind is RecordKind.ATTEMPT and payload.get("edited_image_ref"):
            refs.append(payload["edited_image_ref"])
        elif record.kind is RecordKind.SCORE:
            refs.append(payload["image_ref"])
        for ref in refs:
            assert (reference_run / ref).is_file(), ref
            checked += 1
    assert checked > 500


def test_overall_mean_ci_within_reference_band(reference_view):
    from leverlab.stats import summarize_groups

    rows = summarize_groups(reference_view, "Overall", reference_view.config)
    overall = rows[0]
    assert overall.valid == 177
    assert 0.15 <= overall.mean_delta.lo
    assert overall.mean_delta.hi <= 0.60


def test_missing_families_noted_in_summary(tmp_path):
    """A small run with no candidates from some family gets an explicit note
    rather than a zero row."""
    from leverlab.report import emit_report

    entries = [{
        "lever_concept": "litter_removal", "lever_family": "Physical Maintenance",
        "scene_support": "kerb", "target_object": "litter",
        "intervention_direction": "remove", "edit_template": "e", "edit_plan": "p"}]
    scene = _scene(tmp_path)
    run_dir, writer, gateway = _engine_for(tmp_path, ListPlanner(entries))
    execute_run([scene], RunConfig(master_seed=5), gateway, writer)
    writer.close()

    view = build_view(load_run(run_dir))
    emit_report(view, tmp_path / "report")
    table = (tmp_path / "report" / "family_table.tsv").read_text()
    assert "Visual Legibility" not in table  # omitted, not zero-padded
    summary = (tmp_path / "report" / "summary.txt").read_text()
    assert "families without proposals" in summary
    assert "Visual Legibility" in summary


def test_score_rejected_debug_flag(tmp_path):
    from leverlab.backends import build_mock_gateway

    scene = _scene(tmp_path)
    for flag, expected in ((False, 0), (True, 1)):
        run_dir = tmp_path / f"run-{flag}"
        writer = LedgerWriter(run_dir, "r1")
        writer.append(RecordKind.RUN_HEADER, {
            "schema_version": 1, "run_id": "r1", "config": RunConfig().to_payload(),
            "generation_fingerprint": "fp"})
        gateway = build_mock_gateway(run_dir, 5, T=2, pass_rate=0.0)
        config = RunConfig(master_seed=5, T=2, score_rejected=flag)
        execute_run([scene], config, gateway, writer)
        writer.close()
        snapshot = load_run(run_dir)
        debug_scores = [r for r in snapshot.by_kind(RecordKind.SCORE)
                        if r.payload["subject"] == "rejected_edited"]
        rejected = sum(
            1 for r in snapshot.by_kind(RecordKind.CANDIDATE_OUTCOME)
            if r.payload["status"] == "RejectedAllAttempts")
        assert len(debug_scores) == (rejected if flag else 0)
        # statistics are unaffected either way: no retained edits, no deltas
        view = build_view(load_run(run_dir))
        assert view.valid_candidates() == []


def test_extension_concepts_flow_through_and_are_marked(tmp_path):
    from leverlab.model import InterventionDirection, LeverConcept, LeverFamily
    from leverlab.report import emit_report

    extension = LeverConcept("bench_installation",
                             LeverFamily.ENVIRONMENTAL_AMENITY,
                             "Bench installation", InterventionDirection.ADD)
    config = RunConfig(master_seed=5, extra_concepts=(extension,))
    entries = [{
        "lever_concept": "bench_installation",
        "lever_family": "Environmental Amenity",
        "scene_support": "the empty forecourt",
        "target_object": "bare paving",
        "intervention_direction": "add",
        "edit_template": "add a bench", "edit_plan": "Place one bench."}]
    scene = _scene(tmp_path)
    run_dir = tmp_path / "run"
    writer = LedgerWriter(run_dir, "r1")
    writer.append(RecordKind.RUN_HEADER, {
        "schema_version": 1, "run_id": "r1", "config": config.to_payload(),
        "generation_fingerprint": config.generation_fingerprint()})
    store = ArtifactStore(run_dir)
    gateway = Gateway(ListPlanner(entries), MockEditor(),
                      MockCritic(5, 5, pass_rate=1.0), MockScorer(5),
                      store, Percept(), backoff_base_s=0.0)

    from leverlab.engine import SceneEngine

    engine = SceneEngine(config, gateway, writer)
    result = engine.run_scene(scene)
    writer.close()
    assert len(result.retained) == 1

    view = build_view(load_run(run_dir))
    candidate = view.candidates()[0]
    assert candidate.concept_id == "bench_installation"
    assert not candidate.canonical_concept
    emit_report(view, tmp_path / "report")
    summary = (tmp_path / "report" / "summary.txt").read_text()
    assert "non-canonical concepts present: bench_installation" in summary
