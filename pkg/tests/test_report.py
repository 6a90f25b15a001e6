"""Report emission: byte determinism, stats recomputation, reference rows."""

import json
from pathlib import Path

import pytest

from leverlab.report import build_report, emit_report
from leverlab.stats import bootstrap_mean_ci, wilson_interval


REPORT_FILES = (
    "family_table.tsv", "city_table.tsv", "concept_table.tsv",
    "distribution.json", "sweep_family.tsv", "sweep_city.tsv",
    "taxonomy.tsv", "scatter.tsv", "qualitative_manifest.jsonl", "tables.jsonl",
    "summary.txt",
)


def test_emit_report_is_byte_deterministic(reference_view, tmp_path):
    emit_report(reference_view, tmp_path / "a")
    emit_report(reference_view, tmp_path / "b")
    for name in REPORT_FILES:
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_family_table_matches_reference_rows(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    rows = {}
    for line in (tmp_path / "family_table.tsv").read_text().splitlines()[1:]:
        cells = line.split("\t")
        rows[cells[0]] = cells
    mi = rows["Mobility Infrastructure"]
    assert (mi[1], mi[6]) == ("45", "+0.579")
    pm = rows["Physical Maintenance"]
    assert (pm[1], pm[2], pm[3], pm[4], pm[5]) == ("71", "92", "0.77", "0.68", "0.85")
    overall = rows["Overall"]
    assert (overall[1], overall[2], overall[3], overall[4], overall[5]) == \
        ("177", "250", "0.71", "0.65", "0.76")
    assert overall[6] == "+0.366"


def test_city_table_matches_reference_rows(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    rows = {}
    for line in (tmp_path / "city_table.tsv").read_text().splitlines()[1:]:
        cells = line.split("\t")
        rows[cells[0]] = cells
    expected = {
        "Amsterdam": ("40", "50", "0.80", "0.67", "0.89", "+0.400"),
        "Abuja": ("32", "50", "0.64", "0.50", "0.76", "-0.136"),
        "San Francisco": ("36", "50", "0.72", "0.58", "0.83", "+0.704"),
        "Santiago": ("38", "50", "0.76", "0.63", "0.86", "+0.742"),
        "Singapore": ("31", "50", "0.62", "0.48", "0.74", "-0.012"),
    }
    for city, values in expected.items():
        assert tuple(rows[city][1:7]) == values, city


def test_distribution_section(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    distribution = json.loads((tmp_path / "distribution.json").read_text())
    assert distribution == {"1": 2, "2": 3, "3": 16, "4": 24, "5": 5}


def test_every_table_number_recomputes_from_stats(reference_view, tmp_path):
    """The emitter holds no arithmetic: each printed cell equals an
    independent stats-engine recomputation over the raw view."""
    from leverlab.model import stable_hash64

    emit_report(reference_view, tmp_path)
    config = reference_view.config
    scene_count = sum(1 for s in reference_view.scene_list if not s.planner_failed)

    for key, filename in (("Family", "family_table.tsv"), ("City", "city_table.tsv")):
        for line in (tmp_path / filename).read_text().splitlines()[1:]:
            cells = line.split("\t")
            display = cells[0]
            members = []
            for candidate in reference_view.candidates():
                group = reference_view.group_key(candidate, key)
                pretty = group
                if key == "City":
                    from leverlab.report import CITY_DISPLAY

                    pretty = CITY_DISPLAY.get(group, group)
                else:
                    from leverlab.model import LeverFamily

                    pretty = (LeverFamily(group).display_name
                              if display != "Overall" else "Overall")
                if display == "Overall" or pretty == display:
                    members.append(candidate)
            valid = [c for c in members if c.is_valid]
            assert cells[1] == str(len(valid))
            assert cells[2] == str(len(members))
            rate = wilson_interval(len(valid), len(members), config.confidence_z)
            assert cells[3] == f"{rate.point:.2f}"
            assert cells[4] == f"{rate.lo:.2f}"
            assert cells[5] == f"{rate.hi:.2f}"
            deltas = [c.delta_aux for c in valid if c.delta_aux is not None]
            if deltas:
                group_key = "Overall" if display == "Overall" else \
                    reference_view.group_key(valid[0], key)
                seed = stable_hash64(config.master_seed, "bootstrap", key,
                                     group_key) % 2**32
                ci = bootstrap_mean_ci(deltas, config.bootstrap_B, 0.05, seed)
                assert cells[6] == f"{ci.point:+.3f}"
                assert cells[7] == f"{ci.lo:+.3f}"
                assert cells[8] == f"{ci.hi:+.3f}"
            shortlisted = sum(1 for d in deltas if d > config.theta_aux)
            assert cells[9] == f"{shortlisted / scene_count:.2f}"


def test_sweep_is_monotone_non_increasing(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    for filename in ("sweep_family.tsv", "sweep_city.tsv"):
        series: dict[str, list[int]] = {}
        for line in (tmp_path / filename).read_text().splitlines()[1:]:
            cutoff, group, total, scenes, mean = line.split("\t")
            series.setdefault(group, []).append(int(total))
        for group, totals in series.items():
            assert totals == sorted(totals, reverse=True), (filename, group)


def test_sweep_family_means_at_operating_threshold(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    rows = {}
    for line in (tmp_path / "sweep_family.tsv").read_text().splitlines()[1:]:
        cutoff, group, total, scenes, mean = line.split("\t")
        if cutoff == "0.10":
            rows[group] = float(mean)
    assert rows["PhysicalMaintenance"] == pytest.approx(0.76)
    assert rows["MobilityInfrastructure"] == pytest.approx(0.56)
    assert rows["EnvironmentalAmenity"] == pytest.approx(0.54)
    assert rows["VisualLegibility"] == pytest.approx(0.04)
    assert rows["Overall"] == pytest.approx(1.90)


def test_qualitative_manifest_lists_retained_pairs(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    lines = (tmp_path / "qualitative_manifest.jsonl").read_text().splitlines()
    assert len(lines) == 177
    item = json.loads(lines[0])
    for field in ("scene_id", "candidate_id", "concept", "family",
                  "original_ref", "edited_ref", "delta_aux"):
        assert field in item


def test_summary_shape(reference_view, tmp_path):
    emit_report(reference_view, tmp_path)
    text = (tmp_path / "summary.txt").read_text()
    assert "valid edits: 177 (rate 0.71" in text
    assert "shortlisted at theta 0.1: 95 (1.90 per scene)" in text
    assert "median +0.184" in text
    assert "range [-3.624, +3.842]" in text
    assert "Spearman rho=0.10, p=0.511" in text
    assert "planner failures before audit: 0" in text


def test_theta_override_changes_shortlist_only(reference_view, tmp_path):
    bundle_default = build_report(reference_view)
    bundle_high = build_report(reference_view, overrides={"theta_aux": 1.0})
    assert bundle_default.shortlisted_total == 95
    assert bundle_high.shortlisted_total < 95
    assert bundle_high.taxonomy == bundle_default.taxonomy


def test_incomplete_run_reports_gaps(tmp_path):
    from leverlab.ledger import LedgerWriter, RecordKind, load_run
    from leverlab.runview import build_view
    from leverlab.model import RunConfig

    run_dir = tmp_path / "partial"
    with LedgerWriter(run_dir, "r1") as writer:
        writer.append(RecordKind.RUN_HEADER, {
            "schema_version": 1, "run_id": "r1",
            "config": RunConfig().to_payload(),
            "generation_fingerprint": "fp"})
        writer.append(RecordKind.SCENE_INGESTED,
                      {"scene_id": "A", "city": "x", "image_ref": "images/a.png",
                       "baseline_score": None})
        writer.append(RecordKind.CANDIDATE_PROPOSED, {
            "scene_id": "A", "candidate_id": "A:litter_removal:01", "ordinal": 1,
            "candidate": {"lever_concept": "litter_removal",
                          "lever_family": "PhysicalMaintenance",
                          "scene_support": "kerb", "target_object": "litter",
                          "intervention_direction": "remove",
                          "edit_template": "t", "edit_plan": "p",
                          "canonical_concept": True}})
    view = build_view(load_run(run_dir))
    bundle = emit_report(view, tmp_path / "report")
    assert not bundle.complete
    assert any("no terminal outcome" in gap for gap in bundle.gaps)
    assert "INCOMPLETE RUN" in (tmp_path / "report" / "summary.txt").read_text()

    from leverlab.report import IncompleteRun

    with pytest.raises(IncompleteRun):
        build_report(view, strict=True)


def test_bundle_internal_consistency(reference_view):
    """Distribution sums to the scene count and weights back to the valid
    total; the qualitative manifest covers exactly the retained set."""
    bundle = build_report(reference_view)
    assert sum(bundle.distribution.values()) == bundle.scene_count == 50
    assert sum(count * valid for valid, count in bundle.distribution.items()) == 177
    assert len(bundle.qualitative_manifest) == 177
    overall = bundle.family_table[-1]
    assert overall.valid == 177 and overall.proposed == 250
    assert bundle.rejected_total == overall.proposed - overall.valid
