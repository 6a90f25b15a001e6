"""Report emission: every table and data series, regenerated from the ledger.

The emitter holds no arithmetic of its own beyond formatting; each number is
a stats-engine result over the replayed run view. Output is byte-deterministic
for a given ledger and config: fixed orderings, fixed float formats, no
timestamps. Rates print at two decimals and proxy shifts at three; internal
values keep full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import LeverFamily, LeverlabError
from .runview import RunView
from .stats import (
    GroupSummary,
    SweepPoint,
    failure_taxonomy,
    spearman,
    summarize_concepts,
    summarize_groups,
    threshold_sweep,
)

FAMILY_ORDER = tuple(f.value for f in LeverFamily)

CITY_DISPLAY = {
    "amsterdam": "Amsterdam",
    "abuja": "Abuja",
    "san_francisco": "San Francisco",
    "santiago": "Santiago",
    "singapore": "Singapore",
}


class IncompleteRun(LeverlabError):
    """Raised only in strict mode; the default emitter reports gaps inline."""


@dataclass
class ReportBundle:
    family_table: list[GroupSummary]
    city_table: list[GroupSummary]
    concept_table: list[GroupSummary]
    distribution: dict[int, int]
    sweep_series: dict[str, list[SweepPoint]]
    taxonomy: dict[str, int]
    rejected_total: int
    scatter: list[tuple[str, float, int]]
    spearman_rho: float | None
    spearman_p: float | None
    qualitative_manifest: list[dict]
    shortlisted_total: int
    scene_count: int
    planner_failures: int
    theta_aux: float = 0.1
    gaps: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.gaps


def _display_group(key: str, group: str) -> str:
    if key == "City":
        return CITY_DISPLAY.get(group, group)
    if key == "Family":
        return LeverFamily(group).display_name if group in FAMILY_ORDER else group
    return group


def _ordered(rows: list[GroupSummary], key: str) -> list[GroupSummary]:
    if key == "Family":
        rank = {name: i for i, name in enumerate(FAMILY_ORDER)}
        return sorted(rows, key=lambda r: rank.get(r.group_key, 99))
    return sorted(rows, key=lambda r: r.group_key)


def build_report(view: RunView, strict: bool = False,
                 overrides: dict | None = None) -> ReportBundle:
    """Compute the full bundle from a run view.

    overrides may replace analysis-only parameters (theta_aux, cutoffs) for
    this emission without touching the ledger.
    """
    import dataclasses

    gaps = view.incomplete_gaps()
    if gaps and strict:
        raise IncompleteRun("; ".join(gaps))
    config = view.config
    if overrides:
        config = dataclasses.replace(config, **overrides)

    family_rows = summarize_groups(view, "Family", config)
    city_rows = summarize_groups(view, "City", config)
    concept_rows = summarize_concepts(view, config)

    overall = [r for r in family_rows if r.group_key == "Overall"]
    family_table = _ordered([r for r in family_rows if r.group_key != "Overall"],
                            "Family") + overall
    overall_city = [r for r in city_rows if r.group_key == "Overall"]
    city_table = _ordered([r for r in city_rows if r.group_key != "Overall"],
                          "City") + overall_city

    sweep_series = {
        "Family": threshold_sweep(view.deltas_by_scene("Family"),
                                  sorted(config.sweep_cutoffs), comparator="ge"),
        "City": threshold_sweep(view.deltas_by_scene("City"),
                                sorted(config.sweep_cutoffs), comparator="ge"),
    }

    taxonomy, rejected_total = failure_taxonomy(
        view.rejected_failure_modes(config.taxonomy_rule))

    scatter = view.scatter_series()
    rho = p = None
    if len(scatter) >= 3:
        try:
            rho, p = spearman([b for _s, b, _v in scatter], [v for _s, _b, v in scatter])
        except Exception:
            rho = p = None

    qualitative = []
    for scene in view.scene_list:
        for candidate in scene.candidates:
            if candidate.retained is None:
                continue
            qualitative.append({
                "scene_id": scene.scene_id,
                "city": scene.city,
                "candidate_id": candidate.candidate_id,
                "concept": candidate.concept_id,
                "family": candidate.family,
                "original_ref": scene.image_ref,
                "edited_ref": candidate.retained["edited_image_ref"],
                "delta_aux": candidate.retained["delta_aux"],
                "canonical": candidate.canonical_concept,
            })

    shortlisted_total = sum(
        1 for c in view.valid_candidates()
        if c.delta_aux is not None and c.delta_aux > config.theta_aux)

    return ReportBundle(
        family_table=family_table,
        city_table=city_table,
        concept_table=concept_rows,
        distribution=view.valid_count_distribution(),
        sweep_series=sweep_series,
        taxonomy=taxonomy,
        rejected_total=rejected_total,
        scatter=scatter,
        spearman_rho=rho,
        spearman_p=p,
        qualitative_manifest=qualitative,
        shortlisted_total=shortlisted_total,
        scene_count=sum(1 for s in view.scene_list if not s.planner_failed),
        planner_failures=view.planner_failure_count(),
        theta_aux=config.theta_aux,
        gaps=gaps,
    )


def _fmt_rate(value: float) -> str:
    return f"{value:.2f}"


def _fmt_delta(value: float | None) -> str:
    return "" if value is None else f"{value:+.3f}"


def _group_table_text(rows: list[GroupSummary], key: str) -> str:
    lines = ["group\tvalid\tproposed\trate\trate_lo\trate_hi\tmean_delta\t"
             "delta_lo\tdelta_hi\tshortlisted_per_scene"]
    for row in rows:
        mean = row.mean_delta
        lines.append("\t".join([
            _display_group(key, row.group_key),
            str(row.valid),
            str(row.proposed),
            _fmt_rate(row.rate.point),
            _fmt_rate(row.rate.lo),
            _fmt_rate(row.rate.hi),
            _fmt_delta(mean.point if mean else None),
            _fmt_delta(mean.lo if mean else None),
            _fmt_delta(mean.hi if mean else None),
            f"{row.shortlisted_mean_per_scene:.2f}",
        ]))
    return "\n".join(lines) + "\n"


def _sweep_table_text(points: list[SweepPoint]) -> str:
    lines = ["cutoff\tgroup\tshortlisted_total\tscene_count\tmean_per_scene"]
    for point in points:
        lines.append("\t".join([
            f"{point.cutoff:.2f}", point.group_key,
            str(point.shortlisted_total), str(point.scene_count),
            f"{point.mean_per_scene:.4f}",
        ]))
    return "\n".join(lines) + "\n"


def _family_diversity(view: RunView) -> float | None:
    """Mean distinct proposed families per scene (the planner contract's
    cross-family diversity is a preference, so it is reported, not gated)."""
    counts = [
        len({c.family for c in scene.candidates})
        for scene in view.scene_list
        if scene.candidates
    ]
    return sum(counts) / len(counts) if counts else None


def _summary_text(bundle: ReportBundle, view: RunView) -> str:
    overall = bundle.family_table[-1]
    lines = [
        f"run: {view.run_id}",
        f"scenes: {bundle.scene_count}",
        f"proposed candidates: {overall.proposed}",
        f"valid edits: {overall.valid} (rate {_fmt_rate(overall.rate.point)}, "
        f"95% CI [{_fmt_rate(overall.rate.lo)}, {_fmt_rate(overall.rate.hi)}])",
        f"planner failures before audit: {bundle.planner_failures}",
    ]
    if overall.mean_delta:
        deltas = sorted(c.delta_aux for c in view.valid_candidates()
                        if c.delta_aux is not None)
        median = deltas[len(deltas) // 2] if len(deltas) % 2 else (
            (deltas[len(deltas) // 2 - 1] + deltas[len(deltas) // 2]) / 2)
        lines.append(
            f"mean proxy shift: {_fmt_delta(overall.mean_delta.point)} "
            f"(95% CI [{_fmt_delta(overall.mean_delta.lo)}, "
            f"{_fmt_delta(overall.mean_delta.hi)}], median {_fmt_delta(median)}, "
            f"range [{_fmt_delta(deltas[0])}, {_fmt_delta(deltas[-1])}])")
    lines.append(
        f"shortlisted at theta {bundle.theta_aux:g}: {bundle.shortlisted_total} "
        f"({bundle.shortlisted_total / bundle.scene_count:.2f} per scene)"
        if bundle.scene_count else "shortlisted: n/a")
    lines.append("valid-count distribution: " + json.dumps(bundle.distribution))
    diversity = _family_diversity(view)
    if diversity is not None:
        lines.append(f"candidate family diversity: {diversity:.2f} "
                     f"distinct families per scene (soft planner preference, "
                     f"not enforced)")
    lines.append(f"rejected: {bundle.rejected_total}; taxonomy: "
                 + json.dumps(bundle.taxonomy, sort_keys=True))
    if bundle.spearman_rho is not None:
        lines.append(
            f"baseline score vs valid count: Spearman rho={bundle.spearman_rho:.2f}, "
            f"p={bundle.spearman_p:.3f}")
    present_families = {row.group_key for row in bundle.family_table}
    missing = [LeverFamily(name).display_name for name in FAMILY_ORDER
               if name not in present_families]
    if missing:
        lines.append("families without proposals (omitted from the table): "
                     + ", ".join(missing))
    non_canonical = sorted({c.concept_id for c in view.candidates()
                            if not c.canonical_concept})
    if non_canonical:
        lines.append("non-canonical concepts present: " + ", ".join(non_canonical))
    if bundle.gaps:
        lines.append("")
        lines.append("INCOMPLETE RUN - gaps:")
        lines.extend(f"  - {gap}" for gap in bundle.gaps)
    return "\n".join(lines) + "\n"


def emit_report(view: RunView, out_dir: str | Path | None = None,
                strict: bool = False, overrides: dict | None = None) -> ReportBundle:
    """Build the bundle and write the report files.

    Files: family/city/concept tables (TSV), valid-count distribution (JSON),
    sweep series (TSV), taxonomy (TSV), scatter series (TSV), qualitative
    image-pair manifest (JSONL), and a human-readable summary.
    """
    bundle = build_report(view, strict=strict, overrides=overrides)
    out = Path(out_dir) if out_dir is not None else view.run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)

    (out / "family_table.tsv").write_text(
        _group_table_text(bundle.family_table, "Family"), encoding="utf-8")
    (out / "city_table.tsv").write_text(
        _group_table_text(bundle.city_table, "City"), encoding="utf-8")
    (out / "concept_table.tsv").write_text(
        _group_table_text(bundle.concept_table, "Concept"), encoding="utf-8")
    (out / "distribution.json").write_text(
        json.dumps({str(k): v for k, v in bundle.distribution.items()},
                   sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (out / "sweep_family.tsv").write_text(
        _sweep_table_text(bundle.sweep_series["Family"]), encoding="utf-8")
    (out / "sweep_city.tsv").write_text(
        _sweep_table_text(bundle.sweep_series["City"]), encoding="utf-8")
    taxonomy_lines = ["failure_mode\tcount"]
    taxonomy_lines += [f"{mode}\t{count}" for mode, count in sorted(bundle.taxonomy.items())]
    taxonomy_lines += [f"rejected_total\t{bundle.rejected_total}"]
    (out / "taxonomy.tsv").write_text("\n".join(taxonomy_lines) + "\n", encoding="utf-8")
    scatter_lines = ["scene_id\tbaseline_score\tvalid_count"]
    scatter_lines += [f"{s}\t{b!r}\t{v}" for s, b, v in bundle.scatter]
    if bundle.spearman_rho is not None:
        scatter_lines += [f"# spearman rho={bundle.spearman_rho:.2f} p={bundle.spearman_p:.3f}"]
    (out / "scatter.tsv").write_text("\n".join(scatter_lines) + "\n", encoding="utf-8")
    (out / "qualitative_manifest.jsonl").write_text(
        "".join(json.dumps(item, sort_keys=True) + "\n"
                for item in bundle.qualitative_manifest), encoding="utf-8")
    # The same rows as line-delimited records, for machine consumers.
    table_records = []
    for key, rows in (("Family", bundle.family_table), ("City", bundle.city_table),
                      ("Concept", bundle.concept_table)):
        for row in rows:
            table_records.append({"table": key, **row.to_payload()})
    for key, points in bundle.sweep_series.items():
        for point in points:
            table_records.append({
                "table": f"Sweep{key}", "cutoff": point.cutoff,
                "group_key": point.group_key,
                "shortlisted_total": point.shortlisted_total,
                "scene_count": point.scene_count,
            })
    (out / "tables.jsonl").write_text(
        "".join(json.dumps(record, sort_keys=True) + "\n"
                for record in table_records), encoding="utf-8")
    (out / "summary.txt").write_text(_summary_text(bundle, view), encoding="utf-8")
    return bundle
