"""Command-line entry points.

Exit codes: 0 success, 2 usage, 3 configuration, 4 missing run/header,
5 backend or pipeline failure, 6 manifest problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .backends import BackendError
from .config import ConfigError, load_config
from .engine import PlannerFailed
from .ledger import ConfigMismatch, IncompatibleSchemaVersion, MissingHeader, load_run
from .model import LeverlabError, ManifestError, RunConfig, load_manifest
from .runview import build_view

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_PIPELINE = 5
EXIT_MANIFEST = 6


def _load_config_arg(args) -> tuple[RunConfig, Path | None]:
    if args.config:
        config, schedule = load_config(args.config)
    else:
        config, schedule = RunConfig(), None
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if getattr(args, "theta", None) is not None:
        config = dataclasses.replace(config, theta_aux=args.theta)
    if getattr(args, "schedule", None):
        schedule = Path(args.schedule)
    return config, schedule


def _progress_printer(enabled: bool):
    if not enabled:
        return None

    def emit(event: dict) -> None:
        print(json.dumps(event, sort_keys=True), file=sys.stderr)

    return emit


def cmd_ingest(args) -> int:
    scenes = load_manifest(args.manifest)
    cities = sorted({s.city for s in scenes})
    with_baseline = sum(1 for s in scenes if s.baseline_score is not None)
    print(f"manifest ok: {len(scenes)} scenes, {len(cities)} cities "
          f"({', '.join(cities)}), {with_baseline} with baseline scores")
    return EXIT_OK


def cmd_run(args) -> int:
    from .runner import resume_run, start_run

    config, schedule = _load_config_arg(args)
    on_event = _progress_printer(args.progress)
    if args.resume:
        run_dir = resume_run(args.resume, config, mock=args.mock,
                             schedule_path=schedule, manifest_path=args.manifest,
                             on_event=on_event)
    else:
        if not args.manifest:
            print("run: --manifest is required for a fresh run", file=sys.stderr)
            return EXIT_USAGE
        run_dir = start_run(args.manifest, config, args.runs_root, mock=args.mock,
                            schedule_path=schedule, run_id=args.run_id,
                            on_event=on_event)

    view = build_view(load_run(run_dir))
    valid = len(view.valid_candidates())
    proposed = len(view.candidates())
    shortlisted = sum(1 for c in view.valid_candidates()
                      if c.delta_aux is not None and c.delta_aux > config.theta_aux)
    rate = f"{valid / proposed:.3f}" if proposed else "n/a"
    print(f"run {view.run_id}: {len(view.scenes)} scenes, "
          f"{proposed} proposed, {valid} valid (rate {rate}), "
          f"{shortlisted} shortlisted at theta {config.theta_aux:g}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_plan(args) -> int:
    from .runner import start_plan_only

    config, schedule = _load_config_arg(args)
    run_dir = start_plan_only(args.manifest, config, args.runs_root,
                              mock=args.mock, schedule_path=schedule,
                              run_id=args.run_id,
                              on_event=_progress_printer(args.progress))
    view = build_view(load_run(run_dir))
    print(f"plan {view.run_id}: {len(view.scenes)} scenes, "
          f"{len(view.candidates())} candidates proposed")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def _view_for(run_dir: str):
    return build_view(load_run(Path(run_dir)))


def cmd_report(args) -> int:
    from .report import emit_report

    view = _view_for(args.run_dir)
    overrides = {}
    if args.theta is not None:
        overrides["theta_aux"] = args.theta
    out = Path(args.out) if args.out else Path(args.run_dir) / "report"
    bundle = emit_report(view, out, overrides=overrides)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    if not bundle.complete:
        print(f"warning: incomplete run, {len(bundle.gaps)} gaps listed in summary",
              file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .report import emit_report

    cutoffs = tuple(float(c) for c in args.cutoffs.split(","))
    if list(cutoffs) != sorted(cutoffs):
        print("sweep: cutoffs must be ascending", file=sys.stderr)
        return EXIT_USAGE
    view = _view_for(args.run_dir)
    out = Path(args.out) if args.out else Path(args.run_dir) / "report"
    emit_report(view, out, overrides={"sweep_cutoffs": cutoffs})
    print((out / "sweep_family.tsv").read_text(encoding="utf-8"), end="")
    print((out / "sweep_city.tsv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.runs_root, judge_run_id=args.judge_run, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_judge_export(args) -> int:
    import hashlib

    view = _view_for(args.run_dir)
    lines = ["assignment_id\tcandidate_id\tchoice\tchose_edited\tlatency_ms\trater"]
    for payload in view.judgements:
        rater = hashlib.sha256(
            f"{view.run_id}:{payload.get('rater_tag', '')}".encode()).hexdigest()[:12]
        lines.append("\t".join([
            payload["assignment_id"], payload["candidate_id"], payload["choice"],
            str(payload["chose_edited"]).lower(), str(payload.get("latency_ms", 0)),
            rater,
        ]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(view.judgements)} judgements to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_judge_report(args) -> int:
    from .judging import NoJudgements, aggregate_judgements

    view = _view_for(args.run_dir)
    info = {c.candidate_id: {"family": c.family, "delta_aux": c.delta_aux}
            for c in view.valid_candidates()}
    try:
        aggregate = aggregate_judgements(view.judgements, info,
                                         view.config.confidence_z)
    except NoJudgements:
        print("no judgements recorded for this run")
        return EXIT_OK
    lines = ["candidate_id\tjudgements\tchose_edited\twin_rate\twin_lo\twin_hi\tdelta_aux"]
    for row in aggregate.per_edit:
        lines.append("\t".join([
            row.candidate_id, str(row.judgements), str(row.chose_edited),
            f"{row.win_rate.point:.2f}", f"{row.win_rate.lo:.2f}",
            f"{row.win_rate.hi:.2f}",
            "" if row.delta_aux is None else f"{row.delta_aux:+.3f}",
        ]))
    lines.append("")
    lines.append("family\tjudgements\twin_rate\twin_lo\twin_hi")
    for family, est in aggregate.per_family.items():
        lines.append(f"{family}\t{est.n}\t{est.point:.2f}\t{est.lo:.2f}\t{est.hi:.2f}")
    lines.append("")
    concordance = ("n/a" if aggregate.concordance is None
                   else f"{aggregate.concordance:.3f}")
    lines.append(f"concordance\t{concordance}\t"
                 f"({aggregate.concordant}/{aggregate.comparisons}, "
                 f"{aggregate.undecided} undecided)")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote judgement report to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_fixture(args) -> int:
    from .synthfix import write_fixture

    out = write_fixture(args.out)
    print(f"synthetic fixture written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leverlab",
        description="Instantiate, realise, audit, score and summarise "
                    "single-lever counterfactual edits of street scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="validate a scene manifest")
    ingest.add_argument("manifest")
    ingest.set_defaults(fn=cmd_ingest)

    def run_like(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest")
        p.add_argument("--config")
        p.add_argument("--mock", action="store_true")
        p.add_argument("--schedule", help="mock schedule path (overrides config)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--runs-root", default="runs")
        p.add_argument("--run-id")
        p.add_argument("--progress", action="store_true",
                       help="emit machine-readable progress events on stderr")
        return p

    run = run_like("run", "execute the full pipeline")
    run.add_argument("--resume", help="existing run directory to continue")
    run.add_argument("--theta", type=float, help="analysis threshold override")
    run.set_defaults(fn=cmd_run)

    plan = run_like("plan", "phase 1 only: propose candidates")
    plan.set_defaults(fn=cmd_plan)

    report = sub.add_parser("report", help="emit the report files for a run")
    report.add_argument("run_dir")
    report.add_argument("--out")
    report.add_argument("--theta", type=float)
    report.set_defaults(fn=cmd_report)

    sweep = sub.add_parser("sweep", help="threshold sweep series for a run")
    sweep.add_argument("run_dir")
    sweep.add_argument("--cutoffs", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    sweep.add_argument("--out")
    sweep.set_defaults(fn=cmd_sweep)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--runs-root", default="runs")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    serve.add_argument("--judge-run", help="run id hosting the 2AFC study")
    serve.add_argument("--ui-dir", help="built rater UI bundle to serve at /ui")
    serve.set_defaults(fn=cmd_serve)

    export = sub.add_parser("judge-export", help="anonymised judgement table")
    export.add_argument("run_dir")
    export.add_argument("--out")
    export.set_defaults(fn=cmd_judge_export)

    jreport = sub.add_parser("judge-report", help="judgement aggregation tables")
    jreport.add_argument("run_dir")
    jreport.add_argument("--out")
    jreport.set_defaults(fn=cmd_judge_report)

    fixture = sub.add_parser("fixture", help="regenerate the synthetic fixture")
    fixture.add_argument("--out", default="fixtures/reference_run")
    fixture.set_defaults(fn=cmd_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigMismatch as exc:
        print(f"resume refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingHeader, IncompatibleSchemaVersion) as exc:
        print(f"run not loadable: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (BackendError, PlannerFailed) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except LeverlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
