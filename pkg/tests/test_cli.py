"""CLI subcommands and exit codes."""

import json

import pytest

from leverlab.cli import (
    EXIT_CONFIG,
    EXIT_MANIFEST,
    EXIT_MISSING,
    EXIT_OK,
    main,
)


def test_ingest_valid_manifest(fixture_dir, capsys):
    code = main(["ingest", str(fixture_dir / "manifest.jsonl")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "50 scenes" in out and "5 cities" in out


def test_ingest_missing_manifest(tmp_path, capsys):
    code = main(["ingest", str(tmp_path / "nope.jsonl")])
    assert code == EXIT_MANIFEST


def test_run_mock_prints_reference_shaped_summary(fixture_dir, tmp_path, capsys):
    code = main([
        "run", "--mock",
        "--manifest", str(fixture_dir / "manifest.jsonl"),
        "--config", str(fixture_dir / "run.cfg"),
        "--runs-root", str(tmp_path / "runs"),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "250 proposed" in out
    assert "177 valid (rate 0.708)" in out
    assert "95 shortlisted" in out


def test_report_on_missing_run_dir(tmp_path, capsys):
    code = main(["report", str(tmp_path / "ghost-run")])
    assert code == EXIT_MISSING
    assert "not loadable" in capsys.readouterr().err


def test_report_and_sweep_on_completed_run(reference_run, tmp_path, capsys):
    code = main(["report", str(reference_run), "--out", str(tmp_path / "report")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "valid edits: 177" in out

    code = main(["sweep", str(reference_run), "--cutoffs", "0,0.1,0.5,1.0",
                 "--out", str(tmp_path / "sweep")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith("0.10\t")]
    assert lines  # the sweep tables were printed
    # monotone non-increasing per group within each printed table
    series: dict[tuple[int, str], list[int]] = {}
    segment = 0
    for line in out.splitlines():
        cells = line.split("\t")
        if cells[0] == "cutoff":
            segment += 1
            continue
        if len(cells) == 5:
            series.setdefault((segment, cells[1]), []).append(int(cells[2]))
    assert segment == 2  # family table then city table
    for key, totals in series.items():
        assert totals == sorted(totals, reverse=True), key


def test_sweep_rejects_unsorted_cutoffs(reference_run, capsys):
    code = main(["sweep", str(reference_run), "--cutoffs", "0.5,0.1"])
    assert code == 2


def test_plan_subcommand(fixture_dir, tmp_path, capsys):
    code = main([
        "plan", "--mock",
        "--manifest", str(fixture_dir / "manifest.jsonl"),
        "--config", str(fixture_dir / "run.cfg"),
        "--runs-root", str(tmp_path / "runs"),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "250 candidates proposed" in out


def test_bad_config_exit_code(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nk = about five\n")
    code = main(["run", "--mock",
                 "--manifest", str(fixture_dir / "manifest.jsonl"),
                 "--config", str(bad),
                 "--runs-root", str(tmp_path / "runs")])
    assert code == EXIT_CONFIG


def test_judge_export_empty_run(reference_run, capsys):
    code = main(["judge-export", str(reference_run)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("assignment_id\t")


def test_fixture_regeneration(tmp_path, capsys):
    code = main(["fixture", "--out", str(tmp_path / "fx")])
    assert code == EXIT_OK
    assert (tmp_path / "fx" / "manifest.jsonl").is_file()
    assert (tmp_path / "fx" / "schedule.json").is_file()


def test_seed_override_changes_run_id(fixture_dir, tmp_path, capsys):
    for seed in (1, 2):
        code = main([
            "run", "--mock",
            "--manifest", str(fixture_dir / "manifest.jsonl"),
            "--config", str(fixture_dir / "run.cfg"),
            "--seed", str(seed),
            "--runs-root", str(tmp_path / "runs"),
        ])
        assert code == EXIT_OK
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 2
