"""Shared fixtures: the bundled synthetic run executed once per session."""

from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "reference_run"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    assert FIXTURE_DIR.is_dir(), "bundled fixture missing; run `leverlab fixture`"
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory, fixture_dir) -> Path:
    """A completed mock run of the bundled 50-scene fixture."""
    from leverlab.config import load_config
    from leverlab.runner import start_run

    config, schedule = load_config(fixture_dir / "run.cfg")
    runs_root = tmp_path_factory.mktemp("reference-runs")
    return start_run(fixture_dir / "manifest.jsonl", config, runs_root,
                     mock=True, schedule_path=schedule)


@pytest.fixture(scope="session")
def reference_view(reference_run):
    from leverlab.ledger import load_run
    from leverlab.runview import build_view

    return build_view(load_run(reference_run))
