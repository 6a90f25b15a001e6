"""Run lifecycle: create or resume a run directory and drive the pipeline.

A run directory is owned by at most one writing process (lock file); the
run id is derived from the generation fingerprint and manifest digest so
equal inputs land in equal directories and mock reruns are reproducible.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

from .backends import Gateway, MockSchedule, build_live_gateway, build_mock_gateway
from .engine import EventHook, execute_run
from .ledger import (
    LedgerWriter,
    RecordKind,
    load_run,
    open_run_for_append,
    resume_plan,
)
from .model import LeverlabError, RunConfig, load_manifest, manifest_digest

# The question shown to raters; recorded in the run header because the
# phrasing is a study-design choice, not a derived value.
JUDGE_QUESTION = "Which street scene feels safer?"


class RunLocked(LeverlabError):
    pass


def derive_run_id(config: RunConfig, digest: str) -> str:
    import hashlib

    material = f"{config.generation_fingerprint()}:{digest}"
    return "run-" + hashlib.sha256(material.encode()).hexdigest()[:12]


def _acquire_lock(run_dir: Path) -> Path:
    lock = run_dir / ".lock"
    if lock.exists():
        try:
            pid = int(lock.read_text().strip())
            os.kill(pid, 0)
        except (ValueError, ProcessLookupError):
            lock.unlink()  # stale lock from a dead process
        except PermissionError:
            raise RunLocked(f"run directory is owned by pid {lock.read_text().strip()}")
        else:
            raise RunLocked(f"run directory is owned by pid {pid}")
    run_dir.mkdir(parents=True, exist_ok=True)
    lock.write_text(str(os.getpid()), encoding="utf-8")
    return lock


def _build_gateway(run_dir: Path, config: RunConfig, mock: bool,
                   schedule_path: Path | None, writer: LedgerWriter,
                   pass_rate: float | dict[int, float] = 0.7) -> Gateway:
    def on_call(call) -> None:
        writer.append(RecordKind.BACKEND_CALL, call.to_payload())

    if mock:
        schedule = MockSchedule.load(schedule_path) if schedule_path else None
        return build_mock_gateway(
            run_dir, config.master_seed, config.T, config.percept,
            schedule=schedule, on_call=on_call, pass_rate=pass_rate)
    return build_live_gateway(run_dir, config.backends, config.percept, on_call=on_call)


def start_run(
    manifest_path: str | Path,
    config: RunConfig,
    runs_root: str | Path,
    mock: bool = False,
    schedule_path: Path | None = None,
    run_id: str | None = None,
    on_event: EventHook | None = None,
    pass_rate: float | dict[int, float] = 0.7,
    abort_after_appends: int | None = None,
) -> Path:
    """Execute a fresh run end to end; returns the run directory."""
    scenes = load_manifest(manifest_path)
    digest = manifest_digest(manifest_path)
    run_id = run_id or derive_run_id(config, digest)
    run_dir = Path(runs_root) / run_id
    lock = _acquire_lock(run_dir)
    try:
        with LedgerWriter(run_dir, run_id, fsync=config.fsync) as writer:
            writer.append(RecordKind.RUN_HEADER, {
                "schema_version": 1,
                "run_id": run_id,
                "created_at": time.time(),
                "mode": "mock" if mock else "live",
                "config": config.to_payload(),
                "generation_fingerprint": config.generation_fingerprint(),
                "manifest_digest": digest,
                "manifest_path": str(Path(manifest_path).resolve()),
                "judge_question": JUDGE_QUESTION,
            })
            if abort_after_appends is not None:
                writer.abort_after_appends = abort_after_appends
            gateway = _build_gateway(run_dir, config, mock, schedule_path, writer,
                                     pass_rate)
            execute_run(scenes, config, gateway, writer, on_event=on_event)
    finally:
        lock.unlink(missing_ok=True)
    return run_dir


def start_plan_only(
    manifest_path: str | Path,
    config: RunConfig,
    runs_root: str | Path,
    mock: bool = False,
    schedule_path: Path | None = None,
    run_id: str | None = None,
    on_event: EventHook | None = None,
) -> Path:
    """Phase 1 only: propose and ledger candidates without realising edits."""
    from .engine import SceneEngine

    scenes = load_manifest(manifest_path)
    digest = manifest_digest(manifest_path)
    run_id = run_id or derive_run_id(config, digest) + "-plan"
    run_dir = Path(runs_root) / run_id
    lock = _acquire_lock(run_dir)
    try:
        with LedgerWriter(run_dir, run_id, fsync=config.fsync) as writer:
            writer.append(RecordKind.RUN_HEADER, {
                "schema_version": 1,
                "run_id": run_id,
                "created_at": time.time(),
                "mode": "mock" if mock else "live",
                "phase1_only": True,
                "config": config.to_payload(),
                "generation_fingerprint": config.generation_fingerprint(),
                "manifest_digest": digest,
                "manifest_path": str(Path(manifest_path).resolve()),
                "judge_question": JUDGE_QUESTION,
            })
            gateway = _build_gateway(run_dir, config, mock, schedule_path, writer)
            engine = SceneEngine(config, gateway, writer, on_event=on_event)
            for scene in scenes:
                engine.plan_scene(scene)
    finally:
        lock.unlink(missing_ok=True)
    return run_dir


def resume_run(
    run_dir: str | Path,
    config: RunConfig,
    mock: bool = False,
    schedule_path: Path | None = None,
    manifest_path: str | Path | None = None,
    on_event: EventHook | None = None,
    pass_rate: float | dict[int, float] = 0.7,
    abort_after_appends: int | None = None,
) -> Path:
    """Continue an interrupted run at candidate granularity.

    Generation parameters must match the original header (fingerprint
    check); analysis-only parameter changes are recorded as an amendment
    header rather than refused.
    """
    run_dir = Path(run_dir)
    snapshot = load_run(run_dir)
    header = snapshot.header
    manifest_path = manifest_path or header["manifest_path"]
    scenes = load_manifest(manifest_path)

    plan = resume_plan(snapshot, [s.scene_id for s in scenes],
                       config.generation_fingerprint())

    original = header["config"]
    analysis_overrides = {}
    for key in ("theta_aux", "bootstrap_B", "confidence_z", "sweep_cutoffs",
                "raters_per_pair", "taxonomy_rule"):
        current = getattr(config, key)
        current = list(current) if isinstance(current, tuple) else current
        if original.get(key) != current:
            analysis_overrides[key] = current

    lock = _acquire_lock(run_dir)
    try:
        writer = open_run_for_append(run_dir, fsync=config.fsync)
        with writer:
            if analysis_overrides:
                writer.append(RecordKind.RUN_HEADER, {
                    "schema_version": 1,
                    "run_id": snapshot.run_id,
                    "resumed_at": time.time(),
                    "amends": True,
                    "analysis_overrides": analysis_overrides,
                })
            if abort_after_appends is not None:
                writer.abort_after_appends = abort_after_appends
            gateway = _build_gateway(run_dir, config, mock, schedule_path, writer,
                                     pass_rate)
            execute_run(scenes, config, gateway, writer, resume=plan,
                        on_event=on_event)
    finally:
        lock.unlink(missing_ok=True)
    return run_dir
