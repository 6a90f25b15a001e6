"""Append-only run ledger: the single source of truth for every statistic.

One line-delimited record file per run plus a sidecar byte-offset index for
fast reopening. Records carry a payload checksum; appends are flushed before
returning (fsync optional). Single writer, any number of snapshot readers.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .model import LeverlabError

SCHEMA_VERSION = 1

LEDGER_FILENAME = "ledger.jsonl"
INDEX_FILENAME = "index.bin"

# Fields whose values vary between otherwise identical runs; excluded when
# comparing ledgers for reproducibility.
VOLATILE_FIELDS = ("started_at", "ended_at", "issued_at", "created_at",
                   "resumed_at", "latency_ms")


class RecordKind(str, Enum):
    RUN_HEADER = "RunHeader"
    SCENE_INGESTED = "SceneIngested"
    CANDIDATE_PROPOSED = "CandidateProposed"
    ATTEMPT = "Attempt"
    VERDICT = "Verdict"
    GATE_DECISION = "GateDecision"
    SCORE = "Score"
    CANDIDATE_OUTCOME = "CandidateOutcome"
    SCENE_RESULT = "SceneResult"
    BACKEND_CALL = "BackendCall"
    VIOLATION = "Violation"
    JUDGEMENT = "Judgement"


class MissingHeader(LeverlabError):
    pass


class IncompatibleSchemaVersion(LeverlabError):
    pass


class ConfigMismatch(LeverlabError):
    pass


class StorageError(LeverlabError):
    pass


def payload_checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


@dataclass(frozen=True)
class LedgerRecord:
    sequence: int
    run_id: str
    kind: RecordKind
    payload: dict

    def to_line(self) -> str:
        return json.dumps(
            {
                "sequence": self.sequence,
                "run_id": self.run_id,
                "kind": self.kind.value,
                "payload": self.payload,
                "checksum": payload_checksum(self.payload),
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=True,
        )


@dataclass(frozen=True)
class QuarantinedRecord:
    line_number: int
    reason: str
    raw: str


@dataclass
class LedgerSnapshot:
    run_dir: Path
    records: list[LedgerRecord]
    quarantined: list[QuarantinedRecord] = field(default_factory=list)
    dropped_trailing: bool = False

    @property
    def header(self) -> dict:
        return self.records[0].payload

    @property
    def run_id(self) -> str:
        return self.records[0].run_id

    def by_kind(self, kind: RecordKind) -> list[LedgerRecord]:
        return [r for r in self.records if r.kind is kind]


class LedgerWriter:
    """Serialised appender for one run directory.

    Thread-safe: concurrent workers funnel through an internal lock, so the
    on-disk sequence is strictly increasing. Appends are flushed per record;
    fsync is optional (flush survives process death, fsync survives power
    loss).
    """

    def __init__(self, run_dir: str | Path, run_id: str, *, fsync: bool = False,
                 start_sequence: int = 0) -> None:
        self.run_dir = Path(run_dir)
        self.run_id = run_id
        self._fsync = fsync
        self._lock = threading.Lock()
        self._sequence = start_sequence
        self.run_dir.mkdir(parents=True, exist_ok=True)
        path = self.run_dir / LEDGER_FILENAME
        self._offset = path.stat().st_size if path.exists() else 0
        self._file = open(path, "ab")
        self._index = open(self.run_dir / INDEX_FILENAME, "ab")
        # Test hook: simulate a crash after N appends (see resume tests).
        self.abort_after_appends: int | None = None

    def append(self, kind: RecordKind, payload: dict) -> int:
        """Durably append one record; returns its sequence number."""
        with self._lock:
            sequence = self._sequence
            record = LedgerRecord(sequence, self.run_id, kind, payload)
            line = record.to_line().encode("utf-8") + b"\n"
            try:
                self._file.write(line)
                self._file.flush()
                if self._fsync:
                    os.fsync(self._file.fileno())
            except OSError as exc:
                raise StorageError(f"ledger append failed: {exc}") from exc
            self._index.write(struct.pack("<Q", self._offset))
            self._index.flush()
            self._offset += len(line)
            self._sequence += 1
            if self.abort_after_appends is not None:
                self.abort_after_appends -= 1
                if self.abort_after_appends <= 0:
                    raise SimulatedCrash(f"injected crash at sequence {sequence}")
            return sequence

    def close(self) -> None:
        with self._lock:
            self._file.close()
            self._index.close()

    def __enter__(self) -> "LedgerWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SimulatedCrash(RuntimeError):
    """Raised by the writer's crash-injection hook; used only in tests."""


def open_run_for_append(run_dir: str | Path, *, fsync: bool = False) -> LedgerWriter:
    """Reopen an existing run's ledger for appending (resume path)."""
    snapshot = load_run(run_dir)
    next_seq = snapshot.records[-1].sequence + 1 if snapshot.records else 0
    return LedgerWriter(run_dir, snapshot.run_id, fsync=fsync, start_sequence=next_seq)


def load_run(run_dir: str | Path) -> LedgerSnapshot:
    """Load and validate a run ledger.

    Corrupt records are quarantined with a diagnostic; a truncated final
    record is dropped with a warning flag. Requires a RunHeader as the first
    valid record and a compatible schema version.
    """
    run_dir = Path(run_dir)
    path = run_dir / LEDGER_FILENAME
    if not path.is_file():
        raise MissingHeader(f"no ledger found in {run_dir}")

    records: list[LedgerRecord] = []
    quarantined: list[QuarantinedRecord] = []
    dropped_trailing = False

    raw_bytes = path.read_bytes()
    lines = raw_bytes.split(b"\n")
    trailing_incomplete = lines and lines[-1] != b""
    if lines and lines[-1] == b"":
        lines = lines[:-1]

    last_sequence = -1
    for lineno, raw_line in enumerate(lines, start=1):
        is_last = lineno == len(lines)
        try:
            text = raw_line.decode("utf-8")
            doc = json.loads(text)
            kind = RecordKind(doc["kind"])
            payload = doc["payload"]
            if payload_checksum(payload) != doc["checksum"]:
                raise ValueError("ChecksumFailure: payload does not match checksum")
            sequence = int(doc["sequence"])
            if sequence <= last_sequence:
                raise ValueError(f"sequence not increasing: {sequence} after {last_sequence}")
            record = LedgerRecord(sequence, doc["run_id"], kind, payload)
        except Exception as exc:  # noqa: BLE001 - any defect quarantines the line
            if is_last and trailing_incomplete:
                dropped_trailing = True
            else:
                quarantined.append(QuarantinedRecord(lineno, f"{exc}", raw_line.decode("utf-8", "replace")))
            continue
        last_sequence = record.sequence
        records.append(record)

    if not records or records[0].kind is not RecordKind.RUN_HEADER:
        raise MissingHeader(f"ledger in {run_dir} has no RunHeader record")
    header = records[0].payload
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise IncompatibleSchemaVersion(
            f"ledger schema {version} vs supported {SCHEMA_VERSION}")

    return LedgerSnapshot(run_dir, records, quarantined, dropped_trailing)


@dataclass(frozen=True)
class ResumePlan:
    completed_scene_ids: frozenset[str]
    completed_candidate_ids: frozenset[str]
    pending_scene_ids: tuple[str, ...]
    ingested_scene_ids: frozenset[str]
    proposed_by_scene: dict[str, list[dict]]
    outcomes_by_candidate: dict[str, dict]
    baseline_scores: dict[str, float]

    @property
    def nothing_pending(self) -> bool:
        return not self.pending_scene_ids


def resume_plan(snapshot: LedgerSnapshot, manifest_scene_ids: Iterable[str],
                generation_fingerprint: str) -> ResumePlan:
    """Work remaining to complete a run, at candidate granularity.

    Refuses to resume when a generation-affecting parameter changed (the
    fingerprint covers K, T, seeds, percept and backends); analysis-only
    parameters may differ and are noted via a header amendment instead.
    """
    header = snapshot.header
    if header.get("generation_fingerprint") != generation_fingerprint:
        raise ConfigMismatch(
            "run was generated under a different configuration; "
            "resume with altered K, T, seeds or backends is refused")

    completed_scenes = {
        r.payload["scene_id"] for r in snapshot.by_kind(RecordKind.SCENE_RESULT)
    }
    ingested = {
        r.payload["scene_id"] for r in snapshot.by_kind(RecordKind.SCENE_INGESTED)
    }
    outcomes = {
        r.payload["candidate_id"]: r.payload
        for r in snapshot.by_kind(RecordKind.CANDIDATE_OUTCOME)
    }
    proposed: dict[str, list[dict]] = {}
    for r in snapshot.by_kind(RecordKind.CANDIDATE_PROPOSED):
        proposed.setdefault(r.payload["scene_id"], []).append(r.payload)
    baselines = {
        r.payload["scene_id"]: r.payload["value"]
        for r in snapshot.by_kind(RecordKind.SCORE)
        if r.payload.get("subject") == "baseline"
    }

    pending = tuple(s for s in manifest_scene_ids if s not in completed_scenes)
    return ResumePlan(
        completed_scene_ids=frozenset(completed_scenes),
        completed_candidate_ids=frozenset(outcomes),
        pending_scene_ids=pending,
        ingested_scene_ids=frozenset(ingested),
        proposed_by_scene=proposed,
        outcomes_by_candidate=outcomes,
        baseline_scores=baselines,
    )


def strip_volatile(payload: dict) -> dict:
    """Copy of a payload with timing fields removed (reproducibility checks)."""

    def clean(value):
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items() if k not in VOLATILE_FIELDS}
        if isinstance(value, list):
            return [clean(v) for v in value]
        return value

    return clean(payload)


def comparable_lines(snapshot: LedgerSnapshot) -> list[str]:
    """Canonical ledger content with volatile fields removed, for comparing
    two runs that should be byte-reproducible."""
    lines = []
    for record in snapshot.records:
        lines.append(json.dumps(
            {"kind": record.kind.value, "payload": strip_volatile(record.payload)},
            sort_keys=True, separators=(",", ":"),
        ))
    return lines
