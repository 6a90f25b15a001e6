"""Replay a ledger snapshot into the structures statistics are computed over.

The view is derived from ledger records alone, so anything computed online
during a run can be recomputed byte-for-byte after the fact (and after a
resume, where superseded partial records are deduplicated by key).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .ledger import LedgerSnapshot, RecordKind
from .model import CRITERION_FAILURE_MODE, CRITERIA, RunConfig


@dataclass
class CandidateView:
    candidate_id: str
    scene_id: str
    ordinal: int
    concept_id: str
    family: str
    canonical_concept: bool
    payload: dict = field(default_factory=dict)
    status: str | None = None
    attempts: list[dict] = field(default_factory=list)
    retained: dict | None = None

    @property
    def is_valid(self) -> bool:
        return self.status == "Accepted"

    @property
    def delta_aux(self) -> float | None:
        return self.retained.get("delta_aux") if self.retained else None

    def failed_modes(self, rule: str = "final_attempt") -> list[str]:
        """Failure-mode identifiers for a rejected candidate, reduced per the
        configured attempt-selection rule."""
        verdicts = [a["verdict"] for a in self.attempts if a.get("verdict")]
        if not verdicts:
            return []
        if rule == "final_attempt":
            verdicts = verdicts[-1:]
        elif rule != "union":
            raise ValueError(f"unknown taxonomy rule: {rule!r}")
        modes: list[str] = []
        for verdict in verdicts:
            for criterion in CRITERIA:
                if not verdict[criterion]:
                    mode = CRITERION_FAILURE_MODE[criterion]
                    if mode not in modes:
                        modes.append(mode)
        return modes


@dataclass
class SceneView:
    scene_id: str
    city: str
    image_ref: str | None = None
    image_sha256: str | None = None
    manifest_baseline: float | None = None
    baseline_score: float | None = None
    candidates: list[CandidateView] = field(default_factory=list)
    result: dict | None = None
    planner_failed: bool = False

    @property
    def valid_count(self) -> int:
        return sum(1 for c in self.candidates if c.is_valid)

    @property
    def proposed_count(self) -> int:
        return len(self.candidates)

    @property
    def coverage(self) -> float | None:
        if not self.candidates:
            return None
        return self.valid_count / self.proposed_count


@dataclass
class RunView:
    run_id: str
    run_dir: Path
    header: dict
    scenes: dict[str, SceneView]
    violations: list[dict]
    judgements: list[dict]
    backend_call_count: int
    analysis_amendments: list[dict] = field(default_factory=list)

    @property
    def config(self) -> RunConfig:
        payload = dict(self.header["config"])
        for overrides in self.analysis_amendments:
            payload.update(overrides)
        return RunConfig.from_payload(payload)

    @property
    def scene_list(self) -> list[SceneView]:
        return sorted(self.scenes.values(), key=lambda s: s.scene_id)

    def candidates(self) -> list[CandidateView]:
        return [c for scene in self.scene_list for c in scene.candidates]

    def valid_candidates(self) -> list[CandidateView]:
        return [c for c in self.candidates() if c.is_valid]

    def rejected_candidates(self) -> list[CandidateView]:
        return [c for c in self.candidates() if c.status == "RejectedAllAttempts"]

    def backend_failed_candidates(self) -> list[CandidateView]:
        return [c for c in self.candidates() if c.status == "BackendFailed"]

    def group_key(self, candidate: CandidateView, key: str) -> str:
        if key == "Family":
            return candidate.family
        if key == "City":
            return self.scenes[candidate.scene_id].city
        if key == "Overall":
            return "Overall"
        raise ValueError(f"unknown group key: {key!r}")

    def deltas_by_scene(self, key: str = "Family") -> dict[str, list[tuple[str, float]]]:
        """Per-scene (group_key, delta) pairs over retained edits; scenes with
        candidates but no retained edits still appear (empty), planner-failed
        scenes are excluded from the denominator."""
        series: dict[str, list[tuple[str, float]]] = {}
        for scene in self.scene_list:
            if scene.planner_failed:
                continue
            series[scene.scene_id] = [
                (self.group_key(c, key), c.delta_aux)
                for c in scene.candidates
                if c.is_valid and c.delta_aux is not None
            ]
        return series

    def valid_count_distribution(self) -> dict[int, int]:
        """Scene count by number of valid levers (scenes with candidates only)."""
        distribution: dict[int, int] = {}
        for scene in self.scene_list:
            if scene.planner_failed or not scene.candidates:
                continue
            count = scene.valid_count
            distribution[count] = distribution.get(count, 0) + 1
        return dict(sorted(distribution.items()))

    def scatter_series(self) -> list[tuple[str, float, int]]:
        """(scene_id, baseline score, valid count) over scored scenes."""
        return [
            (scene.scene_id, scene.baseline_score, scene.valid_count)
            for scene in self.scene_list
            if scene.baseline_score is not None and not scene.planner_failed
        ]

    def rejected_failure_modes(self, rule: str = "final_attempt") -> list[list[str]]:
        return [c.failed_modes(rule) for c in self.rejected_candidates()]

    def planner_failure_count(self) -> int:
        return sum(1 for s in self.scene_list if s.planner_failed)

    def incomplete_gaps(self) -> list[str]:
        """Human-readable gaps for runs missing terminal records."""
        gaps = []
        for scene in self.scene_list:
            if scene.result is None:
                gaps.append(f"scene {scene.scene_id} has no terminal result")
            for candidate in scene.candidates:
                if candidate.status is None:
                    gaps.append(f"candidate {candidate.candidate_id} has no terminal outcome")
        return gaps


def build_view(snapshot: LedgerSnapshot) -> RunView:
    scenes: dict[str, SceneView] = {}
    candidates: dict[str, CandidateView] = {}
    violations: list[dict] = []
    judgements: list[dict] = []
    backend_calls = 0

    amendments: list[dict] = []
    for record in snapshot.records:
        payload = record.payload
        kind = record.kind
        if kind is RecordKind.RUN_HEADER and payload.get("amends"):
            amendments.append(payload.get("analysis_overrides", {}))
        elif kind is RecordKind.SCENE_INGESTED:
            view = scenes.setdefault(payload["scene_id"],
                                     SceneView(payload["scene_id"], payload["city"]))
            view.city = payload["city"]
            view.image_ref = payload["image_ref"]
            view.image_sha256 = payload.get("image_sha256")
            view.manifest_baseline = payload.get("baseline_score")
        elif kind is RecordKind.CANDIDATE_PROPOSED:
            entry = payload["candidate"]
            candidate = CandidateView(
                candidate_id=payload["candidate_id"],
                scene_id=payload["scene_id"],
                ordinal=payload["ordinal"],
                concept_id=entry["lever_concept"],
                family=entry["lever_family"],
                canonical_concept=entry.get("canonical_concept", True),
                payload=entry,
            )
            previous = candidates.get(candidate.candidate_id)
            if previous is None:
                candidates[candidate.candidate_id] = candidate
                scene = scenes.setdefault(payload["scene_id"],
                                          SceneView(payload["scene_id"], ""))
                scene.candidates.append(candidate)
        elif kind is RecordKind.ATTEMPT:
            candidate = candidates.get(payload["candidate_id"])
            if candidate is not None:
                # Resume may replay earlier attempts; key by index, last wins.
                candidate.attempts = [
                    a for a in candidate.attempts
                    if a["attempt_index"] != payload["attempt_index"]
                ]
                candidate.attempts.append(payload)
                candidate.attempts.sort(key=lambda a: a["attempt_index"])
        elif kind is RecordKind.CANDIDATE_OUTCOME:
            candidate = candidates.get(payload["candidate_id"])
            if candidate is not None:
                candidate.status = payload["status"]
                candidate.retained = payload.get("retained")
                candidate.attempts = list(payload["attempts"])
        elif kind is RecordKind.SCORE:
            if payload.get("subject") == "baseline":
                scene = scenes.get(payload["scene_id"])
                if scene is not None and scene.baseline_score is None:
                    scene.baseline_score = payload["value"]
        elif kind is RecordKind.SCENE_RESULT:
            scene = scenes.setdefault(payload["scene_id"],
                                      SceneView(payload["scene_id"], ""))
            scene.result = payload
            scene.planner_failed = payload.get("planner_failed", False)
        elif kind is RecordKind.VIOLATION:
            violations.append(payload)
        elif kind is RecordKind.JUDGEMENT:
            judgements.append(payload)
        elif kind is RecordKind.BACKEND_CALL:
            backend_calls += 1

    return RunView(
        run_id=snapshot.run_id,
        run_dir=snapshot.run_dir,
        header=snapshot.header,
        scenes=scenes,
        violations=violations,
        judgements=judgements,
        backend_call_count=backend_calls,
        analysis_amendments=amendments,
    )
