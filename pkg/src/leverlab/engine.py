"""Phase 1-3 orchestration per scene.

Phase 1 grounds vocabulary concepts into at most K validated candidates.
Phase 2 realises each candidate under a bounded retry budget T, keeping the
first edit that passes the five-criterion validity gate. Phase 3 scores the
original (exactly once per scene) and each retained edit with the auxiliary
perception proxy. Every record is appended to the ledger before it is
aggregated in memory, so a crash at any point is resumable at candidate
granularity.
"""

from __future__ import annotations

import hashlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .backends import BackendError, Gateway
from .contracts import (
    ContractViolation,
    MalformedDocument,
    MissingField,
    ViolationKind,
    parse_critic_output,
    parse_planner_output,
)
from .ledger import LedgerWriter, RecordKind, ResumePlan
from .model import (
    CRITERIA,
    AttemptRecord,
    LeverIntervention,
    LeverlabError,
    RetainedEdit,
    RunConfig,
    Scene,
    SceneResult,
    ValidityVerdict,
    attempt_seed_for,
    canonical_candidate_id,
)


class PlannerFailed(LeverlabError):
    """Planner produced no parseable candidate document within retry policy."""


class MissingScore(LeverlabError):
    """A retained edit without delta_aux where one is required."""


@dataclass(frozen=True)
class GateDecision:
    passed: bool
    failed_criteria: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.passed != (not self.failed_criteria):
            raise ValueError("passed must hold exactly when failed_criteria is empty")


def gate_verdict(verdict: ValidityVerdict) -> GateDecision:
    """Validity gate: the edit is retained only when every criterion holds.

    failed_criteria lists each false criterion in the fixed reporting order.
    """
    failed = tuple(name for name in CRITERIA if not verdict.criterion(name))
    return GateDecision(passed=not failed, failed_criteria=failed)


class CandidateStatus(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED_ALL_ATTEMPTS = "RejectedAllAttempts"
    BACKEND_FAILED = "BackendFailed"


@dataclass(frozen=True)
class CandidateOutcome:
    candidate_id: str
    status: CandidateStatus
    attempts: tuple[AttemptRecord, ...]
    retained: RetainedEdit | None = None

    def __post_init__(self) -> None:
        if (self.status is CandidateStatus.ACCEPTED) != (self.retained is not None):
            raise ValueError("Accepted outcomes carry a retained edit; others must not")

    def to_payload(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "status": self.status.value,
            "attempts": [a.to_payload() for a in self.attempts],
            "retained": self.retained.to_payload() if self.retained else None,
        }


def shortlist(retained: Sequence[RetainedEdit], theta_aux: float) -> list[RetainedEdit]:
    """Edits whose proxy shift strictly exceeds theta_aux, original order kept."""
    for edit in retained:
        if edit.delta_aux is None:
            raise MissingScore(f"retained edit {edit.candidate_id} has no delta_aux")
    return [edit for edit in retained if edit.delta_aux > theta_aux]


EventHook = Callable[[dict], None]


class SceneEngine:
    """Runs scenes against a gateway, appending every record to the ledger."""

    def __init__(
        self,
        config: RunConfig,
        gateway: Gateway,
        writer: LedgerWriter,
        resume: ResumePlan | None = None,
        on_event: EventHook | None = None,
    ) -> None:
        self.config = config
        self.gateway = gateway
        self.writer = writer
        self.resume = resume
        self._emit = on_event or (lambda event: None)
        self._baselines: dict[str, float] = dict(resume.baseline_scores) if resume else {}
        self._baseline_lock = threading.Lock()
        self._vocabulary = config.vocabulary()

    # -- Phase 1 ------------------------------------------------------------

    def construct_candidates(self, scene: Scene) -> list[tuple[str, LeverIntervention]]:
        """Grounded candidate set L(x): at most K validated (id, candidate)
        pairs. One parse retry on a malformed planner document; violations
        are ledgered, never silently dropped."""
        raw_attempts = 0
        while True:
            raw = self.gateway.plan(scene, self.config.percept, self.config.K)
            raw_attempts += 1
            try:
                candidates, violations = parse_planner_output(
                    raw, self.config.K, self._vocabulary)
                break
            except MalformedDocument as exc:
                self._ledger_violation(
                    scene.scene_id, None,
                    "planner_parse_retry" if raw_attempts == 1 else "planner_failed",
                    ContractViolation(ViolationKind.MALFORMED_DOCUMENT, "$", str(exc)))
                if raw_attempts >= 2:
                    raise PlannerFailed(
                        f"planner malformed twice for scene {scene.scene_id}") from exc

        for violation in violations:
            self._ledger_violation(scene.scene_id, None, "planner_output", violation)

        labelled: list[tuple[str, LeverIntervention]] = []
        for ordinal, candidate in enumerate(candidates, start=1):
            candidate_id = canonical_candidate_id(scene.scene_id, candidate.concept.id, ordinal)
            payload = {
                "scene_id": scene.scene_id,
                "candidate_id": candidate_id,
                "ordinal": ordinal,
                "candidate": candidate.to_payload(),
            }
            self.writer.append(RecordKind.CANDIDATE_PROPOSED, payload)
            labelled.append((candidate_id, candidate))
        return labelled

    # -- Phase 2 + 3 ---------------------------------------------------------

    def realise_candidate(self, scene: Scene, candidate_id: str,
                          candidate: LeverIntervention, image_ref: str) -> CandidateOutcome:
        """Bounded stochastic realisation: attempts 1..T, first gate pass wins.

        Every attempt is ledgered with its full verdict so the failure
        taxonomy can be computed for rejected candidates; the edit always
        receives the original scene image as its base (levers are never
        composed).
        """
        attempts: list[AttemptRecord] = []
        for attempt_index in range(1, self.config.T + 1):
            seed = attempt_seed_for(
                self.config.master_seed, scene.scene_id, candidate_id, attempt_index)
            try:
                edited_ref = self.gateway.edit(image_ref, candidate, seed, candidate_id)
                raw_verdict = self._audit_with_retry(image_ref, edited_ref, candidate, candidate_id)
                verdict = parse_critic_output(raw_verdict)
            except (BackendError, MalformedDocument, MissingField) as exc:
                attempt = AttemptRecord(
                    candidate_id=candidate_id,
                    attempt_index=attempt_index,
                    attempt_seed=seed,
                    backend_error=str(exc),
                )
                self.writer.append(RecordKind.ATTEMPT, attempt.to_payload())
                attempts.append(attempt)
                outcome = CandidateOutcome(
                    candidate_id, CandidateStatus.BACKEND_FAILED, tuple(attempts))
                self._finish_candidate(scene, outcome)
                return outcome

            attempt = AttemptRecord(
                candidate_id=candidate_id,
                attempt_index=attempt_index,
                attempt_seed=seed,
                edited_image_ref=edited_ref,
                verdict=verdict,
            )
            decision = gate_verdict(verdict)
            self.writer.append(RecordKind.ATTEMPT, attempt.to_payload())
            self.writer.append(RecordKind.VERDICT, {
                "candidate_id": candidate_id,
                "attempt_index": attempt_index,
                "verdict": verdict.to_payload(),
            })
            self.writer.append(RecordKind.GATE_DECISION, {
                "candidate_id": candidate_id,
                "attempt_index": attempt_index,
                "passed": decision.passed,
                "failed_criteria": list(decision.failed_criteria),
            })
            attempts.append(attempt)

            if decision.passed:
                baseline = self._baseline_score(scene, image_ref)
                edited_score = self.gateway.score(edited_ref)
                self.writer.append(RecordKind.SCORE, {
                    "scene_id": scene.scene_id,
                    "candidate_id": candidate_id,
                    "subject": "edited",
                    "image_ref": edited_ref,
                    "value": edited_score,
                })
                retained = RetainedEdit(
                    candidate_id=candidate_id,
                    accepted_attempt_index=attempt_index,
                    edited_image_ref=edited_ref,
                    baseline_score=baseline,
                    edited_score=edited_score,
                    delta_aux=edited_score - baseline,
                )
                outcome = CandidateOutcome(
                    candidate_id, CandidateStatus.ACCEPTED, tuple(attempts), retained)
                self._finish_candidate(scene, outcome)
                return outcome

        outcome = CandidateOutcome(
            candidate_id, CandidateStatus.REJECTED_ALL_ATTEMPTS, tuple(attempts))
        if self.config.score_rejected:
            # Debug-only: shifts are defined over the retained set, so these
            # scores never enter statistics; they exist for inspection.
            realised = [a for a in attempts if a.edited_image_ref]
            if realised:
                value = self.gateway.score(realised[-1].edited_image_ref)
                self.writer.append(RecordKind.SCORE, {
                    "scene_id": scene.scene_id,
                    "candidate_id": candidate_id,
                    "subject": "rejected_edited",
                    "image_ref": realised[-1].edited_image_ref,
                    "value": value,
                })
        self._finish_candidate(scene, outcome)
        return outcome

    def _audit_with_retry(self, image_ref: str, edited_ref: str,
                          candidate: LeverIntervention, candidate_id: str) -> str:
        """One extra critic call when the reply fails to parse; live critics
        are stochastic enough for a retry to be worth one call."""
        raw = self.gateway.audit(image_ref, edited_ref, candidate, candidate_id)
        try:
            parse_critic_output(raw)
            return raw
        except (MalformedDocument, MissingField) as exc:
            self._ledger_violation(
                None, candidate_id, "critic_parse_retry",
                ContractViolation(ViolationKind.MALFORMED_DOCUMENT, "$", str(exc)))
            return self.gateway.audit(image_ref, edited_ref, candidate, candidate_id)

    def _baseline_score(self, scene: Scene, image_ref: str) -> float:
        with self._baseline_lock:
            if scene.scene_id in self._baselines:
                return self._baselines[scene.scene_id]
        value = self.gateway.score(image_ref)
        with self._baseline_lock:
            if scene.scene_id not in self._baselines:
                self._baselines[scene.scene_id] = value
                self.writer.append(RecordKind.SCORE, {
                    "scene_id": scene.scene_id,
                    "candidate_id": None,
                    "subject": "baseline",
                    "image_ref": image_ref,
                    "value": value,
                })
            return self._baselines[scene.scene_id]

    def _finish_candidate(self, scene: Scene, outcome: CandidateOutcome) -> None:
        self.writer.append(RecordKind.CANDIDATE_OUTCOME,
                           {"scene_id": scene.scene_id, **outcome.to_payload()})
        self._emit({
            "event": f"candidate_{outcome.status.value.lower()}",
            "scene_id": scene.scene_id,
            "candidate_id": outcome.candidate_id,
            "attempts": len(outcome.attempts),
        })

    def _ledger_violation(self, scene_id: str | None, candidate_id: str | None,
                          context: str, violation: ContractViolation) -> None:
        self.writer.append(RecordKind.VIOLATION, {
            "scene_id": scene_id,
            "candidate_id": candidate_id,
            "context": context,
            **violation.to_payload(),
        })

    # -- Scene --------------------------------------------------------------

    def run_scene(self, scene: Scene) -> SceneResult:
        self._emit({"event": "scene_started", "scene_id": scene.scene_id})
        stored_ref = self._ingest(scene)

        # Planning is complete once the scene's baseline Score record exists
        # (it is appended immediately after candidate construction); ledgered
        # proposals older than that fence are partial and are re-planned.
        labelled: list[tuple[str, LeverIntervention]] | None = None
        prior_outcomes: dict[str, CandidateOutcome] = {}
        if (self.resume is not None
                and scene.scene_id in self.resume.baseline_scores
                and scene.scene_id in self.resume.proposed_by_scene):
            labelled = self._reload_candidates(scene)
            prior_outcomes = self._reload_outcomes(scene)

        if labelled is None:
            try:
                labelled = self.construct_candidates(scene)
            except PlannerFailed:
                # Scene is terminal but flagged: no candidates, coverage
                # undefined, excluded from coverage denominators.
                result = SceneResult(scene.scene_id, (), (), None)
                self._append_scene_result(result, planner_failed=True)
                self._emit({"event": "scene_finished", "scene_id": scene.scene_id,
                            "candidates": 0, "retained": 0, "planner_failed": True})
                return result

        # Baseline is part of the run's data series even when nothing passes.
        self._baseline_score(scene, stored_ref)

        outcomes: list[CandidateOutcome] = []
        for candidate_id, candidate in labelled:
            if candidate_id in prior_outcomes:
                outcomes.append(prior_outcomes[candidate_id])
                continue
            outcomes.append(self.realise_candidate(scene, candidate_id, candidate, stored_ref))

        retained = tuple(o.retained for o in outcomes if o.retained is not None)
        candidates = tuple(candidate for _, candidate in labelled)
        coverage = len(retained) / len(candidates) if candidates else None
        result = SceneResult(scene.scene_id, candidates, retained, coverage)
        self._append_scene_result(result)
        self._emit({
            "event": "scene_finished",
            "scene_id": scene.scene_id,
            "candidates": len(candidates),
            "retained": len(retained),
        })
        return result

    def _ingest(self, scene: Scene) -> str:
        """Copy the scene image into the artifact store so the ledger stays
        self-contained; the record is skipped when resuming past it."""
        data = self.gateway.store.read(scene.image_ref)
        already = (self.resume is not None
                   and scene.scene_id in self.resume.ingested_scene_ids)
        stored_ref = self.gateway.store.put_image(data)
        if not already:
            self.writer.append(RecordKind.SCENE_INGESTED, {
                "scene_id": scene.scene_id,
                "city": scene.city,
                "image_ref": stored_ref,
                "source_path": scene.image_ref,
                "image_sha256": hashlib.sha256(data).hexdigest(),
                "baseline_score": scene.baseline_score,
            })
        return stored_ref

    def _append_scene_result(self, result: SceneResult, planner_failed: bool = False) -> None:
        self.writer.append(RecordKind.SCENE_RESULT, {
            "scene_id": result.scene_id,
            "candidates": [c.to_payload() for c in result.candidates],
            "retained": [r.to_payload() for r in result.retained],
            "coverage": result.coverage,
            "planner_failed": planner_failed,
        })

    def plan_scene(self, scene: Scene) -> int:
        """Phase 1 only: ingest and propose candidates, no realisation."""
        self._emit({"event": "scene_started", "scene_id": scene.scene_id})
        self._ingest(scene)
        try:
            labelled = self.construct_candidates(scene)
        except PlannerFailed:
            labelled = []
        self._emit({"event": "scene_planned", "scene_id": scene.scene_id,
                    "candidates": len(labelled)})
        return len(labelled)

    def _reload_candidates(self, scene: Scene) -> list[tuple[str, LeverIntervention]]:
        labelled = []
        for payload in sorted(self.resume.proposed_by_scene[scene.scene_id],
                              key=lambda p: p["ordinal"]):
            candidate = LeverIntervention.from_payload(payload["candidate"], self._vocabulary)
            labelled.append((payload["candidate_id"], candidate))
        return labelled

    def _reload_outcomes(self, scene: Scene) -> dict[str, CandidateOutcome]:
        outcomes = {}
        for candidate_id, payload in self.resume.outcomes_by_candidate.items():
            if payload["scene_id"] != scene.scene_id:
                continue
            retained = payload.get("retained")
            outcomes[candidate_id] = CandidateOutcome(
                candidate_id=candidate_id,
                status=CandidateStatus(payload["status"]),
                attempts=tuple(AttemptRecord.from_payload(a) for a in payload["attempts"]),
                retained=RetainedEdit.from_payload(retained) if retained else None,
            )
        return outcomes


def execute_run(
    scenes: Iterable[Scene],
    config: RunConfig,
    gateway: Gateway,
    writer: LedgerWriter,
    resume: ResumePlan | None = None,
    on_event: EventHook | None = None,
) -> list[SceneResult]:
    """Process scenes through the pipeline, honouring a resume plan.

    Scenes run on a worker pool of the configured width; ledger appends are
    serialised by the writer. With the default single worker the ledger is
    bit-reproducible (timestamps aside) for equal inputs.
    """
    engine = SceneEngine(config, gateway, writer, resume, on_event)
    pending = list(scenes)
    if resume is not None:
        pending = [s for s in pending if s.scene_id in resume.pending_scene_ids]

    if config.workers <= 1:
        return [engine.run_scene(scene) for scene in pending]

    results: dict[str, SceneResult] = {}
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        for scene, result in zip(pending, pool.map(engine.run_scene, pending)):
            results[scene.scene_id] = result
    return [results[s.scene_id] for s in pending]
