"""Server-side 2AFC study logic.

Every retained edit yields R assignment slots with predetermined, balanced
side placement; sessions walk the slots in a per-session seeded order.
Judgements are idempotent per assignment and append to the run ledger through
its single writer; aggregation (win rates, Wilson CIs, proxy concordance)
reads only gate-passing edits back out of the ledger.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

from .ledger import RecordKind
from .model import LeverlabError, stable_hash64
from .stats import IntervalEstimate, wilson_interval


class DuplicateJudgement(LeverlabError):
    pass


class UnknownAssignment(LeverlabError):
    pass


class NoJudgements(LeverlabError):
    pass


class Choice(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class PairAssignment:
    assignment_id: str
    candidate_id: str
    left_is_edited: bool
    session_id: str = ""
    presentation_order: int = -1
    issued_at: float | None = None

    def issued(self, session_id: str, order: int) -> "PairAssignment":
        return PairAssignment(self.assignment_id, self.candidate_id,
                              self.left_is_edited, session_id, order, time.time())


@dataclass(frozen=True)
class JudgementRecord:
    assignment_id: str
    choice: Choice
    latency_ms: int
    rater_tag: str
    candidate_id: str
    chose_edited: bool

    def to_payload(self) -> dict:
        return {
            "assignment_id": self.assignment_id,
            "choice": self.choice.value,
            "latency_ms": self.latency_ms,
            "rater_tag": self.rater_tag,
            "candidate_id": self.candidate_id,
            "chose_edited": self.chose_edited,
        }


def build_schedule(candidate_ids: list[str], raters_per_pair: int,
                   seed: int) -> list[PairAssignment]:
    """R assignment slots per retained edit, deterministic for a fixed seed.

    Side placement is balanced to within one per edit (exactly R/2 each when
    R is even), with the leftover side of odd R decided by a seeded draw, so
    the global left-edited fraction stays near one half.
    """
    if raters_per_pair < 1:
        raise ValueError("raters_per_pair must be >= 1")
    slots: list[PairAssignment] = []
    for candidate_id in candidate_ids:
        sides = [True] * (raters_per_pair // 2) + [False] * (raters_per_pair // 2)
        if raters_per_pair % 2:
            sides.append(stable_hash64(seed, "odd-side", candidate_id) % 2 == 0)
        sides.sort(key=lambda side: stable_hash64(seed, "side-order", candidate_id, side))
        for replicate, left_is_edited in enumerate(sides, start=1):
            assignment_id = format(
                stable_hash64(seed, "assignment", candidate_id, replicate), "016x")
            slots.append(PairAssignment(assignment_id, candidate_id, left_is_edited))
    return slots


class JudgementBook:
    """Issuance and recording state over a fixed schedule.

    Answered assignments persist in the ledger; issuance is in-memory, so a
    restarted service re-issues unanswered slots (judgements stay idempotent
    by assignment id).
    """

    def __init__(self, schedule: list[PairAssignment], seed: int,
                 append=None, existing_judgements: list[dict] | None = None) -> None:
        self.slots = {slot.assignment_id: slot for slot in schedule}
        self.order = [slot.assignment_id for slot in schedule]
        self.seed = seed
        self._append = append or (lambda kind, payload: None)
        self.issued: dict[str, PairAssignment] = {}
        self.answered: dict[str, JudgementRecord] = {}
        for payload in existing_judgements or []:
            if payload["assignment_id"] in self.slots:
                self.answered[payload["assignment_id"]] = JudgementRecord(
                    assignment_id=payload["assignment_id"],
                    choice=Choice(payload["choice"]),
                    latency_ms=payload.get("latency_ms", 0),
                    rater_tag=payload.get("rater_tag", ""),
                    candidate_id=payload["candidate_id"],
                    chose_edited=payload["chose_edited"],
                )

    def session_order(self, session_id: str) -> list[str]:
        return sorted(self.order,
                      key=lambda aid: stable_hash64(self.seed, "session", session_id, aid))

    def next_for_session(self, session_id: str) -> PairAssignment | None:
        """The session's current unanswered assignment (idempotent), else the
        next slot not taken by any other session; None when exhausted."""
        order = self.session_order(session_id)
        for position, assignment_id in enumerate(order):
            if assignment_id in self.answered:
                continue
            issued = self.issued.get(assignment_id)
            if issued is not None and issued.session_id == session_id:
                return issued
            if issued is None:
                assignment = self.slots[assignment_id].issued(session_id, position)
                self.issued[assignment_id] = assignment
                return assignment
        return None

    def progress(self, session_id: str) -> dict:
        return {
            "answered": len(self.answered),
            "total": len(self.slots),
        }

    def record(self, assignment_id: str, choice: Choice, latency_ms: int = 0,
               rater_tag: str = "") -> JudgementRecord:
        slot = self.slots.get(assignment_id)
        if slot is None:
            raise UnknownAssignment(assignment_id)
        if assignment_id in self.answered:
            raise DuplicateJudgement(assignment_id)
        record = JudgementRecord(
            assignment_id=assignment_id,
            choice=choice,
            latency_ms=latency_ms,
            rater_tag=rater_tag,
            candidate_id=slot.candidate_id,
            chose_edited=(choice is Choice.LEFT) == slot.left_is_edited,
        )
        self._append(RecordKind.JUDGEMENT, record.to_payload())
        self.answered[assignment_id] = record
        return record


@dataclass(frozen=True)
class EditJudgementSummary:
    candidate_id: str
    judgements: int
    chose_edited: int
    win_rate: IntervalEstimate
    delta_aux: float | None


@dataclass(frozen=True)
class JudgementAggregate:
    per_edit: list[EditJudgementSummary]
    per_family: dict[str, IntervalEstimate]
    concordant: int
    comparisons: int
    undecided: int

    @property
    def concordance(self) -> float | None:
        return self.concordant / self.comparisons if self.comparisons else None


def aggregate_judgements(judgements: list[dict],
                         edit_info: dict[str, dict],
                         z: float = 1.96) -> JudgementAggregate:
    """Win rates with Wilson CIs per edit and per family, plus concordance
    between human wins and the proxy shift sign.

    edit_info maps candidate_id -> {family, delta_aux} over gate-passing
    edits only; judgements for anything else are ignored. Undecided edits
    (win rate exactly one half, or zero proxy shift) are excluded from the
    concordance and counted separately.
    """
    if not judgements:
        raise NoJudgements("no judgements recorded")

    by_edit: dict[str, list[bool]] = {}
    by_family: dict[str, list[bool]] = {}
    for payload in judgements:
        candidate_id = payload["candidate_id"]
        info = edit_info.get(candidate_id)
        if info is None:
            continue
        chose = bool(payload["chose_edited"])
        by_edit.setdefault(candidate_id, []).append(chose)
        by_family.setdefault(info["family"], []).append(chose)
    if not by_edit:
        raise NoJudgements("no judgements over gate-passing edits")

    per_edit: list[EditJudgementSummary] = []
    concordant = comparisons = undecided = 0
    for candidate_id in sorted(by_edit):
        votes = by_edit[candidate_id]
        wins = sum(votes)
        delta = edit_info[candidate_id].get("delta_aux")
        per_edit.append(EditJudgementSummary(
            candidate_id=candidate_id,
            judgements=len(votes),
            chose_edited=wins,
            win_rate=wilson_interval(wins, len(votes), z),
            delta_aux=delta,
        ))
        rate = wins / len(votes)
        if delta is None or rate == 0.5 or delta == 0:
            undecided += 1
            continue
        comparisons += 1
        if (rate > 0.5) == (delta > 0):
            concordant += 1

    per_family = {
        family: wilson_interval(sum(votes), len(votes), z)
        for family, votes in sorted(by_family.items())
    }
    return JudgementAggregate(per_edit, per_family, concordant, comparisons, undecided)
