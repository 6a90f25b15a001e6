"""Parsing and rendering of the structured backend contracts.

The planner and critic reply with JSON-shaped documents that may arrive
wrapped in code fences or surrounded by prose; these functions extract and
validate them, emitting a typed violation for every record they drop or
repair. The editor receives a rendered instruction that is byte-deterministic
for equal candidates.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .model import (
    DEFAULT_VOCABULARY,
    FAILURE_MODES,
    LeverIntervention,
    LeverlabError,
    ValidityVerdict,
    VerdictNotes,
    Vocabulary,
    parse_direction,
    parse_family,
)


class ViolationKind(str, Enum):
    MALFORMED_DOCUMENT = "MalformedDocument"
    MISSING_FIELD = "MissingField"
    UNKNOWN_CONCEPT = "UnknownConcept"
    FAMILY_MISMATCH = "FamilyMismatch"
    BUDGET_EXCEEDED = "BudgetExceeded"
    DUPLICATE_CANDIDATE = "DuplicateCandidate"
    UNKNOWN_DIRECTION = "UnknownDirection"


@dataclass(frozen=True)
class ContractViolation:
    kind: ViolationKind
    path: str
    detail: str

    def to_payload(self) -> dict:
        return {"kind": self.kind.value, "path": self.path, "detail": self.detail}


class MalformedDocument(LeverlabError):
    """No parseable structured payload in the backend reply."""


class MissingField(LeverlabError):
    """A required field is absent (or of the wrong type) in a backend reply."""


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)\n?\s*```", re.DOTALL)

CANDIDATE_FIELDS = (
    "lever_concept",
    "lever_family",
    "scene_support",
    "target_object",
    "intervention_direction",
    "edit_template",
    "edit_plan",
)


def _extract_json_object(raw: str) -> dict:
    """Extract the first JSON object from a reply that may carry code fences
    or leading/trailing prose. Raises MalformedDocument when nothing parses."""
    if not isinstance(raw, str) or not raw.strip():
        raise MalformedDocument("empty backend reply")

    attempts = [raw.strip()]
    attempts.extend(match.strip() for match in _FENCE_RE.findall(raw))

    # Balanced-brace scan handles prose-wrapped documents.
    start = raw.find("{")
    if start >= 0:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(raw)):
            ch = raw[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    attempts.append(raw[start : i + 1])
                    break

    for text in attempts:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError:
            continue
        if isinstance(payload, dict):
            return payload
    raise MalformedDocument("no parseable JSON object in backend reply")


def _normalise_support(text: str) -> str:
    return " ".join(text.lower().split())


def parse_planner_output(
    raw: str,
    K: int,
    vocabulary: Vocabulary = DEFAULT_VOCABULARY,
) -> tuple[list[LeverIntervention], list[ContractViolation]]:
    """Validate a planner reply into at most K candidates, in document order.

    Every dropped or repaired record is paired with a ContractViolation;
    nothing is silently discarded. Raises MalformedDocument when the reply
    holds no parseable payload at all (callers may retry the backend once).
    """
    document = _extract_json_object(raw)
    entries = document.get("candidates")
    if not isinstance(entries, list):
        raise MalformedDocument("planner reply lacks a 'candidates' list")

    candidates: list[LeverIntervention] = []
    violations: list[ContractViolation] = []
    seen_keys: set[tuple[str, str]] = set()

    for index, entry in enumerate(entries):
        path = f"candidates[{index}]"
        if not isinstance(entry, dict):
            violations.append(ContractViolation(
                ViolationKind.MISSING_FIELD, path, "candidate is not an object"))
            continue

        missing = [f for f in CANDIDATE_FIELDS
                   if not isinstance(entry.get(f), str) or not entry.get(f, "").strip()]
        if missing:
            violations.append(ContractViolation(
                ViolationKind.MISSING_FIELD, path,
                f"missing or empty fields: {', '.join(missing)}"))
            continue

        concept_id = entry["lever_concept"].strip()
        if concept_id not in vocabulary:
            violations.append(ContractViolation(
                ViolationKind.UNKNOWN_CONCEPT, path,
                f"concept outside vocabulary: {concept_id!r}"))
            continue
        concept = vocabulary.get(concept_id)

        try:
            claimed_family = parse_family(entry["lever_family"])
        except ValueError:
            violations.append(ContractViolation(
                ViolationKind.FAMILY_MISMATCH, path,
                f"unparseable family {entry['lever_family']!r} for {concept_id}"))
            continue
        if claimed_family is not concept.family:
            violations.append(ContractViolation(
                ViolationKind.FAMILY_MISMATCH, path,
                f"claimed {claimed_family.value}, vocabulary says {concept.family.value}"))
            continue

        try:
            direction = parse_direction(entry["intervention_direction"])
        except ValueError:
            violations.append(ContractViolation(
                ViolationKind.UNKNOWN_DIRECTION, path,
                f"unknown direction {entry['intervention_direction']!r}"))
            continue

        key = (concept_id, _normalise_support(entry["scene_support"]))
        if key in seen_keys:
            violations.append(ContractViolation(
                ViolationKind.DUPLICATE_CANDIDATE, path,
                f"duplicate (concept, support) pair: {key}"))
            continue

        if len(candidates) >= K:
            violations.append(ContractViolation(
                ViolationKind.BUDGET_EXCEEDED, path,
                f"candidate beyond the K={K} budget"))
            continue

        seen_keys.add(key)
        candidates.append(LeverIntervention(
            concept=concept,
            scene_support=entry["scene_support"].strip(),
            target_object=entry["target_object"].strip(),
            direction=direction,
            edit_template=entry["edit_template"].strip(),
            edit_plan=entry["edit_plan"].strip(),
        ))

    return candidates, violations


_BOOL_FIELDS = (
    "edit_attempted",
    "same_place_preserved",
    "is_localised",
    "is_realistic",
    "is_plausible",
)


def parse_critic_output(raw: str) -> ValidityVerdict:
    """Parse a critic reply into a complete ValidityVerdict.

    All five criteria must be present as booleans; absence is a parse error,
    never treated as false. Unknown failure-mode strings are normalised to
    the closed set where possible, otherwise recorded verbatim in the
    diagnosis and omitted from failure_modes.
    """
    document = _extract_json_object(raw)

    values: dict[str, bool] = {}
    for name in _BOOL_FIELDS:
        value = document.get(name)
        if not isinstance(value, bool):
            raise MissingField(f"criterion {name!r} absent or not a boolean")
        values[name] = value

    notes_raw = document.get("notes") or {}
    if not isinstance(notes_raw, dict):
        notes_raw = {}
    diagnosis = str(notes_raw.get("diagnosis", "") or "")
    repair = str(notes_raw.get("repair_suggestion", "") or "")

    modes: list[str] = []
    unknown: list[str] = []
    raw_modes = notes_raw.get("failure_modes", [])
    if isinstance(raw_modes, list):
        for item in raw_modes:
            text = str(item)
            normalised = re.sub(r"[\s-]+", "_", text.strip().lower())
            if normalised in FAILURE_MODES:
                if normalised not in modes:
                    modes.append(normalised)
            else:
                unknown.append(text)
    if unknown:
        suffix = "unrecognised failure modes: " + ", ".join(repr(u) for u in unknown)
        diagnosis = f"{diagnosis} [{suffix}]" if diagnosis else suffix

    return ValidityVerdict(
        **values,
        notes=VerdictNotes(tuple(modes), diagnosis, repair),
    )


EDIT_INSTRUCTION_TEMPLATE = """\
Use the PROVIDED image as base. Preserve exact viewpoint, geometry, and layout.

ALLOWED: Only modify the target object as required by the plan. If
repainting/retexturing, keep shape and placement identical.

FORBIDDEN: No global restyling, relighting, or recoloring. No adding/removing
other objects. No readable text. No background, sky, road, or context changes.

Lever concept: {lever_concept}
Lever family: {lever_family}
Scene support: {scene_support}
Intervention direction: {intervention_direction}
Edit template: {edit_template}
Target object: {target_object}
Edit plan: {edit_plan}
"""


def render_edit_instruction(candidate: LeverIntervention) -> str:
    """Render the editor instruction for a validated candidate.

    Byte-deterministic: equal candidates always produce identical text.
    """
    return EDIT_INSTRUCTION_TEMPLATE.format(
        lever_concept=candidate.concept.id,
        lever_family=candidate.concept.family.display_name,
        scene_support=candidate.scene_support,
        intervention_direction=candidate.direction.value,
        edit_template=candidate.edit_template,
        target_object=candidate.target_object,
        edit_plan=candidate.edit_plan,
    )


PLANNER_PROMPT_TEMPLATE = """\
You are an urban perception planner. Given a street-view image and the target
percept "{percept}", propose a constrained set of at most {K} candidate lever
interventions.

ONTOLOGY: Choose only from four families - Physical Maintenance,
Environmental Amenity, Visual Legibility, Mobility Infrastructure - and
prefer cross-family diversity when the scene supports it. Known lever
concepts:
{vocabulary}

HARD CONSTRAINTS: (1) One lever per candidate. (2) Grounded in a visible
scene element. (3) Local, plausible, prompt-only friendly. (4) No global
relighting, weather, or camera changes. (5) Prefer the smallest plausible
intervention. (6) Exclude theoretically relevant levers whose target element
is not clearly visible/editable in the image.

DIVERSITY: Return distinct candidates using different lever concepts and
avoid magnitude variants of the same intervention.

Return JSON with field "candidates", each containing: lever_concept,
lever_family, scene_support, target_object, intervention_direction,
edit_template, edit_plan.
"""


def planner_prompt_for(percept, K: int,
                       vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> str:
    listing = "\n".join(
        f"- {c.id} ({c.family.display_name})" for c in vocabulary.concepts())
    return PLANNER_PROMPT_TEMPLATE.format(percept=percept.name, K=K, vocabulary=listing)


CRITIC_PROMPT = """\
Evaluate whether the edited image is a valid single-lever counterfactual
relative to the original.

CONTEXT: Edit produced by prompt-only diffusion without masking. Minor
incidental changes (tone drift, texture resampling) are expected artefacts
and should not cause failure unless they materially alter scene meaning;
plausibility and locality are still judged strictly against the requested
lever and support.

CRITERIA:
(A) edit_attempted: generator made a visible change at the target (false only
    if output looks identical to original there).
(B) same_place_preserved: same underlying place.
(C) is_localised: primary meaningful change is in/near intended support;
    minor global tone shifts do not count as non-local.
(D) is_realistic: physically plausible and coherent.
(E) is_plausible: recognisably the requested lever at the stated support;
    fail if the edit type/support is wrong or too excessive.

CLEAR FAIL CONDITIONS: Viewpoint/geometry changed; large non-target objects
added/removed; requested lever replaced by a different change; no discernible
change at target.

Return JSON: {edit_attempted, same_place_preserved, is_localised,
is_realistic, is_plausible, notes}, where notes = {failure_modes, diagnosis,
repair_suggestion}.
"""


def planner_document_for(candidates: list[LeverIntervention]) -> str:
    """Serialise candidates into the planner reply shape (round-trip helper)."""
    return json.dumps({
        "candidates": [
            {
                "lever_concept": c.concept.id,
                "lever_family": c.concept.family.display_name,
                "scene_support": c.scene_support,
                "target_object": c.target_object,
                "intervention_direction": c.direction.value,
                "edit_template": c.edit_template,
                "edit_plan": c.edit_plan,
            }
            for c in candidates
        ]
    }, indent=2)
