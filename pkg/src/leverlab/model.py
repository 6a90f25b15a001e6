"""Core domain types: the intervention vocabulary, scenes, verdicts, attempts and run records.

Everything here is an immutable value record; no module in the package is
imported from here, so these types are safe to share across workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Iterable


class LeverlabError(Exception):
    """Base class for all typed errors raised by this package."""


class UnknownConcept(LeverlabError):
    """A lever concept id outside the compiled-in vocabulary."""


class ManifestError(LeverlabError):
    """A scene manifest that fails structural validation."""


class LeverFamily(str, Enum):
    PHYSICAL_MAINTENANCE = "PhysicalMaintenance"
    ENVIRONMENTAL_AMENITY = "EnvironmentalAmenity"
    VISUAL_LEGIBILITY = "VisualLegibility"
    MOBILITY_INFRASTRUCTURE = "MobilityInfrastructure"

    @property
    def display_name(self) -> str:
        return _FAMILY_DISPLAY[self]


_FAMILY_DISPLAY = {
    LeverFamily.PHYSICAL_MAINTENANCE: "Physical Maintenance",
    LeverFamily.ENVIRONMENTAL_AMENITY: "Environmental Amenity",
    LeverFamily.VISUAL_LEGIBILITY: "Visual Legibility",
    LeverFamily.MOBILITY_INFRASTRUCTURE: "Mobility Infrastructure",
}


def parse_family(text: str) -> LeverFamily:
    """Resolve a family from its enum value, enum name or display name.

    Matching is insensitive to case, spaces and underscores; anything else
    raises ValueError (the family set is closed).
    """
    key = "".join(ch for ch in text.lower() if ch.isalnum())
    for fam in LeverFamily:
        if key == fam.value.lower() or key == "".join(
            ch for ch in fam.display_name.lower() if ch.isalnum()
        ):
            return fam
    raise ValueError(f"unknown lever family: {text!r}")


class InterventionDirection(str, Enum):
    ADD = "add"
    REMOVE = "remove"
    REPAIR = "repair"


def parse_direction(text: str) -> InterventionDirection:
    try:
        return InterventionDirection(text.strip().lower())
    except ValueError:
        raise ValueError(f"unknown intervention direction: {text!r}") from None


@dataclass(frozen=True)
class Percept:
    """A perceptual attribute scored on a bounded continuous scale."""

    name: str = "safety"
    scale_min: float = 0.0
    scale_max: float = 10.0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("percept name must be non-empty")
        if not self.scale_min < self.scale_max:
            raise ValueError("percept scale_min must be < scale_max")


@dataclass(frozen=True)
class LeverConcept:
    id: str
    family: LeverFamily
    display_name: str
    direction_default: InterventionDirection
    canonical: bool = True


# Fixed intervention vocabulary. Each concept is prompt-only editable and
# grounded in a visible scene element; the closed set is what every report
# statistic is defined over.
VOCABULARY: tuple[LeverConcept, ...] = (
    LeverConcept("graffiti_removal", LeverFamily.PHYSICAL_MAINTENANCE,
                 "Graffiti removal", InterventionDirection.REMOVE),
    LeverConcept("litter_removal", LeverFamily.PHYSICAL_MAINTENANCE,
                 "Litter removal", InterventionDirection.REMOVE),
    LeverConcept("facade_repair", LeverFamily.PHYSICAL_MAINTENANCE,
                 "Facade repair", InterventionDirection.REPAIR),
    LeverConcept("surface_cleaning", LeverFamily.PHYSICAL_MAINTENANCE,
                 "Surface cleaning", InterventionDirection.REPAIR),
    LeverConcept("shutter_repair", LeverFamily.PHYSICAL_MAINTENANCE,
                 "Shutter repair", InterventionDirection.REPAIR),
    LeverConcept("localised_greenery_addition", LeverFamily.ENVIRONMENTAL_AMENITY,
                 "Localised greenery addition", InterventionDirection.ADD),
    LeverConcept("lighting_repair", LeverFamily.ENVIRONMENTAL_AMENITY,
                 "Lighting repair", InterventionDirection.REPAIR),
    LeverConcept("tree_canopy_management", LeverFamily.ENVIRONMENTAL_AMENITY,
                 "Tree canopy management", InterventionDirection.REMOVE),
    LeverConcept("signage_decluttering", LeverFamily.VISUAL_LEGIBILITY,
                 "Signage decluttering", InterventionDirection.REMOVE),
    LeverConcept("storefront_transparency_increase", LeverFamily.VISUAL_LEGIBILITY,
                 "Storefront transparency increase", InterventionDirection.ADD),
    LeverConcept("crosswalk_repainting", LeverFamily.MOBILITY_INFRASTRUCTURE,
                 "Crosswalk repainting", InterventionDirection.REPAIR),
    LeverConcept("lane_marking_repainting", LeverFamily.MOBILITY_INFRASTRUCTURE,
                 "Lane marking repainting", InterventionDirection.REPAIR),
)

_VOCAB_BY_ID: dict[str, LeverConcept] = {c.id: c for c in VOCABULARY}
assert len(_VOCAB_BY_ID) == 12


class Vocabulary:
    """Concept lookup over the fixed vocabulary plus optional extensions.

    Extensions are experimental concepts carried through the pipeline but
    marked non-canonical so reports can flag them.
    """

    def __init__(self, extra_concepts: Iterable[LeverConcept] = ()) -> None:
        self._by_id = dict(_VOCAB_BY_ID)
        for concept in extra_concepts:
            if concept.id in self._by_id:
                raise ValueError(f"extension concept shadows vocabulary id {concept.id!r}")
            self._by_id[concept.id] = LeverConcept(
                concept.id, concept.family, concept.display_name,
                concept.direction_default, canonical=False,
            )

    def get(self, concept_id: str) -> LeverConcept:
        concept = self._by_id.get(concept_id)
        if concept is None:
            raise UnknownConcept(concept_id)
        return concept

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self._by_id

    def concepts(self) -> list[LeverConcept]:
        return list(self._by_id.values())


DEFAULT_VOCABULARY = Vocabulary()


def family_of(concept_id: str) -> LeverFamily:
    """Family of a concept in the fixed 12-concept vocabulary.

    Raises UnknownConcept for anything outside the closed set.
    """
    concept = _VOCAB_BY_ID.get(concept_id)
    if concept is None:
        raise UnknownConcept(concept_id)
    return concept.family


def canonical_candidate_id(scene_id: str, concept_id: str, ordinal: int) -> str:
    """Deterministic candidate id; a pure function of its inputs.

    The ordinal is the 1-based position in the scene's candidate list, so
    repeated concepts with distinct supports never collide.
    """
    if ordinal < 1:
        raise ValueError("ordinal must be >= 1")
    return f"{scene_id}:{concept_id}:{ordinal:02d}"


@dataclass(frozen=True)
class LeverIntervention:
    """One grounded single-lever edit candidate: concept, support, direction, template."""

    concept: LeverConcept
    scene_support: str
    target_object: str
    direction: InterventionDirection
    edit_template: str
    edit_plan: str

    def __post_init__(self) -> None:
        for name in ("scene_support", "target_object", "edit_template", "edit_plan"):
            if not getattr(self, name):
                raise ValueError(f"LeverIntervention.{name} must be non-empty")

    def to_payload(self) -> dict:
        return {
            "lever_concept": self.concept.id,
            "lever_family": self.concept.family.value,
            "scene_support": self.scene_support,
            "target_object": self.target_object,
            "intervention_direction": self.direction.value,
            "edit_template": self.edit_template,
            "edit_plan": self.edit_plan,
            "canonical_concept": self.concept.canonical,
        }

    @classmethod
    def from_payload(cls, payload: dict, vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> "LeverIntervention":
        return cls(
            concept=vocabulary.get(payload["lever_concept"]),
            scene_support=payload["scene_support"],
            target_object=payload["target_object"],
            direction=InterventionDirection(payload["intervention_direction"]),
            edit_template=payload["edit_template"],
            edit_plan=payload["edit_plan"],
        )


@dataclass(frozen=True)
class Scene:
    scene_id: str
    city: str
    image_ref: str
    baseline_score: float | None = None

    def __post_init__(self) -> None:
        if not self.scene_id:
            raise ValueError("scene_id must be non-empty")
        if not self.city:
            raise ValueError("city must be non-empty")


FAILURE_MODES = (
    "no_target_change",
    "same_place_violation",
    "non_local_drift",
    "unrealistic",
    "implausible_lever",
)

# Audit criteria in their fixed reporting order, and the failure-mode
# identifier each false criterion maps onto.
CRITERIA = (
    "edit_attempted",
    "same_place_preserved",
    "is_localised",
    "is_realistic",
    "is_plausible",
)

CRITERION_FAILURE_MODE = {
    "edit_attempted": "no_target_change",
    "same_place_preserved": "same_place_violation",
    "is_localised": "non_local_drift",
    "is_realistic": "unrealistic",
    "is_plausible": "implausible_lever",
}


@dataclass(frozen=True)
class VerdictNotes:
    failure_modes: tuple[str, ...] = ()
    diagnosis: str = ""
    repair_suggestion: str = ""

    def __post_init__(self) -> None:
        for mode in self.failure_modes:
            if mode not in FAILURE_MODES:
                raise ValueError(f"failure mode outside closed set: {mode!r}")


@dataclass(frozen=True)
class ValidityVerdict:
    """The critic's five audit criteria; all must be present (never defaulted)."""

    edit_attempted: bool
    same_place_preserved: bool
    is_localised: bool
    is_realistic: bool
    is_plausible: bool
    notes: VerdictNotes = VerdictNotes()

    def criterion(self, name: str) -> bool:
        return bool(getattr(self, name))

    def to_payload(self) -> dict:
        return {
            "edit_attempted": self.edit_attempted,
            "same_place_preserved": self.same_place_preserved,
            "is_localised": self.is_localised,
            "is_realistic": self.is_realistic,
            "is_plausible": self.is_plausible,
            "notes": {
                "failure_modes": list(self.notes.failure_modes),
                "diagnosis": self.notes.diagnosis,
                "repair_suggestion": self.notes.repair_suggestion,
            },
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ValidityVerdict":
        notes = payload.get("notes") or {}
        return cls(
            edit_attempted=payload["edit_attempted"],
            same_place_preserved=payload["same_place_preserved"],
            is_localised=payload["is_localised"],
            is_realistic=payload["is_realistic"],
            is_plausible=payload["is_plausible"],
            notes=VerdictNotes(
                failure_modes=tuple(notes.get("failure_modes", ())),
                diagnosis=notes.get("diagnosis", ""),
                repair_suggestion=notes.get("repair_suggestion", ""),
            ),
        )


@dataclass(frozen=True)
class AttemptRecord:
    """One stochastic generation attempt; either a realised edit with its
    verdict, or a backend error, never both."""

    candidate_id: str
    attempt_index: int
    attempt_seed: int
    edited_image_ref: str | None = None
    verdict: ValidityVerdict | None = None
    backend_error: str | None = None

    def __post_init__(self) -> None:
        realised = self.edited_image_ref is not None and self.verdict is not None
        failed = self.backend_error is not None
        if realised == failed:
            raise ValueError(
                "attempt must carry exactly one of (edited_image_ref+verdict, backend_error)"
            )
        if self.attempt_index < 1:
            raise ValueError("attempt_index must be >= 1")

    def to_payload(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "attempt_index": self.attempt_index,
            "attempt_seed": self.attempt_seed,
            "edited_image_ref": self.edited_image_ref,
            "verdict": self.verdict.to_payload() if self.verdict else None,
            "backend_error": self.backend_error,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "AttemptRecord":
        verdict = payload.get("verdict")
        return cls(
            candidate_id=payload["candidate_id"],
            attempt_index=payload["attempt_index"],
            attempt_seed=payload["attempt_seed"],
            edited_image_ref=payload.get("edited_image_ref"),
            verdict=ValidityVerdict.from_payload(verdict) if verdict else None,
            backend_error=payload.get("backend_error"),
        )


@dataclass(frozen=True)
class RetainedEdit:
    """The first gate-passing edit of a candidate, with its proxy scores."""

    candidate_id: str
    accepted_attempt_index: int
    edited_image_ref: str
    baseline_score: float
    edited_score: float | None = None
    delta_aux: float | None = None

    def __post_init__(self) -> None:
        if self.edited_score is not None and self.delta_aux is not None:
            if not math.isclose(self.delta_aux, self.edited_score - self.baseline_score,
                                rel_tol=0, abs_tol=1e-9):
                raise ValueError("delta_aux must equal edited_score - baseline_score")

    def to_payload(self) -> dict:
        return asdict(self)

    @classmethod
    def from_payload(cls, payload: dict) -> "RetainedEdit":
        return cls(**payload)


@dataclass(frozen=True)
class SceneResult:
    """Per-scene outcome: the candidate set, the retained (valid) set and coverage."""

    scene_id: str
    candidates: tuple[LeverIntervention, ...]
    retained: tuple[RetainedEdit, ...]
    coverage: float | None

    def __post_init__(self) -> None:
        if len(self.retained) > len(self.candidates):
            raise ValueError("|retained| must be <= |candidates|")
        if self.candidates:
            expected = len(self.retained) / len(self.candidates)
            if self.coverage is None or not math.isclose(self.coverage, expected, rel_tol=0, abs_tol=0):
                raise ValueError("coverage must equal |retained| / |candidates|")
        elif self.coverage is not None:
            raise ValueError("coverage undefined for scenes without candidates")


@dataclass(frozen=True)
class BackendEndpoint:
    """Connection settings for one live backend role."""

    url: str
    model: str = ""
    auth_token_env: str = ""
    timeout_ms: int = 30_000
    max_in_flight: int = 4


@dataclass(frozen=True)
class RunConfig:
    K: int = 5
    T: int = 5
    theta_aux: float = 0.1
    bootstrap_B: int = 10_000
    confidence_z: float = 1.96
    master_seed: int = 20_250_101
    percept: Percept = Percept()
    backends: dict[str, BackendEndpoint] = field(default_factory=dict)
    workers: int = 1
    sweep_cutoffs: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    raters_per_pair: int = 2
    taxonomy_rule: str = "final_attempt"  # or "union"
    strict_backend_accounting: bool = False
    score_rejected: bool = False  # debug: proxy-score rejected realisations too
    fsync: bool = False
    extra_concepts: tuple[LeverConcept, ...] = ()

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.bootstrap_B < 100:
            raise ValueError("bootstrap_B must be >= 100")
        if self.taxonomy_rule not in ("final_attempt", "union"):
            raise ValueError("taxonomy_rule must be 'final_attempt' or 'union'")

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.extra_concepts) if self.extra_concepts else DEFAULT_VOCABULARY

    def generation_fingerprint(self) -> str:
        """Hash of every parameter that affects what a run generates.

        Analysis-only knobs (theta_aux, bootstrap_B, confidence_z, sweep
        cutoffs, rater settings) are excluded so they may change on resume.
        """
        material = {
            "K": self.K,
            "T": self.T,
            "master_seed": self.master_seed,
            "percept": [self.percept.name, self.percept.scale_min, self.percept.scale_max],
            "backends": {role: asdict(ep) for role, ep in sorted(self.backends.items())},
            "extra_concepts": [c.id for c in self.extra_concepts],
        }
        blob = json.dumps(material, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_payload(self) -> dict:
        payload = asdict(self)
        payload["backends"] = {role: asdict(ep) for role, ep in self.backends.items()}
        payload["sweep_cutoffs"] = list(self.sweep_cutoffs)
        payload["extra_concepts"] = [
            {
                "id": c.id,
                "family": c.family.value,
                "display_name": c.display_name,
                "direction_default": c.direction_default.value,
            }
            for c in self.extra_concepts
        ]
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "RunConfig":
        data = dict(payload)
        data["percept"] = Percept(**data["percept"])
        data["backends"] = {
            role: BackendEndpoint(**ep) for role, ep in data.get("backends", {}).items()
        }
        data["sweep_cutoffs"] = tuple(data.get("sweep_cutoffs", ()))
        data["extra_concepts"] = tuple(
            LeverConcept(
                c["id"], LeverFamily(c["family"]), c["display_name"],
                InterventionDirection(c["direction_default"]), canonical=False,
            )
            for c in data.get("extra_concepts", ())
        )
        return cls(**data)


def stable_hash64(*parts: object) -> int:
    """Platform-stable unsigned 64-bit hash of the canonical part encoding."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def attempt_seed_for(master_seed: int, scene_id: str, candidate_id: str, attempt_index: int) -> int:
    """Seed for one stochastic edit attempt; stable across processes and platforms."""
    if attempt_index < 1:
        raise ValueError("attempt_index must be >= 1")
    return stable_hash64("attempt", master_seed, scene_id, candidate_id, attempt_index)


def load_manifest(path: str | Path) -> list[Scene]:
    """Load a line-delimited scene manifest.

    Each line is one record with fields scene_id, city, image_path and an
    optional baseline_score; image paths are resolved relative to the
    manifest's directory and must point at readable files.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    scenes: list[Scene] = []
    seen: set[str] = set()
    base = path.parent
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: not a valid record: {exc}") from exc
        for field_name in ("scene_id", "city", "image_path"):
            if not record.get(field_name):
                raise ManifestError(f"{path}:{lineno}: missing field {field_name!r}")
        scene_id = record["scene_id"]
        if scene_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate scene_id {scene_id!r}")
        seen.add(scene_id)
        image_path = (base / record["image_path"]).resolve()
        if not image_path.is_file():
            raise ManifestError(f"{path}:{lineno}: image not readable: {image_path}")
        baseline = record.get("baseline_score")
        if baseline is not None:
            baseline = float(baseline)
        scenes.append(Scene(scene_id, record["city"], str(image_path), baseline))
    if not scenes:
        raise ManifestError(f"manifest is empty: {path}")
    return scenes


def manifest_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
