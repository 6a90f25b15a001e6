"""Uniform client layer over the four model roles.

Planner, editor, critic and scorer sit behind one gateway that adds bounded
per-role concurrency, transport retries with exponential backoff, timing, and
a BackendCall record for every physical interaction. Live backends speak an
OpenAI-compatible HTTP shape; the in-process mocks implement the same
byte-level interface deterministically so desk-scale runs are reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

from .model import (
    BackendEndpoint,
    LeverIntervention,
    LeverlabError,
    Percept,
    Scene,
    attempt_seed_for,
    stable_hash64,
)
from .contracts import (
    CRITIC_PROMPT,
    planner_prompt_for,
    render_edit_instruction,
)
from . import pngutil


class BackendRole(str, Enum):
    PLANNER = "planner"
    EDITOR = "editor"
    CRITIC = "critic"
    SCORER = "scorer"


class CallOutcome(str, Enum):
    OK = "Ok"
    TIMEOUT = "Timeout"
    TRANSPORT_ERROR = "TransportError"
    BAD_STATUS = "BadStatus"
    CONTENT_ERROR = "ContentError"


class BackendError(LeverlabError):
    outcome = CallOutcome.TRANSPORT_ERROR

    def __init__(self, role: BackendRole, detail: str) -> None:
        super().__init__(f"{role.value}: {detail}")
        self.role = role
        self.detail = detail


class Timeout(BackendError):
    outcome = CallOutcome.TIMEOUT


class TransportError(BackendError):
    outcome = CallOutcome.TRANSPORT_ERROR


class BadStatus(BackendError):
    outcome = CallOutcome.BAD_STATUS


class ContentError(BackendError):
    outcome = CallOutcome.CONTENT_ERROR


RETRYABLE = (Timeout, TransportError, BadStatus)
TRANSPORT_RETRIES = 2  # extra tries after the first call
BACKOFF_BASE_S = 0.25


@dataclass(frozen=True)
class BackendCall:
    role: str
    request_digest: str
    started_at: float
    ended_at: float
    outcome: str
    latency_ms: int

    def to_payload(self) -> dict:
        return {
            "role": self.role,
            "request_digest": self.request_digest,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "outcome": self.outcome,
            "latency_ms": self.latency_ms,
        }


class ArtifactStore:
    """Content-addressed files under a run directory."""

    def __init__(self, run_dir: str | Path) -> None:
        self.run_dir = Path(run_dir)
        self.images_dir = self.run_dir / "images"
        self.images_dir.mkdir(parents=True, exist_ok=True)

    def put_image(self, data: bytes, sidecar: dict | None = None) -> str:
        digest = hashlib.sha256(data).hexdigest()
        ref = f"images/{digest}.png"
        path = self.run_dir / ref
        if not path.exists():
            path.write_bytes(data)
        if sidecar is not None:
            sidecar_path = Path(str(path) + ".sidecar.json")
            if not sidecar_path.exists():
                sidecar_path.write_text(
                    json.dumps(sidecar, sort_keys=True), encoding="utf-8")
        return ref

    def resolve(self, ref: str) -> Path:
        path = Path(ref)
        if not path.is_absolute():
            path = self.run_dir / ref
        return path

    def read(self, ref: str) -> bytes:
        path = self.resolve(ref)
        if not path.is_file():
            raise FileNotFoundError(f"artifact not found: {ref}")
        return path.read_bytes()


class PlannerBackend(Protocol):
    def plan(self, scene: Scene, image: bytes, percept: Percept, K: int) -> str: ...


class EditorBackend(Protocol):
    def edit(self, image: bytes, instruction: str, context: dict) -> bytes: ...


class CriticBackend(Protocol):
    def audit(self, original: bytes, edited: bytes,
              candidate: LeverIntervention, context: dict) -> str: ...


class ScorerBackend(Protocol):
    def score(self, image: bytes) -> float: ...


def _looks_like_image(data: bytes) -> bool:
    """Shallow decodability check; Pillow confirms when available."""
    if data[:8] == pngutil.PNG_SIGNATURE:
        pass
    elif data[:3] == b"\xff\xd8\xff":
        pass
    else:
        return False
    try:
        from PIL import Image
        import io

        Image.open(io.BytesIO(data)).verify()
    except ImportError:
        return True
    except Exception:
        return False
    return True


class Gateway:
    """Shared client for all four roles.

    Each role has an independent in-flight limit; calls block, retry
    transport failures up to TRANSPORT_RETRIES times with exponential
    backoff, and report exactly one BackendCall per physical interaction
    (including failed ones) through the record hook.
    """

    def __init__(
        self,
        planner: PlannerBackend,
        editor: EditorBackend,
        critic: CriticBackend,
        scorer: ScorerBackend,
        store: ArtifactStore,
        percept: Percept,
        on_call: Callable[[BackendCall], None] | None = None,
        max_in_flight: dict[str, int] | None = None,
        backoff_base_s: float = BACKOFF_BASE_S,
        verify_scorer_determinism: bool = True,
    ) -> None:
        self._impl = {
            BackendRole.PLANNER: planner,
            BackendRole.EDITOR: editor,
            BackendRole.CRITIC: critic,
            BackendRole.SCORER: scorer,
        }
        self.store = store
        self.percept = percept
        self._on_call = on_call or (lambda call: None)
        limits = max_in_flight or {}
        self._gates = {
            role: threading.BoundedSemaphore(limits.get(role.value, 4))
            for role in BackendRole
        }
        self._backoff = backoff_base_s
        self._verify_scorer = verify_scorer_determinism

    def _invoke(self, role: BackendRole, digest: str, fn: Callable[[], object]) -> object:
        last_error: BackendError | None = None
        for attempt in range(1 + TRANSPORT_RETRIES):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            started = time.time()
            with self._gates[role]:
                try:
                    result = fn()
                    outcome = CallOutcome.OK
                except BackendError as exc:
                    result = None
                    outcome = exc.outcome
                    last_error = exc
            ended = time.time()
            self._on_call(BackendCall(
                role=role.value,
                request_digest=digest,
                started_at=started,
                ended_at=ended,
                outcome=outcome.value,
                latency_ms=int((ended - started) * 1000),
            ))
            if outcome is CallOutcome.OK:
                return result
            if not isinstance(last_error, RETRYABLE):
                raise last_error
        raise last_error

    def plan(self, scene: Scene, percept: Percept, K: int) -> str:
        image = self.store.read(scene.image_ref)
        digest = hashlib.sha256(f"plan:{scene.scene_id}:{K}".encode()).hexdigest()
        return self._invoke(
            BackendRole.PLANNER, digest,
            lambda: self._impl[BackendRole.PLANNER].plan(scene, image, percept, K))

    def edit(self, image_ref: str, candidate: LeverIntervention,
             attempt_seed: int, candidate_id: str) -> str:
        """Produce one stochastic edit; returns the content-addressed ref of
        the stored edited image."""
        image = self.store.read(image_ref)
        instruction = render_edit_instruction(candidate)
        context = {
            "candidate_id": candidate_id,
            "attempt_seed": attempt_seed,
            "base_image_sha256": hashlib.sha256(image).hexdigest(),
        }
        digest = hashlib.sha256(
            f"edit:{candidate_id}:{attempt_seed}".encode()).hexdigest()

        def call() -> str:
            edited = self._impl[BackendRole.EDITOR].edit(image, instruction, context)
            if not _looks_like_image(edited):
                raise ContentError(BackendRole.EDITOR, "reply is not a decodable image")
            return self.store.put_image(edited, sidecar=context)

        return self._invoke(BackendRole.EDITOR, digest, call)

    def audit(self, original_ref: str, edited_ref: str,
              candidate: LeverIntervention, candidate_id: str) -> str:
        original = self.store.read(original_ref)
        edited = self.store.read(edited_ref)
        context = {"candidate_id": candidate_id}
        digest = hashlib.sha256(
            f"audit:{candidate_id}:{edited_ref}".encode()).hexdigest()
        return self._invoke(
            BackendRole.CRITIC, digest,
            lambda: self._impl[BackendRole.CRITIC].audit(original, edited, candidate, context))

    def score(self, image_ref: str) -> float:
        image = self.store.read(image_ref)
        digest = hashlib.sha256(b"score:" + image).hexdigest()

        def call() -> float:
            value = self._impl[BackendRole.SCORER].score(image)
            lo, hi = self.percept.scale_min, self.percept.scale_max
            if not isinstance(value, (int, float)) or not lo <= value <= hi:
                raise ContentError(
                    BackendRole.SCORER,
                    f"score {value!r} outside [{lo}, {hi}]; refusing to clamp")
            return float(value)

        value = self._invoke(BackendRole.SCORER, digest, call)
        # Scorer determinism is contractual: spot-check 1% of images by
        # scoring twice and flagging mismatches.
        if self._verify_scorer and stable_hash64("scorer-check", digest) % 100 == 0:
            again = self._invoke(BackendRole.SCORER, digest, call)
            if again != value:
                raise ContentError(
                    BackendRole.SCORER,
                    f"nondeterministic scorer: {value} vs {again} for {digest[:12]}")
        return value


# ---------------------------------------------------------------------------
# Deterministic mocks
# ---------------------------------------------------------------------------

MARKER_KEYWORD = "leverlab-marker"


def _unit_noise(*parts: object) -> float:
    """Deterministic uniform draw in [0, 1) from the hashed parts."""
    return stable_hash64(*parts) / 2.0**64


class MockSchedule:
    """Tuned outcomes for a synthetic run: per-scene candidates, acceptance
    attempts, failure profiles, baseline scores and deltas."""

    def __init__(self, payload: dict) -> None:
        self.scenes: dict[str, dict] = payload["scenes"]
        self.image_index: dict[str, str] = payload.get("image_index", {})
        from .model import canonical_candidate_id

        self.by_candidate: dict[str, dict] = {}
        for scene_id, scene in self.scenes.items():
            for i, entry in enumerate(scene["candidates"], start=1):
                cid = canonical_candidate_id(scene_id, entry["concept"], i)
                self.by_candidate[cid] = entry

    @classmethod
    def load(cls, path: str | Path) -> "MockSchedule":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def scene_for_image_sha(self, sha: str) -> str | None:
        return self.image_index.get(sha)


_SUPPORT_PHRASES = (
    "the wall left of the entrance",
    "the pavement along the kerb",
    "the building frontage at centre",
    "the roadway in the foreground",
    "the verge beside the crossing",
    "the shopfront on the right",
)


class MockPlanner:
    """Deterministic planner: schedule-driven when given one, otherwise a
    hash-derived candidate set per scene."""

    def __init__(self, master_seed: int, schedule: MockSchedule | None = None,
                 malformed_replies: int = 0, fence_replies: bool = False) -> None:
        self.master_seed = master_seed
        self.schedule = schedule
        self._malformed_remaining: dict[str, int] = {}
        self._malformed_budget = malformed_replies
        self._fence = fence_replies

    def plan(self, scene: Scene, image: bytes, percept: Percept, K: int) -> str:
        if self._malformed_budget:
            remaining = self._malformed_remaining.setdefault(
                scene.scene_id, self._malformed_budget)
            if remaining > 0:
                self._malformed_remaining[scene.scene_id] = remaining - 1
                return "the model rambles and returns no structured payload {{{"

        entries = self._entries(scene, K)
        reply = json.dumps({"candidates": entries}, indent=1)
        if self._fence:
            reply = f"Here is the plan.\n```json\n{reply}\n```\nDone."
        return reply

    def _entries(self, scene: Scene, K: int) -> list[dict]:
        from .model import VOCABULARY

        if self.schedule is not None:
            scheduled = self.schedule.scenes.get(scene.scene_id)
            if scheduled is None:
                raise TransportError(BackendRole.PLANNER,
                                     f"scene {scene.scene_id} not in mock schedule")
            source = scheduled["candidates"]
            entries = []
            for entry in source:
                from .model import family_of

                entries.append({
                    "lever_concept": entry["concept"],
                    "lever_family": family_of(entry["concept"]).display_name,
                    "scene_support": entry["scene_support"],
                    "target_object": entry["target_object"],
                    "intervention_direction": entry["direction"],
                    "edit_template": entry["edit_template"],
                    "edit_plan": entry["edit_plan"],
                })
            return entries

        count = 3 + stable_hash64("plan-count", self.master_seed, scene.scene_id) % 3
        count = min(count, K)
        picks: list[int] = []
        cursor = 0
        while len(picks) < count:
            idx = stable_hash64("plan-pick", self.master_seed, scene.scene_id, cursor) % len(VOCABULARY)
            cursor += 1
            if idx not in picks:
                picks.append(idx)
        entries = []
        for ordinal, idx in enumerate(picks, start=1):
            concept = VOCABULARY[idx]
            support = _SUPPORT_PHRASES[
                stable_hash64("support", scene.scene_id, concept.id) % len(_SUPPORT_PHRASES)]
            entries.append({
                "lever_concept": concept.id,
                "lever_family": concept.family.display_name,
                "scene_support": support,
                "target_object": concept.display_name.lower(),
                "intervention_direction": concept.direction_default.value,
                "edit_template": f"{concept.display_name} confined to {support}",
                "edit_plan": f"Apply {concept.display_name.lower()} at {support}, "
                             f"leaving all surroundings untouched.",
            })
        return entries


class MockEditor:
    """Copies the base image and embeds a deterministic marker keyed by
    (candidate_id, attempt_seed), so every attempt has a distinct, stable
    content hash."""

    def edit(self, image: bytes, instruction: str, context: dict) -> bytes:
        if image[:8] != pngutil.PNG_SIGNATURE:
            raise ContentError(BackendRole.EDITOR, "mock editor requires PNG input")
        marker = json.dumps(
            {
                "candidate_id": context["candidate_id"],
                "attempt_seed": context["attempt_seed"],
                "base_image_sha256": context["base_image_sha256"],
            },
            sort_keys=True,
        )
        return pngutil.inject_text_chunk(image, MARKER_KEYWORD, marker)


def read_marker(image: bytes) -> dict | None:
    text = pngutil.read_text_chunk(image, MARKER_KEYWORD)
    return json.loads(text) if text else None


_MOCK_FAILURE_PROFILES = (
    ("implausible_lever",),
    ("implausible_lever", "no_target_change"),
    ("non_local_drift",),
    ("unrealistic", "implausible_lever"),
)

_MODE_TO_CRITERION = {
    "no_target_change": "edit_attempted",
    "same_place_violation": "same_place_preserved",
    "non_local_drift": "is_localised",
    "unrealistic": "is_realistic",
    "implausible_lever": "is_plausible",
}


def _verdict_reply(failed_modes: tuple[str, ...], diagnosis: str = "",
                   repair: str = "") -> str:
    values = {criterion: True for criterion in _MODE_TO_CRITERION.values()}
    for mode in failed_modes:
        values[_MODE_TO_CRITERION[mode]] = False
    document = {
        "edit_attempted": values["edit_attempted"],
        "same_place_preserved": values["same_place_preserved"],
        "is_localised": values["is_localised"],
        "is_realistic": values["is_realistic"],
        "is_plausible": values["is_plausible"],
        "notes": {
            "failure_modes": list(failed_modes),
            "diagnosis": diagnosis,
            "repair_suggestion": repair,
        },
    }
    return json.dumps(document)


class MockCritic:
    """Deterministic critic driven by the edited image's marker.

    Schedule mode accepts exactly the scheduled attempt; pass-rate mode
    accepts by a hash draw against a global or per-attempt-index rate.
    """

    def __init__(self, master_seed: int, T: int,
                 schedule: MockSchedule | None = None,
                 pass_rate: float | dict[int, float] = 0.7) -> None:
        self.master_seed = master_seed
        self.T = T
        self.schedule = schedule
        self.pass_rate = pass_rate

    def _attempt_index_for(self, candidate_id: str, attempt_seed: int) -> int:
        scene_id = candidate_id.split(":", 1)[0]
        for index in range(1, self.T + 1):
            if attempt_seed_for(self.master_seed, scene_id, candidate_id, index) == attempt_seed:
                return index
        raise ContentError(BackendRole.CRITIC,
                           f"marker seed does not match any attempt of {candidate_id}")

    def audit(self, original: bytes, edited: bytes,
              candidate: LeverIntervention, context: dict) -> str:
        marker = read_marker(edited)
        if marker is None:
            raise ContentError(BackendRole.CRITIC, "edited image carries no mock marker")
        candidate_id = marker["candidate_id"]
        attempt_index = self._attempt_index_for(candidate_id, marker["attempt_seed"])

        if self.schedule is not None:
            entry = self.schedule.by_candidate.get(candidate_id)
            if entry is None:
                raise ContentError(BackendRole.CRITIC,
                                   f"candidate {candidate_id} not in mock schedule")
            accept_attempt = entry.get("accept_attempt")
            if accept_attempt is not None and attempt_index == accept_attempt:
                return _verdict_reply(())
            if accept_attempt is not None:
                # Pre-acceptance rejections never enter the failure taxonomy.
                return _verdict_reply(("implausible_lever",),
                                      diagnosis="stochastic draw missed the plan")
            return _verdict_reply(tuple(entry.get("failure_modes", ["implausible_lever"])),
                                  diagnosis=entry.get("diagnosis", ""),
                                  repair=entry.get("repair_suggestion", ""))

        rate = self.pass_rate
        if isinstance(rate, dict):
            rate = rate.get(attempt_index, 0.0)
        draw = _unit_noise("critic", self.master_seed, candidate_id, marker["attempt_seed"])
        if draw < rate:
            return _verdict_reply(())
        profile = _MOCK_FAILURE_PROFILES[
            stable_hash64("critic-profile", candidate_id, attempt_index)
            % len(_MOCK_FAILURE_PROFILES)]
        return _verdict_reply(profile)


class MockScorer:
    """Deterministic scorer.

    Schedule mode returns the scheduled baseline for originals and baseline
    plus the tuned delta for accepted edits; otherwise mid-scale plus bounded
    hash noise on the image content.
    """

    def __init__(self, master_seed: int, schedule: MockSchedule | None = None,
                 percept: Percept = Percept()) -> None:
        self.master_seed = master_seed
        self.schedule = schedule
        self.percept = percept

    def score(self, image: bytes) -> float:
        marker = read_marker(image)
        if self.schedule is not None:
            if marker is not None:
                entry = self.schedule.by_candidate.get(marker["candidate_id"])
                scene_id = marker["candidate_id"].split(":", 1)[0]
                scene = self.schedule.scenes.get(scene_id)
                if entry is not None and scene is not None and entry.get("delta") is not None:
                    return scene["baseline_score"] + entry["delta"]
            else:
                sha = hashlib.sha256(image).hexdigest()
                scene_id = self.schedule.scene_for_image_sha(sha)
                if scene_id is not None:
                    return self.schedule.scenes[scene_id]["baseline_score"]
        mid = (self.percept.scale_min + self.percept.scale_max) / 2
        span = (self.percept.scale_max - self.percept.scale_min) / 5
        sha = hashlib.sha256(image).hexdigest()
        return mid + span * (2 * _unit_noise("score", self.master_seed, sha) - 1)


def build_mock_gateway(
    run_dir: str | Path,
    master_seed: int,
    T: int,
    percept: Percept = Percept(),
    schedule: MockSchedule | None = None,
    on_call: Callable[[BackendCall], None] | None = None,
    pass_rate: float | dict[int, float] = 0.7,
    planner_kwargs: dict | None = None,
    max_in_flight: dict[str, int] | None = None,
) -> Gateway:
    store = ArtifactStore(run_dir)
    return Gateway(
        planner=MockPlanner(master_seed, schedule, **(planner_kwargs or {})),
        editor=MockEditor(),
        critic=MockCritic(master_seed, T, schedule, pass_rate),
        scorer=MockScorer(master_seed, schedule, percept),
        store=store,
        percept=percept,
        on_call=on_call,
        max_in_flight=max_in_flight,
        backoff_base_s=0.0,
    )


# ---------------------------------------------------------------------------
# Live HTTP backends (OpenAI-compatible chat/images shapes)
# ---------------------------------------------------------------------------


def _auth_headers(endpoint: BackendEndpoint) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if endpoint.auth_token_env:
        token = os.environ.get(endpoint.auth_token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    return headers


class HttpJsonBackend:
    """Shared POST-JSON plumbing with typed transport errors."""

    def __init__(self, role: BackendRole, endpoint: BackendEndpoint) -> None:
        self.role = role
        self.endpoint = endpoint

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        url = self.endpoint.url.rstrip("/") + path
        try:
            response = httpx.post(
                url, json=body, headers=_auth_headers(self.endpoint),
                timeout=self.endpoint.timeout_ms / 1000.0)
        except httpx.TimeoutException as exc:
            raise Timeout(self.role, f"timeout after {self.endpoint.timeout_ms} ms") from exc
        except httpx.HTTPError as exc:
            raise TransportError(self.role, str(exc)) from exc
        if response.status_code != 200:
            raise BadStatus(self.role, f"HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ContentError(self.role, "reply is not JSON") from exc

    def _chat(self, messages: list[dict]) -> str:
        reply = self._post("/chat/completions", {
            "model": self.endpoint.model,
            "messages": messages,
        })
        try:
            return reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ContentError(self.role, "chat reply missing message content") from exc


def _image_part(data: bytes) -> dict:
    b64 = base64.b64encode(data).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}


class HttpPlanner(HttpJsonBackend):
    def __init__(self, endpoint: BackendEndpoint) -> None:
        super().__init__(BackendRole.PLANNER, endpoint)

    def plan(self, scene: Scene, image: bytes, percept: Percept, K: int) -> str:
        prompt = planner_prompt_for(percept, K)
        return self._chat([{
            "role": "user",
            "content": [{"type": "text", "text": prompt}, _image_part(image)],
        }])


class HttpCritic(HttpJsonBackend):
    def __init__(self, endpoint: BackendEndpoint) -> None:
        super().__init__(BackendRole.CRITIC, endpoint)

    def audit(self, original: bytes, edited: bytes,
              candidate: LeverIntervention, context: dict) -> str:
        summary = json.dumps(candidate.to_payload(), sort_keys=True)
        return self._chat([{
            "role": "user",
            "content": [
                {"type": "text", "text": CRITIC_PROMPT + "\nRequested lever:\n" + summary},
                _image_part(original),
                _image_part(edited),
            ],
        }])


class HttpEditor(HttpJsonBackend):
    def __init__(self, endpoint: BackendEndpoint) -> None:
        super().__init__(BackendRole.EDITOR, endpoint)

    def edit(self, image: bytes, instruction: str, context: dict) -> bytes:
        reply = self._post("/images/edits", {
            "model": self.endpoint.model,
            "prompt": instruction,
            "image": base64.b64encode(image).decode("ascii"),
            "seed": context["attempt_seed"],
        })
        try:
            b64 = reply["data"][0]["b64_json"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ContentError(self.role, "edit reply missing image data") from exc
        try:
            return base64.b64decode(b64, validate=True)
        except Exception as exc:
            raise ContentError(self.role, "edit reply image is not base64") from exc


class HttpScorer(HttpJsonBackend):
    """Scorer endpoint: POST /score {model, image} -> {"score": value}."""

    def __init__(self, endpoint: BackendEndpoint) -> None:
        super().__init__(BackendRole.SCORER, endpoint)

    def score(self, image: bytes) -> float:
        reply = self._post("/score", {
            "model": self.endpoint.model,
            "image": base64.b64encode(image).decode("ascii"),
        })
        if "score" not in reply:
            raise ContentError(self.role, "score reply missing 'score'")
        value = reply["score"]
        if not isinstance(value, (int, float)):
            raise ContentError(self.role, f"score is not numeric: {value!r}")
        return float(value)


def build_live_gateway(
    run_dir: str | Path,
    backends: dict[str, BackendEndpoint],
    percept: Percept,
    on_call: Callable[[BackendCall], None] | None = None,
) -> Gateway:
    missing = [role.value for role in BackendRole if role.value not in backends]
    if missing:
        raise ValueError(f"missing backend endpoints for roles: {', '.join(missing)}")
    limits = {role: ep.max_in_flight for role, ep in backends.items()}
    return Gateway(
        planner=HttpPlanner(backends["planner"]),
        editor=HttpEditor(backends["editor"]),
        critic=HttpCritic(backends["critic"]),
        scorer=HttpScorer(backends["scorer"]),
        store=ArtifactStore(run_dir),
        percept=percept,
        on_call=on_call,
        max_in_flight=limits,
    )
