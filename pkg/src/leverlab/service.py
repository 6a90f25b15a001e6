"""HTTP service: run browsing, report retrieval, and the 2AFC endpoints.

Read endpoints are side-effect-free; only POST /judge mutates state, and it
appends through the judged run's single ledger writer. Rater-facing payloads
never carry the edited-side flag or candidate metadata; pair images are
served behind opaque per-assignment URLs so even content hashes stay hidden.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel

from .judging import (
    Choice,
    DuplicateJudgement,
    JudgementBook,
    NoJudgements,
    UnknownAssignment,
    aggregate_judgements,
    build_schedule,
)
from .ledger import LedgerWriter, MissingHeader, load_run, open_run_for_append
from .report import build_report
from .runview import CandidateView, RunView, build_view


def bundle_payload(bundle) -> dict:
    return {
        "family_table": [row.to_payload() for row in bundle.family_table],
        "city_table": [row.to_payload() for row in bundle.city_table],
        "concept_table": [row.to_payload() for row in bundle.concept_table],
        "distribution": {str(k): v for k, v in bundle.distribution.items()},
        "sweep_series": {
            key: [
                {"cutoff": p.cutoff, "group": p.group_key,
                 "shortlisted_total": p.shortlisted_total,
                 "scene_count": p.scene_count, "mean_per_scene": p.mean_per_scene}
                for p in points
            ]
            for key, points in bundle.sweep_series.items()
        },
        "taxonomy": bundle.taxonomy,
        "rejected_total": bundle.rejected_total,
        "scatter": [
            {"scene_id": s, "baseline_score": b, "valid_count": v}
            for s, b, v in bundle.scatter
        ],
        "spearman": (
            {"rho": bundle.spearman_rho, "p": bundle.spearman_p}
            if bundle.spearman_rho is not None else None),
        "qualitative_manifest": bundle.qualitative_manifest,
        "shortlisted_total": bundle.shortlisted_total,
        "scene_count": bundle.scene_count,
        "planner_failures": bundle.planner_failures,
        "complete": bundle.complete,
        "gaps": bundle.gaps,
    }


def _final_verdict(candidate: CandidateView) -> dict | None:
    verdicts = [a["verdict"] for a in candidate.attempts if a.get("verdict")]
    return verdicts[-1] if verdicts else None


def _gallery_item(view: RunView, candidate: CandidateView) -> dict:
    scene = view.scenes[candidate.scene_id]
    verdict = _final_verdict(candidate)
    edited_ref = (candidate.retained or {}).get("edited_image_ref")
    if edited_ref is None:
        realised = [a for a in candidate.attempts if a.get("edited_image_ref")]
        edited_ref = realised[-1]["edited_image_ref"] if realised else None
    return {
        "candidate_id": candidate.candidate_id,
        "scene_id": candidate.scene_id,
        "city": scene.city,
        "concept": candidate.concept_id,
        "family": candidate.family,
        "scene_support": candidate.payload.get("scene_support", ""),
        "direction": candidate.payload.get("intervention_direction", ""),
        "status": candidate.status,
        "verdict": verdict,
        "failure_modes": candidate.failed_modes("final_attempt"),
        "delta_aux": candidate.delta_aux,
        "original_url": _image_url(view.run_id, scene.image_ref),
        "edited_url": _image_url(view.run_id, edited_ref),
        "attempts": len(candidate.attempts),
    }


def _image_url(run_id: str, ref: str | None) -> str | None:
    if ref is None:
        return None
    return f"/runs/{run_id}/images/{Path(ref).name}"


class JudgementIn(BaseModel):
    assignment_id: str
    choice: str
    latency_ms: int = 0
    rater_tag: str = ""


class ServiceState:
    """Loaded runs plus the judgement book for the judged run."""

    def __init__(self, runs_root: str | Path, judge_run_id: str | None = None,
                 ui_dir: str | Path | None = None) -> None:
        self.runs_root = Path(runs_root)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self._views: dict[str, RunView] = {}
        self.judge_run_id = judge_run_id
        self.book: JudgementBook | None = None
        self._writer: LedgerWriter | None = None
        self._lock: Path | None = None

    def run_ids(self) -> list[str]:
        if not self.runs_root.is_dir():
            return []
        return sorted(
            p.name for p in self.runs_root.iterdir()
            if (p / "ledger.jsonl").is_file())

    def view(self, run_id: str, refresh: bool = False) -> RunView:
        if refresh or run_id not in self._views:
            run_dir = self.runs_root / run_id
            if not run_dir.is_dir():
                raise HTTPException(404, f"unknown run: {run_id}")
            try:
                snapshot = load_run(run_dir)
            except MissingHeader as exc:
                raise HTTPException(404, str(exc)) from exc
            self._views[run_id] = build_view(snapshot)
        return self._views[run_id]

    def open_judgements(self) -> JudgementBook:
        if self.book is not None:
            return self.book
        run_ids = self.run_ids()
        run_id = self.judge_run_id or (run_ids[0] if len(run_ids) == 1 else None)
        if run_id is None:
            raise HTTPException(409, "no judged run configured and multiple runs present")
        view = self.view(run_id)
        config = view.config
        candidate_ids = sorted(c.candidate_id for c in view.valid_candidates())
        schedule = build_schedule(candidate_ids, config.raters_per_pair,
                                  config.master_seed)
        # One writing process per run directory: the judgement writer owns
        # the lock for as long as the service holds the book open.
        from .runner import RunLocked, _acquire_lock

        try:
            self._lock = _acquire_lock(self.runs_root / run_id)
        except RunLocked as exc:
            raise HTTPException(409, str(exc)) from exc
        self._writer = open_run_for_append(self.runs_root / run_id)
        self.judge_run_id = run_id
        self.book = JudgementBook(
            schedule, config.master_seed,
            append=self._writer.append,
            existing_judgements=view.judgements)
        return self.book

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None
        if self._lock is not None:
            self._lock.unlink(missing_ok=True)
            self._lock = None


def create_app(runs_root: str | Path, judge_run_id: str | None = None,
               ui_dir: str | Path | None = None) -> FastAPI:
    from contextlib import asynccontextmanager

    state = ServiceState(runs_root, judge_run_id, ui_dir)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        state.close()

    app = FastAPI(title="leverlab service", lifespan=lifespan)
    app.state.leverlab = state

    @app.get("/runs")
    def list_runs() -> dict:
        return {"runs": state.run_ids()}

    @app.get("/runs/{run_id}/report")
    def run_report(run_id: str) -> dict:
        view = state.view(run_id, refresh=True)
        return bundle_payload(build_report(view))

    @app.get("/runs/{run_id}/edits")
    def run_edits(run_id: str,
                  family: str | None = None,
                  city: str | None = None,
                  status: str | None = None,
                  delta_sign: str | None = Query(None, pattern="^(positive|negative|zero)$"),
                  ) -> dict:
        view = state.view(run_id)
        items = []
        status_map = {"valid": "Accepted", "rejected": "RejectedAllAttempts",
                      "backend_failed": "BackendFailed"}
        for candidate in view.candidates():
            if family and candidate.family != family:
                continue
            if city and view.scenes[candidate.scene_id].city != city:
                continue
            if status and candidate.status != status_map.get(status, status):
                continue
            if delta_sign:
                delta = candidate.delta_aux
                if delta is None:
                    continue
                if delta_sign == "positive" and not delta > 0:
                    continue
                if delta_sign == "negative" and not delta < 0:
                    continue
                if delta_sign == "zero" and delta != 0:
                    continue
            items.append(_gallery_item(view, candidate))
        return {"items": items, "total": len(items)}

    @app.get("/runs/{run_id}/edits/{candidate_id}")
    def run_edit(run_id: str, candidate_id: str) -> dict:
        view = state.view(run_id)
        for candidate in view.candidates():
            if candidate.candidate_id == candidate_id:
                return _gallery_item(view, candidate)
        raise HTTPException(404, f"unknown candidate: {candidate_id}")

    @app.get("/runs/{run_id}/images/{name}")
    def run_image(run_id: str, name: str) -> FileResponse:
        if "/" in name or ".." in name:
            raise HTTPException(400, "bad image name")
        path = state.runs_root / run_id / "images" / name
        if not path.is_file():
            raise HTTPException(404, f"unknown image: {name}")
        return FileResponse(path, media_type="image/png")

    @app.get("/judge/next")
    def judge_next(session: str = Query(..., min_length=1)) -> dict:
        book = state.open_judgements()
        assignment = book.next_for_session(session)
        view = state.view(state.judge_run_id)
        if assignment is None:
            return {"done": True, "progress": book.progress(session),
                    "question": view.header.get("judge_question", "")}
        return {
            "done": False,
            "assignment_id": assignment.assignment_id,
            "left_url": f"/judge/assignments/{assignment.assignment_id}/left.png",
            "right_url": f"/judge/assignments/{assignment.assignment_id}/right.png",
            "progress": book.progress(session),
            "question": view.header.get("judge_question", ""),
        }

    @app.get("/judge/assignments/{assignment_id}/{side}.png")
    def judge_image(assignment_id: str, side: str) -> FileResponse:
        if side not in ("left", "right"):
            raise HTTPException(404, "unknown side")
        book = state.open_judgements()
        slot = book.slots.get(assignment_id)
        if slot is None:
            raise HTTPException(404, "unknown assignment")
        view = state.view(state.judge_run_id)
        candidate = next(
            (c for c in view.candidates() if c.candidate_id == slot.candidate_id), None)
        if candidate is None or candidate.retained is None:
            raise HTTPException(404, "assignment has no image pair")
        edited_on_left = slot.left_is_edited
        wants_edited = (side == "left") == edited_on_left
        ref = (candidate.retained["edited_image_ref"] if wants_edited
               else view.scenes[candidate.scene_id].image_ref)
        path = state.runs_root / state.judge_run_id / ref
        if not path.is_file():
            raise HTTPException(404, "image missing from artifact store")
        return FileResponse(path, media_type="image/png")

    @app.post("/judge")
    def judge(body: JudgementIn) -> dict:
        book = state.open_judgements()
        try:
            choice = Choice(body.choice)
        except ValueError:
            raise HTTPException(400, f"choice must be 'left' or 'right'") from None
        try:
            record = book.record(body.assignment_id, choice, body.latency_ms,
                                 body.rater_tag)
        except UnknownAssignment:
            raise HTTPException(400, "unknown or mismatched assignment token") from None
        except DuplicateJudgement:
            raise HTTPException(409, "assignment already judged") from None
        return {"stored": True, "assignment_id": record.assignment_id}

    @app.get("/judge/results")
    def judge_results() -> dict:
        book = state.open_judgements()
        view = state.view(state.judge_run_id, refresh=True)
        info = {
            c.candidate_id: {"family": c.family, "delta_aux": c.delta_aux}
            for c in view.valid_candidates()
        }
        try:
            aggregate = aggregate_judgements(view.judgements, info,
                                             view.config.confidence_z)
        except NoJudgements:
            return {"judgements": 0, "per_edit": [], "per_family": {},
                    "concordance": None}
        return {
            "judgements": len(view.judgements),
            "per_edit": [
                {
                    "candidate_id": row.candidate_id,
                    "judgements": row.judgements,
                    "chose_edited": row.chose_edited,
                    "win_rate": row.win_rate.to_payload(),
                    "delta_aux": row.delta_aux,
                }
                for row in aggregate.per_edit
            ],
            "per_family": {f: est.to_payload() for f, est in aggregate.per_family.items()},
            "concordance": aggregate.concordance,
            "concordant": aggregate.concordant,
            "comparisons": aggregate.comparisons,
            "undecided": aggregate.undecided,
        }

    @app.get("/ui/{path:path}")
    def ui(path: str) -> Response:
        if state.ui_dir is None:
            raise HTTPException(404, "no UI bundle configured")
        target = (state.ui_dir / (path or "index.html")).resolve()
        if not str(target).startswith(str(state.ui_dir.resolve())):
            raise HTTPException(400, "bad path")
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            raise HTTPException(404, path)
        media = {"html": "text/html", "js": "text/javascript",
                 "css": "text/css", "png": "image/png",
                 "map": "application/json"}.get(target.suffix.lstrip("."),
                                                "application/octet-stream")
        return FileResponse(target, media_type=media)

    return app
