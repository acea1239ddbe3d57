"""HTTP+JSON API serving the annotation UI.

Every mutating request carries the caller's last-seen ``revision``; a
stale token yields 409 so concurrent tabs cannot clobber each other.
Reads are snapshot-consistent at a revision.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .. import engine
from ..core import (
    BoxGeom,
    KeyFrameKind,
    SubjectTag,
    ValidationError,
    session_to_dict,
)
from ..engine import NotFoundError, PassStateError, UnresolvableRegionError
from . import scheduler
from .service import GatewayConfig, PipelineService
from .store import RevisionConflict, SessionStore, UnknownSession


class SubmitBody(BaseModel):
    frame_source: str
    fps: float = 60.0


class RevisionBody(BaseModel):
    revision: int


class KeyframeBody(RevisionBody):
    kind: str
    frame: int
    remove: bool = False


class TagBody(RevisionBody):
    tag: str


class ManualBoxBody(RevisionBody):
    frame: int
    box: dict


def session_view(session) -> dict:
    doc = session_to_dict(session)
    doc["chain_summaries"] = [
        {
            "id": c.id,
            "subject_tag": c.subject_tag.value,
            "start_frame": c.start_frame,
            "end_frame": c.end_frame,
            "observations": len(c.observations),
        }
        for c in session.chains
    ]
    return doc


def create_app(store: SessionStore, config: GatewayConfig | None = None) -> FastAPI:
    config = config or GatewayConfig()
    service = PipelineService(store, config)
    registry = service.registry
    app = FastAPI(title="facedeid gateway")

    @app.exception_handler(RevisionConflict)
    async def _conflict(_req: Request, exc: RevisionConflict):
        return JSONResponse(
            {"error": "revision_conflict", "detail": str(exc),
             "current_revision": exc.current},
            status_code=409,
        )

    @app.exception_handler(UnknownSession)
    async def _unknown(_req: Request, exc: UnknownSession):
        return JSONResponse({"error": "not_found", "detail": str(exc)}, status_code=404)

    @app.exception_handler(NotFoundError)
    async def _notfound(_req: Request, exc: NotFoundError):
        return JSONResponse({"error": "not_found", "detail": str(exc)}, status_code=404)

    @app.exception_handler(UnresolvableRegionError)
    async def _unresolvable(_req: Request, exc: UnresolvableRegionError):
        return JSONResponse(
            {"error": "unresolvable_region", "detail": str(exc),
             "regions": [r.to_dict() for r in exc.regions]},
            status_code=422,
        )

    @app.exception_handler(PassStateError)
    async def _passstate(_req: Request, exc: PassStateError):
        return JSONResponse({"error": "pass_state", "detail": str(exc)}, status_code=422)

    @app.exception_handler(ValidationError)
    async def _validation(_req: Request, exc: ValidationError):
        return JSONResponse({"error": "validation", "detail": str(exc)}, status_code=422)

    # -- sessions --------------------------------------------------------------

    @app.get("/sessions")
    def list_sessions():
        out = []
        for sid in store.list_session_ids():
            s = registry.owner(sid).snapshot()
            out.append({
                "session_id": sid,
                "revision": s.revision,
                "pass_state": s.pass_state.to_dict(),
                "frame_count": s.manifest.frame_count,
            })
        return {"sessions": out}

    @app.post("/sessions", status_code=201)
    def submit_session(body: SubmitBody):
        session = store.create_session(body.frame_source, fps=body.fps)
        registry.adopt(session)
        sid = session.manifest.session_id
        store.mutate_jobs(lambda st: scheduler.submit_job(st, sid, "detect"))
        return {"session_id": sid, "revision": session.revision}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return session_view(registry.owner(sid).snapshot())

    @app.get("/sessions/{sid}/frames/{n}")
    def get_frame(sid: str, n: int):
        session = registry.owner(sid).snapshot()
        if not (0 <= n < session.manifest.frame_count):
            raise NotFoundError(f"frame {n} outside [0, {session.manifest.frame_count})")
        path = session.manifest.frame_path(n)
        if not path.is_file():
            raise NotFoundError(f"frame file missing: {path}")
        return FileResponse(path, media_type="image/png")

    # -- keyframes / pass 1 ------------------------------------------------------

    @app.get("/sessions/{sid}/keyframes")
    def get_keyframes(sid: str):
        s = registry.owner(sid).snapshot()
        return {"revision": s.revision, "keyframes": [k.to_dict() for k in s.keyframes]}

    @app.post("/sessions/{sid}/keyframes")
    def post_keyframe(sid: str, body: KeyframeBody):
        kind = KeyFrameKind(body.kind)
        op = engine.unmark_presence if body.remove else engine.mark_presence
        s = registry.owner(sid).mutate(
            lambda s: op(s, kind, body.frame), expected_revision=body.revision)
        return {"revision": s.revision, "keyframes": [k.to_dict() for k in s.keyframes]}

    # -- chains / pass 2 -----------------------------------------------------------

    @app.get("/sessions/{sid}/chains")
    def get_chains(sid: str):
        s = registry.owner(sid).snapshot()
        return {
            "revision": s.revision,
            "chains": [c.to_dict() for c in s.chains],
            "summaries": session_view(s)["chain_summaries"],
        }

    @app.post("/sessions/{sid}/chains/{cid}/tag")
    def tag_chain(sid: str, cid: str, body: TagBody):
        tag = SubjectTag(body.tag)
        s = registry.owner(sid).mutate(
            lambda s: engine.tag_chain(s, cid, tag), expected_revision=body.revision)
        return {"revision": s.revision, "chain": s.chain_by_id(cid).to_dict()}

    # -- manual boxes / pass 3 -------------------------------------------------------

    @app.post("/sessions/{sid}/boxes")
    def add_box(sid: str, body: ManualBoxBody):
        box = BoxGeom.from_dict(body.box)
        s = registry.owner(sid).mutate(
            lambda s: engine.add_manual_box(s, body.frame, box),
            expected_revision=body.revision)
        return {"revision": s.revision,
                "manual_boxes": [o.to_dict() for o in s.manual_boxes]}

    # -- pass control ------------------------------------------------------------------

    @app.post("/sessions/{sid}/passes/{k}/complete")
    def complete_pass(sid: str, k: int, body: RevisionBody):
        owner = registry.owner(sid)

        def apply(s):
            s = engine.complete_pass(s, k)
            if k == 1:
                s = engine.build_chains(s, config.chain_config())
            return s

        s = owner.mutate(apply, expected_revision=body.revision)
        return {"revision": s.revision, "pass_state": s.pass_state.to_dict(),
                "regions": [r.to_dict() for r in s.regions]}

    @app.post("/sessions/{sid}/passes/{k}/reopen")
    def reopen_pass(sid: str, k: int, body: RevisionBody):
        s = registry.owner(sid).mutate(
            lambda s: engine.reopen_pass(s, k), expected_revision=body.revision)
        return {"revision": s.revision, "pass_state": s.pass_state.to_dict()}

    @app.post("/sessions/{sid}/passes/4/run")
    def run_pass4(sid: str, body: RevisionBody):
        owner = registry.owner(sid)
        report_holder: dict = {}

        def apply(s):
            updated, report = engine.run_interpolation_pass(s)
            report_holder["coverage"] = report
            return updated

        s = owner.mutate(apply, expected_revision=body.revision)
        return {"revision": s.revision, "pass_state": s.pass_state.to_dict(),
                "coverage": report_holder["coverage"]}

    @app.get("/sessions/{sid}/coverage")
    def get_coverage(sid: str):
        s = registry.owner(sid).snapshot()
        return {"revision": s.revision, "coverage": engine.coverage_report(s)}

    # -- jobs ----------------------------------------------------------------------------

    @app.get("/sessions/{sid}/jobs")
    def get_jobs(sid: str):
        registry.owner(sid)  # 404 for unknown sessions
        state = store.load_jobs()
        return {"jobs": [j.to_dict() for j in state.session_jobs(sid)]}

    return app


def serve(store_root: str, host: str = "127.0.0.1", port: int = 8754,
          config: GatewayConfig | None = None,
          frontend_dist: Optional[str] = None) -> None:
    import uvicorn

    store = SessionStore(store_root)
    store.recover_jobs()
    app = create_app(store, config)
    if frontend_dist and Path(frontend_dist).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend_dist, html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")
