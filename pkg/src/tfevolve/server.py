"""HTTP session API: create, step, steer, and inspect sessions over JSON.

Steps run on a background thread pool and report through a polled progress
endpoint; everything else is synchronous. One step at a time per session;
state-mutating calls made while a step is running return a conflict.
"""

from __future__ import annotations

import base64
import binascii
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from starlette.exceptions import HTTPException as StarletteHTTPException

from .evaluate import (
    EvaluatorError,
    HeuristicJudge,
    Intent,
    MLLMConfig,
    MLLMJudge,
)
from .evolve import EvolutionConfig, EvolutionError
from .genome import (
    GenomeError,
    bake_lut,
    from_dict as genome_from_dict,
    to_dict as genome_to_dict,
)
from .render import (
    NoFeatureError,
    RenderError,
    RenderSettings,
    camera_from_orbit,
    image_from_png_bytes,
    pick_feature,
    render,
    render_feature_isolation,
)
from .session import (
    Session,
    SessionError,
    apply_intent,
    best_genome,
    create_session,
    refine_feature,
    replace_genome,
    resume,
    rollback,
    step_generation,
)
from .tournament import swiss_rounds
from .volume import VolumeDataset, VolumeError, load_raw, make_synthetic

API_ERROR_CODES = ("bad_request", "not_found", "conflict", "judge_unavailable", "internal")
_CODE_STATUS = {
    "bad_request": 400,
    "not_found": 404,
    "conflict": 409,
    "judge_unavailable": 503,
    "internal": 500,
}
MAX_RENDER_SIZE = 1024


class ApiError(Exception):
    def __init__(self, code: str, message: str, detail=None):
        if code not in API_ERROR_CODES:
            raise ValueError(f"unknown api error code {code!r}")
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail


class SessionHandle:
    """One live session plus its step-execution state."""

    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()
        self.busy = False
        self.error: str | None = None
        self.progress = {
            "generation": session.generation_index,
            "phase": "idle",
            "matches_done": 0,
            "matches_total": 0,
        }
        self.isolation_cache: dict[tuple[str, int], bytes] = {}


def build_judge(judge_config: dict | None):
    """Returns (judge, error). A broken config yields (None, reason)."""
    config = judge_config or {"kind": "heuristic"}
    kind = config.get("kind", "heuristic")
    if kind == "heuristic":
        return HeuristicJudge(), None
    if kind == "mllm":
        try:
            mllm = MLLMConfig(
                url=config.get("url", ""),
                model=config.get("model", ""),
                api_key=config.get("api_key", ""),
            )
            return MLLMJudge(mllm), None
        except EvaluatorError as exc:
            return None, str(exc)
    return None, f"unknown judge kind {kind!r}"


def _resolve_volume(value) -> tuple[VolumeDataset, dict]:
    if isinstance(value, str):
        path = Path(value)
        if not path.exists():
            raise ApiError("bad_request", f"volume path {value!r} not found")
        try:
            return load_raw(path), {"kind": "raw", "descriptor_path": str(path)}
        except VolumeError as exc:
            raise ApiError("bad_request", f"bad volume descriptor: {exc}")
    if isinstance(value, dict):
        kind = value.get("kind")
        try:
            if kind == "synthetic":
                volume = make_synthetic(value["name"], tuple(value["dims"]))
                return volume, None  # recipe is re-derived from the dataset
            if kind == "raw":
                return _resolve_volume(value["descriptor_path"])
        except (KeyError, TypeError, VolumeError) as exc:
            raise ApiError("bad_request", f"bad volume spec: {exc}")
    raise ApiError(
        "bad_request",
        "volume must be a descriptor path or {kind: synthetic, name, dims}",
    )


def _intent_from_body(body: dict) -> Intent:
    kind = body.get("kind")
    try:
        if kind == "text":
            return Intent.from_text(body.get("text") or "")
        if kind == "image":
            encoded = body.get("image_base64") or ""
            return Intent.from_image(image_from_png_bytes(base64.b64decode(encoded)))
    except (EvaluatorError, RenderError, binascii.Error, ValueError) as exc:
        raise ApiError("bad_request", f"bad intent: {exc}")
    raise ApiError("bad_request", "intent kind must be text or image")


def _require_not_busy(handle: SessionHandle, action: str) -> None:
    if handle.busy:
        raise ApiError("conflict", f"cannot {action} while a step is in progress")


def create_app(
    data_dir: str | Path,
    *,
    judge=None,
    judge_config: dict | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    data_root = Path(data_dir)
    data_root.mkdir(parents=True, exist_ok=True)
    if judge is None:
        judge, judge_error = build_judge(judge_config)
    else:
        judge_error = None

    app = FastAPI(title="tfevolve", version="0.1.0")
    # the web client may be served from another origin (configurable base url)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.data_dir = data_root
    app.state.judge = judge
    app.state.judge_error = judge_error
    app.state.handles: dict[str, SessionHandle] = {}
    app.state.handles_lock = threading.Lock()
    app.state.executor = ThreadPoolExecutor(max_workers=4)

    for existing in sorted(data_root.glob("*/session.json")):
        try:
            session = resume(existing.parent)
        except SessionError:
            continue
        app.state.handles[session.id] = SessionHandle(session)

    def _handle(session_id: str) -> SessionHandle:
        with app.state.handles_lock:
            found = app.state.handles.get(session_id)
            if found is not None:
                return found
            candidate = data_root / session_id
            if (candidate / "session.json").exists():
                found = SessionHandle(resume(candidate))
                app.state.handles[session_id] = found
                return found
        raise ApiError("not_found", f"no session {session_id!r}")

    def _register(session: Session) -> None:
        with app.state.handles_lock:
            app.state.handles[session.id] = SessionHandle(session)

    def _judge():
        if app.state.judge is None:
            raise ApiError(
                "judge_unavailable", f"judge unavailable: {app.state.judge_error}"
            )
        return app.state.judge

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=_CODE_STATUS[exc.code],
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        # errors raised by the framework itself (unknown route, bad method)
        # must wear the same envelope as ours
        if exc.status_code == 404:
            code = "not_found"
        elif exc.status_code < 500:
            code = "bad_request"
        else:
            code = "internal"
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": code, "message": str(exc.detail), "detail": None},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={
                "code": "bad_request",
                "message": "invalid request body",
                "detail": exc.errors(),
            },
        )

    @app.exception_handler(Exception)
    async def _internal_error(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"code": "internal", "message": str(exc), "detail": None},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create(body: dict):
        if "volume" not in body:
            raise ApiError("bad_request", "volume is required")
        volume, source = _resolve_volume(body["volume"])
        try:
            config = EvolutionConfig.from_dict(body.get("config") or {})
        except (EvolutionError, TypeError) as exc:
            raise ApiError("bad_request", f"bad config: {exc}")
        camera = None
        camera_body = body.get("camera") or {}
        if camera_body:
            try:
                camera = camera_from_orbit(
                    volume,
                    yaw_deg=float(camera_body.get("yaw", 45.0)),
                    pitch_deg=float(camera_body.get("pitch", 30.0)),
                    dist=float(camera_body.get("dist", 1.6)),
                    vertical_fov=float(camera_body.get("fov", 40.0)),
                    projection=camera_body.get("projection", "perspective"),
                )
            except (RenderError, TypeError, ValueError) as exc:
                raise ApiError("bad_request", f"bad camera: {exc}")
        image_size = body.get("image_size") or [128, 128]
        gene_count = body.get("gene_count") or 5
        settings = None
        if body.get("shading") is not None:
            try:
                settings = RenderSettings(shading=body["shading"])
            except RenderError as exc:
                raise ApiError("bad_request", str(exc))
        session_id = uuid.uuid4().hex[:12]
        while (data_root / session_id).exists():
            session_id = uuid.uuid4().hex[:12]
        try:
            session = create_session(
                volume,
                config,
                camera,
                data_dir=data_root / session_id,
                settings=settings,
                image_size=tuple(int(v) for v in image_size),
                gene_count=int(gene_count),
                volume_source=source,
                session_id=session_id,
            )
        except (SessionError, GenomeError, RenderError, ValueError) as exc:
            raise ApiError("bad_request", str(exc))
        _register(session)
        return {"session_id": session.id}

    @app.get("/sessions/{session_id}")
    def summary(session_id: str):
        handle = _handle(session_id)
        session = handle.session
        return {
            "session_id": session.id,
            "stage": session.stage,
            "generation": session.generation_index,
            "stage_generation": session.stage_generation_index,
            "max_generations": session.config.max_generations,
            "intent": {"kind": session.intent.kind, "text": session.intent.text},
            "frozen_gene_indices": sorted(session.frozen_gene_indices),
            "population_size": len(session.population),
            "gene_count": session.gene_count,
            "image_size": list(session.image_size),
            "busy": handle.busy,
        }

    def _run_step(handle: SessionHandle, judge, count: int) -> None:
        session = handle.session
        try:
            for _ in range(count):
                n = len(session.population)
                per_round = n // 2
                total = swiss_rounds(n) * per_round
                generation = session.generation_index + 1
                handle.progress = {
                    "generation": generation,
                    "phase": "rendering",
                    "matches_done": 0,
                    "matches_total": total,
                }

                def on_round(done_rounds, total_rounds):
                    handle.progress = {
                        "generation": generation,
                        "phase": "tournament",
                        "matches_done": done_rounds * per_round,
                        "matches_total": total_rounds * per_round,
                    }

                step_generation(session, judge, progress=on_round)
                handle.progress = {
                    "generation": generation,
                    "phase": "selection",
                    "matches_done": total,
                    "matches_total": total,
                }
        except Exception as exc:
            handle.error = str(exc)
        finally:
            with handle.lock:
                handle.busy = False
                handle.progress = {
                    "generation": session.generation_index,
                    "phase": "idle",
                    "matches_done": 0,
                    "matches_total": 0,
                }

    @app.post("/sessions/{session_id}/step", status_code=202)
    def step(session_id: str, body: dict | None = None):
        handle = _handle(session_id)
        judge = _judge()
        count = (body or {}).get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ApiError("bad_request", "count must be a positive integer")
        session = handle.session
        with handle.lock:
            if handle.busy:
                raise ApiError("conflict", "a step is already in progress")
            if session.stage_generation_index >= session.config.max_generations:
                raise ApiError(
                    "conflict",
                    f"stage {session.stage!r} exhausted its generation budget; "
                    "apply an intent or refine a feature to continue",
                )
            handle.busy = True
            handle.error = None
        app.state.executor.submit(_run_step, handle, judge, count)
        return {"status": "accepted", "count": count}

    @app.get("/sessions/{session_id}/progress")
    def progress(session_id: str):
        handle = _handle(session_id)
        return {**handle.progress, "busy": handle.busy, "error": handle.error}

    @app.post("/sessions/{session_id}/intent")
    def intent(session_id: str, body: dict):
        handle = _handle(session_id)
        _require_not_busy(handle, "apply an intent")
        parsed = _intent_from_body(body)
        with handle.lock:
            try:
                apply_intent(handle.session, parsed)
            except SessionError as exc:
                raise ApiError("bad_request", str(exc))
        return {
            "stage": handle.session.stage,
            "intent": {"kind": parsed.kind, "text": parsed.text},
        }

    @app.post("/sessions/{session_id}/pick")
    def pick(session_id: str, body: dict):
        handle = _handle(session_id)
        session = handle.session
        try:
            x, y = int(body["x"]), int(body["y"])
        except (KeyError, TypeError, ValueError):
            raise ApiError("bad_request", "pick needs integer x and y")
        width, height = session.image_size
        try:
            gene_index = pick_feature(
                session.volume,
                best_genome(session),
                session.camera,
                session.settings,
                (x, y),
                width,
                height,
            )
        except NoFeatureError:
            raise ApiError("not_found", "no_feature")
        except (RenderError, SessionError) as exc:
            raise ApiError("bad_request", str(exc))
        return {"gene_index": gene_index}

    @app.post("/sessions/{session_id}/refine")
    def refine(session_id: str, body: dict):
        handle = _handle(session_id)
        _require_not_busy(handle, "refine")
        if "gene_index" not in body:
            raise ApiError("bad_request", "gene_index is required")
        with handle.lock:
            try:
                gene_index = refine_feature(
                    handle.session,
                    gene_index=int(body["gene_index"]),
                    directive=str(body.get("directive") or ""),
                )
            except (SessionError, TypeError, ValueError) as exc:
                raise ApiError("bad_request", str(exc))
        session = handle.session
        return {
            "gene_index": gene_index,
            "stage": session.stage,
            "frozen_gene_indices": sorted(session.frozen_gene_indices),
        }

    def _entry_payload(session: Session, entry) -> dict:
        return {
            "genome_id": entry.genome_id,
            "rating": entry.rating,
            "url": f"/sessions/{session.id}/files/{entry.thumbnail}",
        }

    @app.get("/sessions/{session_id}/gallery")
    def gallery_view(session_id: str, k: int = 8):
        if k < 0:
            raise ApiError("bad_request", "k must be >= 0")
        session = _handle(session_id).session
        record = session.history[-1]
        return {
            "generation": record.generation_index,
            "stage": record.stage,
            "entries": [_entry_payload(session, e) for e in record.entries[:k]],
        }

    @app.get("/sessions/{session_id}/history")
    def history_view(session_id: str):
        session = _handle(session_id).session
        return {
            "records": [
                {
                    "generation_index": r.generation_index,
                    "stage": r.stage,
                    "entries": [_entry_payload(session, e) for e in r.entries],
                }
                for r in session.history
            ]
        }

    @app.post("/sessions/{session_id}/rollback")
    def rollback_session(session_id: str, body: dict):
        handle = _handle(session_id)
        _require_not_busy(handle, "roll back")
        if "generation" not in body:
            raise ApiError("bad_request", "generation is required")
        try:
            clone = rollback(handle.session, int(body["generation"]))
        except SessionError as exc:
            raise ApiError("not_found", str(exc))
        except (TypeError, ValueError):
            raise ApiError("bad_request", "generation must be an integer")
        _register(clone)
        return {"new_session_id": clone.id}

    @app.get("/sessions/{session_id}/files/{rel_path:path}")
    def files(session_id: str, rel_path: str):
        session = _handle(session_id).session
        base = session.data_dir.resolve()
        target = (base / rel_path).resolve()
        if not target.is_relative_to(base) or not target.is_file():
            raise ApiError("not_found", f"no file {rel_path!r}")
        return FileResponse(target)

    @app.get("/sessions/{session_id}/render")
    def render_view(
        session_id: str,
        genome: str | None = None,
        yaw: float = 45.0,
        pitch: float = 30.0,
        dist: float = 1.6,
        size: int = 0,
    ):
        session = _handle(session_id).session
        if genome is None:
            target = best_genome(session)
        else:
            try:
                target = session.genome_by_id(genome)
            except SessionError as exc:
                raise ApiError("not_found", str(exc))
        if size == 0:
            size = session.image_size[0]
        if not 1 <= size <= MAX_RENDER_SIZE:
            raise ApiError("bad_request", f"size must be in [1, {MAX_RENDER_SIZE}]")
        try:
            camera = camera_from_orbit(session.volume, yaw, pitch, dist)
            image = render(
                session.volume,
                bake_lut(target),
                camera,
                session.settings,
                size,
                size,
            )
        except RenderError as exc:
            raise ApiError("bad_request", str(exc))
        return Response(content=image.to_png_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/features")
    def features(session_id: str):
        session = _handle(session_id).session
        best = best_genome(session)
        return {
            "genome_id": best.id,
            "features": [
                {
                    "gene_index": i,
                    "frozen": i in session.frozen_gene_indices,
                    "url": f"/sessions/{session.id}/features/{i}.png",
                }
                for i in range(session.gene_count)
            ],
        }

    @app.get("/sessions/{session_id}/features/{gene_index}.png")
    def feature_image(session_id: str, gene_index: int):
        handle = _handle(session_id)
        session = handle.session
        if not 0 <= gene_index < session.gene_count:
            raise ApiError("not_found", f"no gene {gene_index}")
        best = best_genome(session)
        key = (best.id, gene_index)
        data = handle.isolation_cache.get(key)
        if data is None:
            width, height = session.image_size
            image = render_feature_isolation(
                session.volume,
                best,
                gene_index,
                session.camera,
                session.settings,
                width,
                height,
            )
            data = image.to_png_bytes()
            handle.isolation_cache[key] = data
        return Response(content=data, media_type="image/png")

    @app.get("/sessions/{session_id}/genome/{genome_id}")
    def genome_view(session_id: str, genome_id: str):
        session = _handle(session_id).session
        try:
            return genome_to_dict(session.genome_by_id(genome_id))
        except SessionError as exc:
            raise ApiError("not_found", str(exc))

    @app.put("/sessions/{session_id}/genome/{genome_id}")
    def genome_override(session_id: str, genome_id: str, body: dict):
        handle = _handle(session_id)
        _require_not_busy(handle, "override a genome")
        try:
            genome = genome_from_dict(body)
        except (GenomeError, KeyError, TypeError, ValueError) as exc:
            raise ApiError("bad_request", f"bad genome: {exc}")
        if genome.id != genome_id:
            raise ApiError("bad_request", "genome id must match the URL")
        with handle.lock:
            try:
                replace_genome(handle.session, genome)
            except SessionError as exc:
                if "not in the current population" in str(exc):
                    raise ApiError("not_found", str(exc))
                raise ApiError("bad_request", str(exc))
        return genome_to_dict(handle.session.genome_by_id(genome_id))

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(
    bind_address: str,
    data_dir: str | Path,
    judge_config: dict | None = None,
    static_dir: str | Path | None = None,
) -> None:
    """Run the API server until interrupted. ``bind_address`` is host:port."""
    host, _, port_text = bind_address.partition(":")
    app = create_app(data_dir, judge_config=judge_config, static_dir=static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port_text or "8765"))
