"""Session-based matting service for the interactive click UI.

Control flow is JSON; rasters travel as PNG bodies.  Endpoints:

    POST   /sessions                  upload image (PNG body or multipart)
    POST   /sessions/{id}/clicks      append a click, returns the new matte
    DELETE /sessions/{id}/clicks/last undo the last click and recompute
    GET    /sessions/{id}/matte       latest matte PNG
    GET    /sessions/{id}             session state as JSON
    GET    /healthz                   liveness + version

Model parameters are immutable after load; each session's state is guarded
by its own lock, so concurrent sessions never share mutable state.
"""

from __future__ import annotations

import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from PIL import Image as PILImage

from . import __version__
from .errors import GuidanceError, ResolutionError
from .guidance import ClickSet, encode_guidance
from .model.network import MattingNetwork, predict_alpha

MAX_SIDE = 2048


@dataclass
class Session:
    id: str
    image: np.ndarray                       # HxWx3 float in [0, 1]
    clicks: list[tuple[int, int, str]] = field(default_factory=list)
    matte_png: bytes | None = None
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def _png_to_image(data: bytes) -> np.ndarray:
    try:
        img = PILImage.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"could not decode image: {exc}")
    return np.asarray(img, dtype=np.float64) / 255.0


def _alpha_to_png(alpha: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.round(alpha * 255.0).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def create_app(model: MattingNetwork, device: str = "cpu",
               max_side: int = MAX_SIDE, ui_dir: str | None = None,
               click_radius: int | None = None) -> FastAPI:
    app = FastAPI(title="mattekit", version=__version__)
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def compute_matte(session: Session) -> bytes:
        positives = [(x, y) for x, y, s in session.clicks if s == "positive"]
        negatives = [(x, y) for x, y, s in session.clicks if s == "negative"]
        h, w = session.image.shape[:2]
        mode = model.cfg.guidance_mode
        if mode == "click":
            guide = encode_guidance("click", ClickSet(positives, negatives), h, w,
                                    click_radius=click_radius)
        else:
            guide = encode_guidance("none", None, h, w)
        try:
            alpha = predict_alpha(model, session.image, guide, device=device)
        except ResolutionError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _alpha_to_png(alpha)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__,
                "guidance_mode": model.cfg.guidance_mode}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                raise HTTPException(status_code=400, detail="missing multipart field 'image'")
            data = await upload.read()
        else:
            data = await request.body()
        if not data:
            raise HTTPException(status_code=400, detail="empty request body; send a PNG image")
        image = _png_to_image(data)
        h, w = image.shape[:2]
        if max(h, w) > max_side:
            raise HTTPException(status_code=413,
                                detail=f"image side {max(h, w)} exceeds limit {max_side}")
        session = Session(id=uuid.uuid4().hex, image=image)
        if model.cfg.guidance_mode != "click":
            # single-shot modes have nothing to wait for
            session.matte_png = compute_matte(session)
        with registry_lock:
            sessions[session.id] = session
        return {"id": session.id, "width": w, "height": h}

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {
                "id": session.id,
                "width": session.image.shape[1],
                "height": session.image.shape[0],
                "clicks": [{"x": x, "y": y, "sign": s} for x, y, s in session.clicks],
                "has_matte": session.matte_png is not None,
            }

    @app.post("/sessions/{session_id}/clicks")
    async def add_click(session_id: str, request: Request):
        session = get_session(session_id)
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        for name in ("x", "y", "sign"):
            if name not in payload:
                raise HTTPException(status_code=400, detail=f"missing field '{name}'")
        if not isinstance(payload["x"], int) or not isinstance(payload["y"], int):
            raise HTTPException(status_code=400, detail="fields 'x' and 'y' must be integers")
        if payload["sign"] not in ("positive", "negative"):
            raise HTTPException(status_code=400,
                                detail="field 'sign' must be 'positive' or 'negative'")
        x, y, sign = payload["x"], payload["y"], payload["sign"]
        h, w = session.image.shape[:2]
        if not (0 <= x < w and 0 <= y < h):
            raise HTTPException(status_code=400,
                                detail=f"click ({x}, {y}) outside {w}x{h} image")
        t0 = time.perf_counter()
        with session.lock:
            session.clicks.append((x, y, sign))
            try:
                session.matte_png = compute_matte(session)
            except GuidanceError as exc:
                session.clicks.pop()
                raise HTTPException(status_code=400, detail=str(exc))
            matte = session.matte_png
            n_clicks = len(session.clicks)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        return Response(content=matte, media_type="image/png", headers={
            "X-Latency-Ms": f"{latency_ms:.2f}",
            "X-Click-Count": str(n_clicks),
        })

    @app.delete("/sessions/{session_id}/clicks/last")
    def undo_click(session_id: str):
        session = get_session(session_id)
        with session.lock:
            if not session.clicks:
                raise HTTPException(status_code=404, detail="no clicks to undo")
            session.clicks.pop()
            if session.clicks or model.cfg.guidance_mode != "click":
                session.matte_png = compute_matte(session)
                return Response(content=session.matte_png, media_type="image/png",
                                headers={"X-Click-Count": str(len(session.clicks))})
            session.matte_png = None
        return Response(status_code=204, headers={"X-Click-Count": "0"})

    @app.get("/sessions/{session_id}/matte")
    def get_matte(session_id: str):
        session = get_session(session_id)
        with session.lock:
            if session.matte_png is None:
                raise HTTPException(status_code=404, detail="no matte computed yet")
            return Response(content=session.matte_png, media_type="image/png")

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    if ui_dir:
        import os

        from fastapi.staticfiles import StaticFiles
        if os.path.isdir(ui_dir):
            app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
