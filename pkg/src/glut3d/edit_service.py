"""HTTP editing service: upload an image + model, nudge colors, watch a live
preview, undo, blend styles, export.

State model: each session owns an immutable base model, the current model
(every edit produces a new model object), an undo journal, and a revision
counter that increments on every mutation (edit with effect, undo, blend).
A zero-strength or zero-residual edit is journaled but does not change the
model, so the revision — and therefore the preview bytes — stay identical.

Previews are rendered from an area-averaged downscale of the upload capped
at PREVIEW_MAX_EDGE on the long side, and cached per revision. All mutation
endpoints serialize on a per-session lock; readers snapshot (revision, model)
under the same lock, so concurrent edits never tear a response.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel, Field

from . import cglut as cg
from . import editing as ed
from .glut_core import (
    GlutModel,
    ModelFormatError,
    apply_to_image,
    bake_to_cube,
    evaluate,
    serialize,
)
from .lut_io import ImageIOError, decode_image_bytes, encode_png_bytes, write_cube

PREVIEW_MAX_EDGE = 1024
MAX_UPLOAD_BYTES = 64 * 1024 * 1024
MAX_PIXELS = 40_000_000
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass
class Session:
    sid: str
    base_model: GlutModel
    model: GlutModel
    source: np.ndarray                       # preview-resolution float RGB
    conditional: cg.CglutModel | None = None
    journal: list[ed.EditRecord] = field(default_factory=list)
    revision: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    _preview: tuple[int, bytes] | None = None

    def preview_png(self) -> bytes:
        with self.lock:
            rev, model = self.revision, self.model
            cached = self._preview
        if cached and cached[0] == rev:
            return cached[1]
        png = encode_png_bytes(apply_to_image(model, self.source))
        with self.lock:
            # a later revision may have rendered meanwhile; keep the newest
            if self._preview is None or self._preview[0] <= rev:
                self._preview = (rev, png)
        return png


class EditRequest(BaseModel):
    c_in: list[float] = Field(min_length=3, max_length=3)
    c_out: list[float] = Field(min_length=3, max_length=3)
    k: int = Field(default=4, ge=1)
    s: float = Field(default=1.0, ge=0.0, le=1.0)


class BlendRequest(BaseModel):
    l1: int = Field(ge=0)
    l2: int = Field(ge=0)
    alpha: float = Field(ge=0.0, le=1.0)


def downscale_area(img: np.ndarray, max_edge: int = PREVIEW_MAX_EDGE) -> np.ndarray:
    """Area-average downscale keeping the long side <= max_edge."""
    import cv2

    h, w = img.shape[:2]
    edge = max(h, w)
    if edge <= max_edge:
        return img
    scale = max_edge / edge
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    return cv2.resize(img, (nw, nh), interpolation=cv2.INTER_AREA)


def create_app() -> FastAPI:
    app = FastAPI(title="glut3d edit service")
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=r"https?://(localhost|127\.0\.0\.1)(:\d+)?",
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    def get_session(sid: str) -> Session:
        sess = sessions.get(sid)
        if sess is None:
            raise HTTPException(404, f"no session {sid}")
        return sess

    def preview_url(sess: Session) -> str:
        return f"/sessions/{sess.sid}/preview.png?r={sess.revision}"

    @app.post("/sessions", status_code=201)
    async def create_session(image: UploadFile = File(...),
                             model: UploadFile = File(...),
                             style: int | None = Form(default=None)):
        img_bytes = await image.read()
        model_bytes = await model.read()
        if len(img_bytes) > MAX_UPLOAD_BYTES or len(model_bytes) > MAX_UPLOAD_BYTES:
            raise HTTPException(413, "upload too large")
        if not img_bytes.startswith(PNG_MAGIC):
            raise HTTPException(415, "image must be a PNG")
        try:
            img = decode_image_bytes(img_bytes, image.filename or "upload")
        except ImageIOError as exc:
            raise HTTPException(415, str(exc)) from None
        if img.shape[0] * img.shape[1] > MAX_PIXELS:
            raise HTTPException(413, "image has too many pixels")
        try:
            loaded = cg.load_any_model(model_bytes)
        except ModelFormatError as exc:
            raise HTTPException(400, f"bad model file: {exc}") from None

        conditional = None
        if isinstance(loaded, GlutModel):
            if style is not None:
                raise HTTPException(400, "style index given for a single-style model")
            current = loaded
        else:
            conditional = loaded
            idx = 0 if style is None else style
            if not 0 <= idx < conditional.l:
                raise HTTPException(400, f"style {idx} out of range "
                                         f"[0, {conditional.l})")
            current = cg.materialize_style(conditional, idx)

        sess = Session(sid=uuid.uuid4().hex, base_model=current, model=current,
                       source=downscale_area(img), conditional=conditional)
        sessions[sess.sid] = sess
        return {
            "session_id": sess.sid,
            "revision": sess.revision,
            "preview_url": preview_url(sess),
            "preview_width": int(sess.source.shape[1]),
            "preview_height": int(sess.source.shape[0]),
            "styles": conditional.l if conditional else None,
            "gaussians": current.n,
        }

    @app.get("/sessions/{sid}/preview.png")
    def preview(sid: str, r: int | None = None):
        sess = get_session(sid)
        return Response(content=sess.preview_png(), media_type="image/png")

    @app.post("/sessions/{sid}/edit")
    def edit(sid: str, req: EditRequest):
        sess = get_session(sid)
        try:
            con = ed.EditConstraint(tuple(req.c_in), tuple(req.c_out),
                                    k=req.k, strength=req.s)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        with sess.lock:
            before = ed.residual(sess.model, con.c_in, con.c_out)
            try:
                edited, record = ed.apply_edit(sess.model, con)
            except ed.DegenerateEditError as exc:
                raise HTTPException(409, str(exc)) from None
            sess.journal.append(record)
            if np.any(record.deltas):
                sess.model = edited
                sess.revision += 1
            after = ed.residual(sess.model, con.c_in, con.c_out)
            return {
                "revision": sess.revision,
                "m": record.m,
                "touched": record.touched.tolist(),
                "residual_before": before.tolist(),
                "residual_after": after.tolist(),
                "preview_url": preview_url(sess),
            }

    @app.post("/sessions/{sid}/undo")
    def undo_last(sid: str):
        sess = get_session(sid)
        with sess.lock:
            if not sess.journal:
                raise HTTPException(409, "nothing to undo")
            record = sess.journal.pop()
            if np.any(record.deltas):
                sess.model = ed.undo(sess.model, record)
            sess.revision += 1
            return {
                "revision": sess.revision,
                "journal_length": len(sess.journal),
                "preview_url": preview_url(sess),
            }

    @app.post("/sessions/{sid}/blend")
    def blend_styles(sid: str, req: BlendRequest):
        sess = get_session(sid)
        if sess.conditional is None:
            raise HTTPException(422, "session has a single-style model; "
                                     "blending needs a conditional one")
        try:
            blended = cg.blend(sess.conditional, req.l1, req.l2, req.alpha)
        except (IndexError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        with sess.lock:
            sess.base_model = blended
            sess.model = blended
            sess.journal.clear()
            sess.revision += 1
            return {
                "revision": sess.revision,
                "journal_length": 0,
                "preview_url": preview_url(sess),
            }

    @app.get("/sessions/{sid}/pixel")
    def pixel(sid: str, x: int, y: int):
        sess = get_session(sid)
        h, w = sess.source.shape[:2]
        if not (0 <= x < w and 0 <= y < h):
            raise HTTPException(422, f"pixel ({x}, {y}) outside {w}x{h} preview")
        with sess.lock:
            model = sess.model
        src = sess.source[y, x]
        return {
            "source": src.tolist(),
            "current": evaluate(model, src).tolist(),
        }

    @app.get("/sessions/{sid}/journal")
    def journal(sid: str):
        sess = get_session(sid)
        with sess.lock:
            rows = [
                {
                    "c_in": list(r.constraint.c_in),
                    "c_out": list(r.constraint.c_out),
                    "k": r.constraint.k,
                    "s": r.constraint.strength,
                    "m": r.m,
                    "touched": r.touched.tolist(),
                    "deltas": r.deltas.tolist(),
                }
                for r in sess.journal
            ]
            return {"revision": sess.revision, "records": rows}

    @app.get("/sessions/{sid}/export.cube")
    def export_cube(sid: str, size: int = 33):
        sess = get_session(sid)
        if not 2 <= size <= 256:
            raise HTTPException(422, "size must be in [2, 256]")
        with sess.lock:
            model = sess.model
        text = write_cube(bake_to_cube(model, size, title="glut3d export"))
        return Response(
            content=text, media_type="text/plain",
            headers={"Content-Disposition": 'attachment; filename="export.cube"'})

    @app.get("/sessions/{sid}/export.model")
    def export_model(sid: str):
        sess = get_session(sid)
        with sess.lock:
            model = sess.model
        return Response(
            content=serialize(model), media_type="application/octet-stream",
            headers={"Content-Disposition": 'attachment; filename="model.glut"'})

    return app
