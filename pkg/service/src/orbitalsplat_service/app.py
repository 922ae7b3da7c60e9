"""FastAPI application implementing the guidance/metrics wire protocol.

Routes (JSON, images as base64 8-bit RGBA PNG):
  POST /v1/guidance  -> {"target_png_b64", "weight"}
  POST /v1/metrics   -> {"lpips", "clip_similarity"}
  GET  /health       -> {"status", "model"}

Error contract: 400 for schema or payload violations (including dimension
mismatches), 413 for oversized requests, 503 when the model backend is not
loaded. Stub mode answers deterministically with no model weights.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .stub import (ImagePayloadError, decode_png_b64, encode_png_b64,
                   stub_guidance_target, stub_metrics)

DEFAULT_MAX_REQUEST_BYTES = 32 * 1024 * 1024

GUIDANCE_FIELDS = {
    "rendered_png_b64": str,
    "reference_png_b64": str,
    "delta_elevation_deg": (int, float),
    "delta_azimuth_deg": (int, float),
    "delta_radius": (int, float),
    "step": int,
    "total_steps": int,
    "request_id": str,
}
METRICS_FIELDS = {"image_a_png_b64": str, "image_b_png_b64": str}


@dataclass
class ServiceConfig:
    mode: str = "stub"                      # stub | model
    checkpoint: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8090
    max_request_bytes: int = DEFAULT_MAX_REQUEST_BYTES

    def __post_init__(self):
        if self.mode not in ("stub", "model"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "model":
            if not self.checkpoint:
                raise ValueError("model mode requires a checkpoint path")
            if not Path(self.checkpoint).exists():
                raise ValueError(f"checkpoint not found: {self.checkpoint}")


class _BadRequest(Exception):
    def __init__(self, message: str):
        self.message = message


def _validate(body, fields: dict) -> dict:
    if not isinstance(body, dict):
        raise _BadRequest("request body must be a JSON object")
    out = {}
    for name, types in fields.items():
        if name not in body:
            raise _BadRequest(f"missing field {name!r}")
        value = body[name]
        if not isinstance(value, types) or isinstance(value, bool):
            raise _BadRequest(f"field {name!r} has wrong type")
        out[name] = value
    return out


def create_app(config: ServiceConfig,
               model_runner: Optional[Callable] = None) -> FastAPI:
    """Build the service app.

    In model mode, `model_runner(reference_rgba, d_el, d_az, d_r) -> rgba`
    performs the actual view synthesis; without one every model-mode request
    answers 503. Inference is serialized by a lock; the stub paths are not.
    """
    app = FastAPI(title="orbitalsplat guidance service")
    infer_lock = threading.Lock()
    model_name = "stub" if config.mode == "stub" else Path(config.checkpoint).name

    @app.middleware("http")
    async def cap_request_size(request: Request, call_next):
        size = request.headers.get("content-length")
        if size is not None and int(size) > config.max_request_bytes:
            return JSONResponse(status_code=413,
                                content={"error": "request too large"})
        return await call_next(request)

    @app.exception_handler(_BadRequest)
    async def bad_request_handler(_request, exc: _BadRequest):
        return JSONResponse(status_code=400, content={"error": exc.message})

    @app.exception_handler(ImagePayloadError)
    async def bad_image_handler(_request, exc: ImagePayloadError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    async def health():
        return {"status": "ok", "model": model_name}

    @app.post("/v1/guidance")
    async def guidance(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise _BadRequest("request body is not valid JSON") from None
        fields = _validate(body, GUIDANCE_FIELDS)
        rendered = decode_png_b64(fields["rendered_png_b64"])
        reference = decode_png_b64(fields["reference_png_b64"])
        if rendered.shape != reference.shape:
            raise _BadRequest(
                f"image dimensions differ: {rendered.shape[:2]} vs {reference.shape[:2]}")
        total = fields["total_steps"]
        if total < 1 or not 0 <= fields["step"] < total:
            raise _BadRequest("step must satisfy 0 <= step < total_steps")

        if config.mode == "stub":
            target = stub_guidance_target(reference, fields["delta_azimuth_deg"])
            weight = 1.0
        else:
            if model_runner is None:
                return JSONResponse(status_code=503,
                                    content={"error": "model not loaded"})
            with infer_lock:
                target = model_runner(reference,
                                      fields["delta_elevation_deg"],
                                      fields["delta_azimuth_deg"],
                                      fields["delta_radius"])
            # late steps weigh less: linear schedule from 1 down to 0.1
            weight = 1.0 - 0.9 * (fields["step"] / max(1, total - 1))
        return {"target_png_b64": encode_png_b64(target), "weight": weight}

    @app.post("/v1/metrics")
    async def metrics(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise _BadRequest("request body is not valid JSON") from None
        fields = _validate(body, METRICS_FIELDS)
        a = decode_png_b64(fields["image_a_png_b64"])
        b = decode_png_b64(fields["image_b_png_b64"])
        if a.shape != b.shape:
            raise _BadRequest(f"image dimensions differ: {a.shape[:2]} vs {b.shape[:2]}")
        if config.mode == "model" and model_runner is None:
            return JSONResponse(status_code=503, content={"error": "model not loaded"})
        lpips, clip = stub_metrics(a, b)
        return {"lpips": lpips, "clip_similarity": clip}

    return app
