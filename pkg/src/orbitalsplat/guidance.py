"""HTTP client for the view-guidance and learned-metrics service.

Wire protocol (JSON bodies, images as base64-encoded 8-bit RGBA PNG):

  POST /v1/guidance  {rendered_png_b64, reference_png_b64, delta_elevation_deg,
                      delta_azimuth_deg, delta_radius, step, total_steps,
                      request_id}             -> {target_png_b64, weight}
  POST /v1/metrics   {image_a_png_b64, image_b_png_b64} -> {lpips, clip_similarity}
  GET  /health       -> {status, model}

Transport failures are retried with exponential backoff (base 0.5 s, x2,
jitter); the request_id doubles as an idempotency key so retries are safe.
Protocol violations (bad schema, dimension mismatch) are never retried.
"""

from __future__ import annotations

import base64
import math
import random
import time
import uuid
from dataclasses import dataclass
from typing import Callable, Optional

from .geometry import RelativePose
from .imageops import ImageRGBA, decode_png, encode_png

BACKOFF_BASE_S = 0.5
BACKOFF_JITTER = 0.1


class TransportError(RuntimeError):
    """Could not reach the service (after exhausting retries)."""


class ProtocolError(RuntimeError):
    """The service answered, but outside the wire contract."""


@dataclass(frozen=True)
class ServiceEndpoint:
    base_url: str
    timeout: float = 30.0
    max_retries: int = 3
    auth_token: Optional[str] = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class RemoteMetrics:
    lpips: float
    clip_similarity: float

    def __post_init__(self):
        if not (math.isfinite(self.lpips) and self.lpips >= 0):
            raise ProtocolError(f"lpips out of contract: {self.lpips}")
        if not (math.isfinite(self.clip_similarity) and -1.0 <= self.clip_similarity <= 1.0):
            raise ProtocolError(f"clip_similarity out of contract: {self.clip_similarity}")


@dataclass
class GuidanceRequest:
    """One guidance query: the current render, the reference, and their pose offset."""

    rendered: ImageRGBA
    reference: ImageRGBA
    relative_pose: RelativePose
    step: int
    total_steps: int

    def __post_init__(self):
        if (self.rendered.width, self.rendered.height) != (self.reference.width, self.reference.height):
            raise ValueError("rendered and reference image dimensions differ")
        if not 0 <= self.step < self.total_steps:
            raise ValueError(f"step {self.step} outside [0, {self.total_steps})")


@dataclass
class GuidanceResponse:
    target: ImageRGBA
    weight: float


def encode_image_b64(img: ImageRGBA) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def decode_image_b64(data: str) -> ImageRGBA:
    try:
        raw = base64.b64decode(data, validate=True)
        return decode_png(raw)
    except Exception as exc:
        raise ProtocolError(f"undecodable image payload: {exc}") from None


def _requests_transport(method: str, url: str, payload, timeout: float, headers: dict):
    import requests

    try:
        if method == "GET":
            resp = requests.get(url, timeout=timeout, headers=headers)
        else:
            resp = requests.post(url, json=payload, timeout=timeout, headers=headers)
    except requests.RequestException as exc:
        raise TransportError(f"{method} {url}: {exc}") from exc
    try:
        body = resp.json()
    except ValueError:
        body = {"error": resp.text[:200]}
    return resp.status_code, body


class GuidanceClient:
    """Synchronous client; safe to share, one in-flight request per caller.

    `transport(method, url, payload, timeout, headers) -> (status, json)` can
    be swapped for an in-process mock; `sleep` likewise. Raising
    TransportError from the transport marks the attempt retryable.
    """

    def __init__(self, endpoint: ServiceEndpoint,
                 transport: Optional[Callable] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 jitter_seed: Optional[int] = None):
        self.endpoint = endpoint
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._rng = random.Random(jitter_seed)

    def _headers(self) -> dict:
        h = {"content-type": "application/json"}
        if self.endpoint.auth_token:
            h["authorization"] = f"Bearer {self.endpoint.auth_token}"
        return h

    def _post_with_retries(self, path: str, payload: dict) -> dict:
        url = self.endpoint.base_url.rstrip("/") + path
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt > 0:
                delay = BACKOFF_BASE_S * (2.0 ** (attempt - 1))
                delay *= 1.0 + BACKOFF_JITTER * self._rng.random()
                self._sleep(delay)
            try:
                status, body = self._transport("POST", url, payload,
                                               self.endpoint.timeout, self._headers())
            except TransportError as exc:
                last_error = exc
                continue
            if status == 200:
                return body
            if status in (502, 503, 504):
                last_error = TransportError(f"POST {url}: service answered {status}")
                continue
            raise ProtocolError(f"POST {url}: status {status}: {body.get('error', body)}")
        raise TransportError(
            f"POST {url}: giving up after {self.endpoint.max_retries + 1} attempts: {last_error}")

    def provide_target(self, req: GuidanceRequest) -> GuidanceResponse:
        """Fetch the guidance target for one rendered view."""
        payload = {
            "rendered_png_b64": encode_image_b64(req.rendered),
            "reference_png_b64": encode_image_b64(req.reference),
            "delta_elevation_deg": req.relative_pose.delta_elevation_deg,
            "delta_azimuth_deg": req.relative_pose.delta_azimuth_deg,
            "delta_radius": req.relative_pose.delta_radius,
            "step": req.step,
            "total_steps": req.total_steps,
            "request_id": str(uuid.uuid4()),
        }
        body = self._post_with_retries("/v1/guidance", payload)
        if "target_png_b64" not in body or "weight" not in body:
            raise ProtocolError(f"guidance response missing fields: {sorted(body)}")
        target = decode_image_b64(body["target_png_b64"])
        if (target.width, target.height) != (req.rendered.width, req.rendered.height):
            raise ProtocolError(
                f"target dimensions {target.width}x{target.height} do not match "
                f"request {req.rendered.width}x{req.rendered.height}")
        weight = float(body["weight"])
        if not (math.isfinite(weight) and weight >= 0):
            raise ProtocolError(f"weight out of contract: {weight}")
        return GuidanceResponse(target=target, weight=weight)

    def metrics(self, a: ImageRGBA, b: ImageRGBA) -> RemoteMetrics:
        """LPIPS and CLIP similarity between two images of identical size."""
        if (a.width, a.height) != (b.width, b.height):
            raise ValueError("metrics images must have identical dimensions")
        body = self._post_with_retries("/v1/metrics", {
            "image_a_png_b64": encode_image_b64(a),
            "image_b_png_b64": encode_image_b64(b),
        })
        if "lpips" not in body or "clip_similarity" not in body:
            raise ProtocolError(f"metrics response missing fields: {sorted(body)}")
        return RemoteMetrics(lpips=float(body["lpips"]),
                             clip_similarity=float(body["clip_similarity"]))

    def health(self) -> dict:
        url = self.endpoint.base_url.rstrip("/") + "/health"
        status, body = self._transport("GET", url, None, self.endpoint.timeout,
                                       self._headers())
        if status != 200:
            raise TransportError(f"GET {url}: status {status}")
        return body
