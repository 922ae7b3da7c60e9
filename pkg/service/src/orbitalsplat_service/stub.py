"""Deterministic stand-ins for the learned guidance and metric models.

The stub guidance warps the reference image by a horizontal pixel shift of
round(delta_azimuth_deg) with wrap-around; stub metrics are mean-absolute
pixel differences. Both are exactly reproducible from the request bytes, so
client test suites can assert on them without any model weights.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class ImagePayloadError(ValueError):
    """Undecodable or out-of-contract image payload."""


def decode_png_b64(data: str) -> np.ndarray:
    """Base64 PNG to (H, W, 4) uint8. Raises ImagePayloadError on bad input."""
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ImagePayloadError(f"invalid base64: {exc}") from None
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGBA"), dtype=np.uint8)
    except Exception as exc:
        raise ImagePayloadError(f"undecodable PNG: {exc}") from None


def encode_png_b64(rgba: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def stub_guidance_target(reference: np.ndarray, delta_azimuth_deg: float) -> np.ndarray:
    """Horizontal wrap-around shift by round(delta_azimuth_deg) pixels."""
    shift = int(round(delta_azimuth_deg))
    return np.roll(reference, shift, axis=1)


def stub_metrics(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """(lpips, clip_similarity) stand-ins from the mean absolute RGB difference
    (alpha excluded, matching the native metric convention)."""
    diff = np.abs(a[..., :3].astype(np.float64) - b[..., :3].astype(np.float64))
    mad = float(diff.mean() / 255.0)
    return mad, 1.0 - min(1.0, mad)
