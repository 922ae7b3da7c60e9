"""Input standardization: RGBA images, background matting, recenter/resize.

Images are float arrays in [0,1], shape (H, W, 4), straight (non-premultiplied)
alpha. PNG I/O is 8-bit per channel, mapped linearly (no gamma handling).
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_MATTE_THRESHOLD = 0.5
DEFAULT_BORDER_RATIO = 0.2
DEFAULT_TARGET_SIZE = 256


class ImageError(ValueError):
    """Raised on malformed image data or out-of-contract arguments."""


class ImageRGBA:
    """H x W x 4 float image in [0,1]. Treated as immutable once constructed."""

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 4:
            raise ImageError(f"expected (H, W, 4) array, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ImageError("non-finite pixel values")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ImageError("pixel values outside [0, 1]")
        self.pixels = pixels

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]

    @staticmethod
    def from_rgb_alpha(rgb: np.ndarray, alpha: np.ndarray) -> "ImageRGBA":
        return ImageRGBA(np.concatenate([rgb, alpha[..., None]], axis=2))

    @staticmethod
    def solid(height: int, width: int, rgba=(0.0, 0.0, 0.0, 0.0)) -> "ImageRGBA":
        px = np.empty((height, width, 4), dtype=np.float64)
        px[:] = np.asarray(rgba, dtype=np.float64)
        return ImageRGBA(px)


def to_bytes_rgba(img: ImageRGBA) -> np.ndarray:
    """Quantize to uint8 with round-half-away semantics of np.rint."""
    return np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_bytes_rgba(data: np.ndarray) -> ImageRGBA:
    return ImageRGBA(np.asarray(data, dtype=np.float64) / 255.0)


def save_png(img: ImageRGBA, path) -> None:
    Image.fromarray(to_bytes_rgba(img), mode="RGBA").save(Path(path), format="PNG")


def encode_png(img: ImageRGBA) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_bytes_rgba(img), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def load_png(path) -> ImageRGBA:
    with Image.open(Path(path)) as im:
        return from_bytes_rgba(np.asarray(im.convert("RGBA"), dtype=np.uint8))


def decode_png(data: bytes) -> ImageRGBA:
    with Image.open(io.BytesIO(data)) as im:
        return from_bytes_rgba(np.asarray(im.convert("RGBA"), dtype=np.uint8))


def alpha_matte(img: ImageRGBA, threshold: float = DEFAULT_MATTE_THRESHOLD) -> ImageRGBA:
    """Binarize alpha: below threshold -> (0,0,0,0); at or above -> alpha 1, RGB kept."""
    if not 0.0 <= threshold <= 1.0:
        raise ImageError(f"matte threshold outside [0, 1]: {threshold}")
    keep = img.alpha >= threshold
    out = np.zeros_like(img.pixels)
    out[keep, :3] = img.rgb[keep]
    out[keep, 3] = 1.0
    return ImageRGBA(out)


def composite_over(img: ImageRGBA, background_rgb) -> ImageRGBA:
    """Straight-alpha over operator onto an opaque constant background."""
    bg = np.asarray(background_rgb, dtype=np.float64)
    a = img.alpha[..., None]
    rgb = a * img.rgb + (1.0 - a) * bg
    out = np.concatenate([rgb, np.ones_like(a)], axis=2)
    return ImageRGBA(np.clip(out, 0.0, 1.0))


def _bilinear_resize_premultiplied(px: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with alpha-weighted color (premultiply, resize, unpremultiply).

    Avoids background-color bleed at silhouette edges.
    """
    h, w = px.shape[:2]
    pre = px.copy()
    pre[:, :, :3] *= pre[:, :, 3:4]

    # source sample positions for each output pixel center
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]

    top = pre[y0][:, x0] * (1 - wx) + pre[y0][:, x1] * wx
    bot = pre[y1][:, x0] * (1 - wx) + pre[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy

    alpha = out[:, :, 3:4]
    rgb = np.where(alpha > 1e-8, out[:, :, :3] / np.maximum(alpha, 1e-8), 0.0)
    return np.clip(np.concatenate([rgb, alpha], axis=2), 0.0, 1.0)


def recenter_resize(img: ImageRGBA, target: int = DEFAULT_TARGET_SIZE,
                    border_ratio: float = DEFAULT_BORDER_RATIO) -> ImageRGBA:
    """Crop the tight alpha bbox, pad to square, and scale into a target frame.

    The content square maps to target * (1 - 2*border_ratio) pixels, centered,
    leaving a border_ratio * target margin on each side.
    """
    if not 0.0 <= border_ratio < 0.5:
        raise ImageError(f"border_ratio outside [0, 0.5): {border_ratio}")
    mask = img.alpha > 0.0
    if not mask.any():
        raise ImageError("recenter_resize: image has no foreground pixels")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = rows[0], rows[-1] + 1
    x0, x1 = cols[0], cols[-1] + 1
    crop = img.pixels[y0:y1, x0:x1]

    side = max(y1 - y0, x1 - x0)
    square = np.zeros((side, side, 4), dtype=np.float64)
    oy = (side - (y1 - y0)) // 2
    ox = (side - (x1 - x0)) // 2
    square[oy:oy + (y1 - y0), ox:ox + (x1 - x0)] = crop

    content = max(1, int(round(target * (1.0 - 2.0 * border_ratio))))
    resized = _bilinear_resize_premultiplied(square, content, content)

    out = np.zeros((target, target, 4), dtype=np.float64)
    off = (target - content) // 2
    out[off:off + content, off:off + content] = resized
    return ImageRGBA(out)


def standardize(img: ImageRGBA, target: int = DEFAULT_TARGET_SIZE,
                threshold: float = DEFAULT_MATTE_THRESHOLD,
                border_ratio: float = DEFAULT_BORDER_RATIO) -> ImageRGBA:
    """Full input pipeline: matte the background, then recenter and resize."""
    return recenter_resize(alpha_matte(img, threshold), target, border_ratio)
