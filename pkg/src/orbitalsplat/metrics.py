"""Native image-quality metrics (PSNR, SSIM) and pairwise evaluation reports.

Metrics operate on RGB with alpha pre-composited over white; evaluate_pairs
does that compositing itself. LPIPS and CLIP similarity come from the remote
metrics service when an endpoint is supplied.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from . import imageops
from .imageops import ImageRGBA

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _check_same_shape(a: ImageRGBA, b: ImageRGBA):
    if a.pixels.shape != b.pixels.shape:
        raise MetricError(f"image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")


def psnr(a: ImageRGBA, b: ImageRGBA, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over RGB (alpha excluded).

    Identical images return the 99 dB sentinel cap instead of infinity.
    """
    _check_same_shape(a, b)
    if max_value <= 0:
        raise MetricError(f"max_value must be positive, got {max_value}")
    mse = float(np.mean((a.rgb - b.rgb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_value * max_value / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 2D correlation, keeping only fully-covered window positions."""
    half = window.size // 2
    out = correlate1d(img, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: ImageRGBA, b: ImageRGBA) -> float:
    """Mean structural similarity over RGB with an 11x11 Gaussian window (sigma 1.5).

    Uses the standard constants C1=(0.01)^2, C2=(0.03)^2 for unit dynamic
    range, averaged over all valid window positions and the three channels.
    """
    _check_same_shape(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise MetricError(f"image too small for SSIM: need at least {SSIM_WINDOW} px per side")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    values = []
    for ch in range(3):
        x = a.rgb[:, :, ch]
        y = b.rgb[:, :, ch]
        mu_x = _filter_valid(x, window)
        mu_y = _filter_valid(y, window)
        xx = _filter_valid(x * x, window) - mu_x * mu_x
        yy = _filter_valid(y * y, window) - mu_y * mu_y
        xy = _filter_valid(x * y, window) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        values.append(num / den)
    return float(np.mean(values))


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def recompute_aggregates(self) -> None:
        self.aggregates = {}
        for metric in ("psnr_db", "ssim", "lpips", "clip_similarity"):
            vals = [r[metric] for r in self.rows if metric in r and r[metric] is not None]
            if vals:
                arr = np.asarray(vals, dtype=np.float64)
                self.aggregates[metric] = {
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "count": int(arr.size),
                }

    def write_csv(self, path) -> None:
        cols = ["pair_id", "psnr_db", "ssim"]
        if any("lpips" in r for r in self.rows):
            cols += ["lpips", "clip_similarity"]
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(
                f"{r[c]:.6f}" if isinstance(r.get(c), float) else str(r.get(c, ""))
                for c in cols))
        Path(path).write_text("\n".join(lines) + "\n")

    def summary_text(self) -> str:
        out = [f"pairs evaluated: {len(self.rows)}  errors: {len(self.errors)}"]
        for metric, agg in sorted(self.aggregates.items()):
            out.append(f"{metric}: mean {agg['mean']:.4f}  std {agg['std']:.4f}"
                       f"  count {agg['count']}")
        for err in self.errors:
            out.append(f"error [{err['pair_id']}]: {err['message']}")
        return "\n".join(out)


def evaluate_pairs(pred_dir, gt_dir, endpoint=None, out_path=None) -> MetricReport:
    """Compute PSNR/SSIM (and remote LPIPS/CLIP when an endpoint is given)
    for same-named image pairs.

    Per-pair failures are recorded and the run continues; mismatched
    filename sets abort with both leftovers listed.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    exts = {".png"}
    pred = {p.name: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() in exts}
    gt = {p.name: p for p in sorted(gt_dir.iterdir()) if p.suffix.lower() in exts}
    if not pred or not gt:
        raise MetricError(f"no images to evaluate in {pred_dir} / {gt_dir}")
    if set(pred) != set(gt):
        only_pred = sorted(set(pred) - set(gt))
        only_gt = sorted(set(gt) - set(pred))
        raise MetricError(
            f"filename sets differ; only in predictions: {only_pred}, only in ground truth: {only_gt}")

    client = None
    if endpoint is not None:
        from .guidance import GuidanceClient
        client = GuidanceClient(endpoint)

    report = MetricReport()
    report.provenance = {
        "config_hash": hashlib.sha256(
            json.dumps({"pred": str(pred_dir), "gt": str(gt_dir),
                        "remote": endpoint is not None}, sort_keys=True).encode()
        ).hexdigest()[:16],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }

    for name in sorted(pred):
        try:
            a = imageops.composite_over(imageops.load_png(pred[name]), (1.0, 1.0, 1.0))
            b = imageops.composite_over(imageops.load_png(gt[name]), (1.0, 1.0, 1.0))
            row = {"pair_id": name, "psnr_db": psnr(a, b), "ssim": ssim(a, b)}
            if client is not None:
                rm = client.metrics(a, b)
                row["lpips"] = rm.lpips
                row["clip_similarity"] = rm.clip_similarity
            report.rows.append(row)
        except Exception as exc:  # per-pair resilience: record and continue
            report.errors.append({"pair_id": name, "message": str(exc)})
    report.recompute_aggregates()
    if out_path is not None:
        report.write_csv(out_path)
    return report
