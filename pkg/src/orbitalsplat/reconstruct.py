"""Single-image reconstruction loop: init, render, guidance, Adam, densify.

Every iteration renders the reference view (RGB + mask MSE against the
input) and one novel view pulled toward a guidance target (weighted RGB
MSE), backpropagates both through the splatting renderer, and applies one
Adam step per parameter group. Densification clones or splits gaussians
with large accumulated screen-space position gradients; pruning removes
nearly transparent ones. Runs are bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import imageops
from .gaussians import (GaussianCloud, LOG_SCALE_MAX, LOG_SCALE_MIN,
                        render, render_backward)
from .geometry import (CameraIntrinsics, CameraPose, Vec3, look_at, pose_from_record,
                       relative_spherical, spherical_of)
from .guidance import GuidanceClient, GuidanceRequest, GuidanceResponse
from .imageops import ImageRGBA
from .raster import DatasetManifest

DEG = math.pi / 180.0


class ReconstructionError(RuntimeError):
    """Optimization aborted; carries a diagnostic state summary."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class DensifyConfig:
    interval: int = 100
    grad_threshold: float = 2e-4        # on [-1,1]-normalized screen gradients
    split_scale_threshold: float = 0.01  # scene units: larger gaussians split
    prune_opacity: float = 0.05
    max_gaussians: int = 100_000

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("densify interval must be >= 1")
        if not 0.0 < self.prune_opacity < 1.0:
            raise ValueError("prune_opacity must be in (0, 1)")


@dataclass
class ReconstructionConfig:
    reference_pose: CameraPose
    iterations: int = 2000
    seed: int = 0
    n_init: int = 5000
    init_radius: float = 0.5
    fov_y_deg: float = 49.1
    lambda_rgb: float = 1.0
    lambda_mask: float = 0.5
    lr_position: float = 1.6e-3
    lr_position_final_factor: float = 0.01   # exponential decay target over the run
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    elevation_range_deg: tuple[float, float] = (-30.0, 30.0)
    novel_radius: Optional[float] = None     # None = reference pose radius
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    snapshot_dir: Optional[str] = None       # per-100-iteration renders when set

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lambda_rgb < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be >= 0")
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Adam:
    """Adam with one state per parameter group; lr supplied per step."""

    def __init__(self, shapes: dict, beta1: float, beta2: float, eps: float):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict, grads: dict, lrs: dict) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= lrs[k] * m_hat / (np.sqrt(v_hat) + self.eps)


def init_cloud(reference: ImageRGBA, n: int, radius: float, seed: int) -> GaussianCloud:
    """Seeded cloud: n gaussians uniform in a ball, opacity 0.1, isotropic
    scale covering the mean nearest-neighbor distance, colored by the mean
    foreground RGB of the reference."""
    if n < 1:
        raise ValueError("init_cloud needs n >= 1")
    fg = reference.alpha > 0
    if not fg.any():
        raise ReconstructionError("reference image has no foreground pixels")
    mean_rgb = reference.rgb[fg].mean(axis=0)

    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    positions = direction * r[:, None]

    if n > 1:
        dist, _ = cKDTree(positions).query(positions, k=2)
        mean_nn = float(dist[:, 1].mean())
    else:
        mean_nn = radius
    log_scale = math.log(max(mean_nn, 1e-6))

    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianCloud(
        positions=positions,
        log_scales=np.full((n, 3), log_scale),
        rotations=quats,
        opacity_logits=np.full(n, math.log(0.1 / 0.9)),
        colors=np.tile(mean_rgb, (n, 1)),
    )


class GroundTruthGuidance:
    """Verifiable guidance: answers with the dataset view nearest in
    (elevation, azimuth) to the requested offset from the reference pose.

    Exposes the dataset poses as `lattice` so the optimizer samples novel
    views exactly on the rendered pose set.
    """

    def __init__(self, manifest: DatasetManifest, dataset_dir, reference_pose: CameraPose,
                 exclude=None):
        dataset_dir = Path(dataset_dir)
        ref_el, ref_az, _ = spherical_of(reference_pose)
        self._ref_el, self._ref_az = ref_el, ref_az
        self.lattice: list[CameraPose] = []
        self._el = []
        self._az = []
        self._images: list[np.ndarray] = []   # uint8 RGBA
        for rec in manifest.views:
            pose = pose_from_record(rec)
            if exclude is not None and exclude(pose, rec):
                continue
            el, az, _ = spherical_of(pose)
            img = imageops.load_png(dataset_dir / rec["image_path"])
            self.lattice.append(pose)
            self._el.append(el)
            self._az.append(az)
            self._images.append(imageops.to_bytes_rgba(img))
        if not self.lattice:
            raise ReconstructionError("ground-truth guidance has no usable views")
        self._el = np.asarray(self._el)
        self._az = np.asarray(self._az)

    def provide_target(self, req: GuidanceRequest) -> GuidanceResponse:
        want_el = self._ref_el + req.relative_pose.delta_elevation_deg
        want_az = self._ref_az + req.relative_pose.delta_azimuth_deg
        d_az = np.abs((self._az - want_az + 180.0) % 360.0 - 180.0)
        d_el = self._el - want_el
        best = int(np.argmin(d_el * d_el + d_az * d_az))  # ties: lowest index
        target = imageops.from_bytes_rgba(self._images[best])
        return GuidanceResponse(target=target, weight=1.0)


class RemoteGuidance:
    """Guidance provider backed by the HTTP service."""

    def __init__(self, client: GuidanceClient):
        self.client = client

    def provide_target(self, req: GuidanceRequest) -> GuidanceResponse:
        return self.client.provide_target(req)


def _sample_novel_pose(rng, cfg: ReconstructionConfig, lattice):
    if lattice:
        return lattice[int(rng.integers(len(lattice)))]
    _, _, ref_radius = spherical_of(cfg.reference_pose)
    radius = cfg.novel_radius if cfg.novel_radius is not None else ref_radius
    az = rng.uniform(0.0, 360.0) * DEG
    el = rng.uniform(*cfg.elevation_range_deg) * DEG
    pos = Vec3(radius * math.cos(el) * math.cos(az),
               radius * math.cos(el) * math.sin(az),
               radius * math.sin(el))
    return look_at(pos, Vec3(0, 0, 0), Vec3(0, 0, 1))


def densify_and_prune(cloud: GaussianCloud, grad_stats: np.ndarray,
                      cfg: DensifyConfig) -> GaussianCloud:
    """Clone small / split large high-gradient gaussians, prune transparent ones.

    grad_stats is the mean accumulated screen-space position gradient norm
    per gaussian. Splitting replaces a gaussian with two copies offset along
    its major axis with scales reduced by a factor of 1.6. Densification is
    skipped while the cloud is at max_gaussians.
    """
    scales = np.exp(cloud.log_scales)
    max_scale = scales.max(axis=1)
    hot = grad_stats > cfg.grad_threshold

    clone_mask = hot & (max_scale < cfg.split_scale_threshold)
    split_mask = hot & ~clone_mask

    pieces = []
    keep_mask = ~split_mask
    room = cfg.max_gaussians - len(cloud)
    if room > 0:
        if clone_mask.any():
            pieces.append(cloud.subset(clone_mask))
        if split_mask.any():
            from .gaussians import rotation_matrices

            idx = np.flatnonzero(split_mask)
            sub = cloud.subset(idx)
            axis_k = np.argmax(sub.log_scales, axis=1)
            R = rotation_matrices(sub.rotations)
            major = R[np.arange(len(sub)), :, axis_k]
            sigma = np.exp(sub.log_scales[np.arange(len(sub)), axis_k])
            offset = 0.5 * sigma[:, None] * major
            for sign in (+1.0, -1.0):
                part = sub.subset(np.arange(len(sub)))
                part.positions += sign * offset
                part.log_scales -= math.log(1.6)
                pieces.append(part)
    else:
        keep_mask = np.ones(len(cloud), dtype=bool)

    merged = GaussianCloud.concatenate([cloud.subset(keep_mask)] + pieces) if pieces \
        else cloud.subset(keep_mask)

    alive = merged.opacities >= cfg.prune_opacity
    pruned = merged.subset(alive)
    if len(pruned) > cfg.max_gaussians:
        pruned = pruned.subset(np.arange(cfg.max_gaussians))
    if len(pruned) == 0:
        # never hand the optimizer an empty scene; keep the most opaque one
        keep = int(np.argmax(merged.opacities))
        pruned = merged.subset([keep])
    return pruned


def optimize(reference: ImageRGBA, guidance, config: ReconstructionConfig,
             initial_cloud: Optional[GaussianCloud] = None):
    """Run the generative loop; returns (cloud, trace).

    trace rows are (iteration, loss_ref, loss_novel, n_gaussians). The
    guidance provider supplies targets for sampled novel poses; when it
    carries a pose lattice, novel poses are drawn from that lattice.
    """
    H, W = reference.height, reference.width
    intr = CameraIntrinsics(fov_y_deg=config.fov_y_deg, width=W, height=H)
    white = (1.0, 1.0, 1.0)
    black = (0.0, 0.0, 0.0)
    reference_white = imageops.composite_over(reference, white)

    cloud = initial_cloud if initial_cloud is not None else init_cloud(
        reference, config.n_init, config.init_radius, config.seed)
    cloud = cloud.clamped()

    rng = np.random.default_rng(np.random.SeedSequence(entropy=[config.seed, 0x9e3779b9]))
    lattice = getattr(guidance, "lattice", None)

    def make_adam():
        shapes = {"positions": cloud.positions.shape,
                  "log_scales": cloud.log_scales.shape,
                  "rotations": cloud.rotations.shape,
                  "opacity_logits": cloud.opacity_logits.shape,
                  "colors": cloud.colors.shape}
        return Adam(shapes, config.adam_beta1, config.adam_beta2, config.adam_eps)

    adam = make_adam()
    stat_sum = np.zeros(len(cloud))
    stat_cnt = np.zeros(len(cloud))
    trace = []
    snapshot_dir = Path(config.snapshot_dir) if config.snapshot_dir else None
    if snapshot_dir:
        snapshot_dir.mkdir(parents=True, exist_ok=True)

    n_px = H * W
    for it in range(config.iterations):
        # (a) reference view: photometric + mask loss
        ref_out = render(cloud, intr, config.reference_pose, black)
        d_rgb = ref_out.color.rgb - reference.rgb
        d_a = ref_out.color.alpha - reference.alpha
        loss_ref = (config.lambda_rgb * float(np.mean(d_rgb ** 2))
                    + config.lambda_mask * float(np.mean(d_a ** 2)))
        grads = render_backward(ref_out,
                                2.0 * config.lambda_rgb * d_rgb / (n_px * 3),
                                2.0 * config.lambda_mask * d_a / n_px)

        # (b) novel view toward the guidance target
        novel_pose = _sample_novel_pose(rng, config, lattice)
        novel_out = render(cloud, intr, novel_pose, white)
        rendered_opaque = ImageRGBA.from_rgb_alpha(novel_out.color.rgb,
                                                   np.ones((H, W)))
        req = GuidanceRequest(rendered=rendered_opaque, reference=reference_white,
                              relative_pose=relative_spherical(config.reference_pose,
                                                               novel_pose),
                              step=it, total_steps=config.iterations)
        resp = guidance.provide_target(req)
        target_white = imageops.composite_over(resp.target, white)
        d_nov = novel_out.color.rgb - target_white.rgb
        loss_novel = resp.weight * float(np.mean(d_nov ** 2))
        novel_grads = render_backward(novel_out,
                                      2.0 * resp.weight * d_nov / (n_px * 3),
                                      np.zeros((H, W)))
        grads.add_(novel_grads)

        if not (math.isfinite(loss_ref) and math.isfinite(loss_novel)):
            raise ReconstructionError(
                f"non-finite loss at iteration {it}: ref={loss_ref} novel={loss_novel}",
                diagnostics=_state_summary(cloud, it, loss_ref, loss_novel))

        stat_sum += grads.screen_grad_norm
        stat_cnt += grads.screen_grad_norm > 0

        decay = config.lr_position_final_factor ** (it / max(1, config.iterations - 1))
        lrs = {"positions": config.lr_position * decay,
               "log_scales": config.lr_scale,
               "rotations": config.lr_rotation,
               "opacity_logits": config.lr_opacity,
               "colors": config.lr_color}
        params = {"positions": cloud.positions, "log_scales": cloud.log_scales,
                  "rotations": cloud.rotations, "opacity_logits": cloud.opacity_logits,
                  "colors": cloud.colors}
        grad_arrays = {"positions": grads.positions, "log_scales": grads.log_scales,
                       "rotations": grads.rotations,
                       "opacity_logits": grads.opacity_logits, "colors": grads.colors}
        adam.step(params, grad_arrays, lrs)

        # maintain invariants after every step
        np.clip(cloud.log_scales, LOG_SCALE_MIN, LOG_SCALE_MAX, out=cloud.log_scales)
        np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)
        norms = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
        cloud.rotations /= np.maximum(norms, 1e-12)

        trace.append((it, loss_ref, loss_novel, len(cloud)))

        if snapshot_dir and (it + 1) % 100 == 0:
            imageops.save_png(ref_out.color, snapshot_dir / f"iter_{it + 1:05d}.png")

        due = (it + 1) % config.densify.interval == 0
        if due and it + 1 < config.iterations:
            stats = np.where(stat_cnt > 0, stat_sum / np.maximum(stat_cnt, 1), 0.0)
            cloud = densify_and_prune(cloud, stats, config.densify).clamped()
            adam = make_adam()
            stat_sum = np.zeros(len(cloud))
            stat_cnt = np.zeros(len(cloud))

    return cloud, trace


def _state_summary(cloud: GaussianCloud, it: int, loss_ref, loss_novel) -> dict:
    return {
        "iteration": it,
        "loss_ref": loss_ref,
        "loss_novel": loss_novel,
        "n_gaussians": len(cloud),
        "position_range": [float(cloud.positions.min()), float(cloud.positions.max())],
        "log_scale_range": [float(cloud.log_scales.min()), float(cloud.log_scales.max())],
        "opacity_range": [float(cloud.opacities.min()), float(cloud.opacities.max())],
    }


def write_trace(path, trace) -> None:
    lines = ["iteration,loss_ref,loss_novel,n_gaussians"]
    for it, lr_, ln_, n in trace:
        lines.append(f"{it},{lr_:.9g},{ln_:.9g},{n}")
    Path(path).write_text("\n".join(lines) + "\n")


def axis_view_poses(radius: float) -> list[tuple[str, CameraPose]]:
    """The six axis-aligned views, named, with non-degenerate up vectors."""
    up_z = Vec3(0, 0, 1)
    up_y = Vec3(0, 1, 0)
    origin = Vec3(0, 0, 0)
    return [
        ("pos_x", look_at(Vec3(radius, 0, 0), origin, up_z)),
        ("neg_x", look_at(Vec3(-radius, 0, 0), origin, up_z)),
        ("pos_y", look_at(Vec3(0, radius, 0), origin, up_z)),
        ("neg_y", look_at(Vec3(0, -radius, 0), origin, up_z)),
        ("pos_z", look_at(Vec3(0, 0, radius), origin, up_y)),
        ("neg_z", look_at(Vec3(0, 0, -radius), origin, up_y)),
    ]


def is_axis_aligned_pose(pose: CameraPose, tol: float = 1e-6) -> bool:
    """True when the camera sits on a coordinate axis (shared orbit poses)."""
    p = pose.position.as_array()
    r = np.linalg.norm(p)
    if r < 1e-12:
        return False
    return bool((np.abs(np.abs(p) / r - 1.0) < tol).any())
