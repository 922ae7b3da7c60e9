"""Differentiable 3D gaussian splatting: representation, renderer, backward pass.

The scene is a flat array-of-fields cloud: position, log-scale, rotation
quaternion (w-first), opacity logit, RGB color. Rendering projects each
gaussian to an anisotropic 2D footprint (perspective-linearized covariance
transport), depth-sorts globally, and alpha-composites front to back. The
backward pass is analytic and exact for the implemented forward.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from ..geometry import CameraIntrinsics, CameraPose, quat_to_matrix
from ..imageops import ImageRGBA
from . import _kernels
from ._kernels import T_EPS, TILE

COV_LOWPASS = 0.3          # px^2 added to the 2D covariance diagonal
SUPPORT_SIGMA = 3.5        # screen-space support radius in sigmas (see _kernels)
LOG_SCALE_MIN = math.log(1e-7)
LOG_SCALE_MAX = math.log(1e2)

MAGIC = b"OSPL"
FORMAT_VERSION = 1
FIELDS_PER_GAUSSIAN = 14   # mu(3) log_scale(3) quat(4) logit(1) rgb(3)


class CloudError(ValueError):
    pass


@dataclass
class GaussianCloud:
    """Field-per-attribute arrays for N gaussians."""

    positions: np.ndarray       # (N, 3) float64
    log_scales: np.ndarray      # (N, 3) float64
    rotations: np.ndarray       # (N, 4) float64, w-first, unit
    opacity_logits: np.ndarray  # (N,) float64
    colors: np.ndarray          # (N, 3) float64 in [0, 1]

    def __post_init__(self):
        n = self.positions.shape[0]
        shapes = {"positions": (n, 3), "log_scales": (n, 3), "rotations": (n, 4),
                  "opacity_logits": (n,), "colors": (n, 3)}
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise CloudError(f"{name} has shape {arr.shape}, expected {want}")

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def clamped(self) -> "GaussianCloud":
        """Enforce parameter invariants: scale bounds, unit rotations, color range."""
        rot = self.rotations.copy()
        norms = np.linalg.norm(rot, axis=1, keepdims=True)
        rot = np.where(norms > 1e-12, rot / np.maximum(norms, 1e-12),
                       np.array([1.0, 0.0, 0.0, 0.0]))
        return GaussianCloud(
            positions=self.positions.copy(),
            log_scales=np.clip(self.log_scales, LOG_SCALE_MIN, LOG_SCALE_MAX),
            rotations=rot,
            opacity_logits=self.opacity_logits.copy(),
            colors=np.clip(self.colors, 0.0, 1.0),
        )

    def subset(self, mask_or_idx) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions[mask_or_idx].copy(),
            log_scales=self.log_scales[mask_or_idx].copy(),
            rotations=self.rotations[mask_or_idx].copy(),
            opacity_logits=self.opacity_logits[mask_or_idx].copy(),
            colors=self.colors[mask_or_idx].copy(),
        )

    @staticmethod
    def concatenate(clouds: list["GaussianCloud"]) -> "GaussianCloud":
        return GaussianCloud(
            positions=np.concatenate([c.positions for c in clouds]),
            log_scales=np.concatenate([c.log_scales for c in clouds]),
            rotations=np.concatenate([c.rotations for c in clouds]),
            opacity_logits=np.concatenate([c.opacity_logits for c in clouds]),
            colors=np.concatenate([c.colors for c in clouds]),
        )

    @staticmethod
    def empty() -> "GaussianCloud":
        return GaussianCloud(
            positions=np.zeros((0, 3)), log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)), opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)))


@dataclass
class CloudGradients:
    """Loss gradients per parameter group, plus screen-space position gradient
    norms (image coordinates normalized to [-1, 1]) used by densification."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    screen_grad_norm: np.ndarray  # (N,)

    @staticmethod
    def zeros(n: int) -> "CloudGradients":
        return CloudGradients(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                              np.zeros(n), np.zeros((n, 3)), np.zeros(n))

    def add_(self, other: "CloudGradients") -> None:
        self.positions += other.positions
        self.log_scales += other.log_scales
        self.rotations += other.rotations
        self.opacity_logits += other.opacity_logits
        self.colors += other.colors
        self.screen_grad_norm += other.screen_grad_norm


def rotation_matrices(quats: np.ndarray) -> np.ndarray:
    """Batch quaternion (w-first, any norm) to rotation matrices, (N,3,3)."""
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(log_scale, rotation) -> np.ndarray:
    """World covariance of one gaussian: R diag(exp(ls))^2 R^T."""
    R = quat_to_matrix(np.asarray(rotation, dtype=np.float64))
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    M = R * s[None, :]
    return M @ M.T


def covariances3d(cloud: GaussianCloud) -> np.ndarray:
    R = rotation_matrices(cloud.rotations)
    M = R * np.exp(cloud.log_scales)[:, None, :]
    return np.einsum("nij,nkj->nik", M, M)


def project_gaussian(position, log_scale, rotation, intr: CameraIntrinsics,
                     pose: CameraPose):
    """Project one gaussian: (mean2d, cov2d, depth), or None when behind the camera.

    cov2d carries the anti-aliasing floor: COV_LOWPASS added to the diagonal,
    so its eigenvalues are at least COV_LOWPASS.
    """
    cloud = GaussianCloud(
        positions=np.asarray(position, dtype=np.float64).reshape(1, 3),
        log_scales=np.asarray(log_scale, dtype=np.float64).reshape(1, 3),
        rotations=np.asarray(rotation, dtype=np.float64).reshape(1, 4),
        opacity_logits=np.zeros(1), colors=np.zeros((1, 3)))
    proj = _project_cloud(cloud, intr, pose)
    if proj["valid"].sum() == 0:
        return None
    return proj["mean2d"][0].copy(), proj["cov2d"][0].copy(), float(proj["depth"][0])


def _project_cloud(cloud: GaussianCloud, intr: CameraIntrinsics, pose: CameraPose) -> dict:
    """Vectorized projection of every gaussian; invalid rows are culled later."""
    R = pose.rotation_matrix()
    eye = pose.position.as_array()
    t = (cloud.positions - eye) @ R          # camera-space positions
    depth = -t[:, 2]
    valid = depth > intr.near

    f = intr.focal
    zs = np.where(valid, depth, 1.0)
    u = intr.cx + f * t[:, 0] / zs
    v = intr.cy - f * t[:, 1] / zs
    mean2d = np.stack([u, v], axis=1)

    Rq = rotation_matrices(cloud.rotations)
    M3 = Rq * np.exp(cloud.log_scales)[:, None, :]
    cov3 = np.einsum("nij,nkj->nik", M3, M3)

    # jacobian of the pinhole map at the gaussian center (depth = -t_z)
    n = len(cloud)
    J = np.zeros((n, 2, 3), dtype=np.float64)
    J[:, 0, 0] = f / zs
    J[:, 0, 2] = f * t[:, 0] / zs**2
    J[:, 1, 1] = -f / zs
    J[:, 1, 2] = -f * t[:, 1] / zs**2

    M = J @ R.T                               # (N,2,3): d(screen)/d(world)
    cov2 = np.einsum("nij,njk,nlk->nil", M, cov3, M)
    cov2[:, 0, 0] += COV_LOWPASS
    cov2[:, 1, 1] += COV_LOWPASS

    a = cov2[:, 0, 0]
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = SUPPORT_SIGMA * np.sqrt(lam_max)

    return {"t": t, "depth": depth, "valid": valid, "mean2d": mean2d,
            "cov3": cov3, "M": M, "cov2d": cov2, "conic": conic,
            "radius": radius, "R": R, "f": f}


@dataclass
class _BlendCache:
    """Opaque record tying a forward render to its backward pass."""

    n_total: int
    sorted_idx: np.ndarray     # (K,) original gaussian indices, depth order
    mean2d: np.ndarray
    conic: np.ndarray
    alpha: np.ndarray
    color: np.ndarray
    depth: np.ndarray
    bbox: np.ndarray           # (K, 4) int64: x0, x1, y0, y1 inclusive
    t_cam: np.ndarray          # (K, 3) camera-space centers
    cov3: np.ndarray
    M: np.ndarray
    R: np.ndarray
    f: float
    log_scales: np.ndarray
    quats: np.ndarray
    tile_start: np.ndarray
    pair_rank: np.ndarray
    tiles_x: int
    height: int
    width: int
    background: np.ndarray
    final_t: np.ndarray
    accum_rgb: np.ndarray
    term: np.ndarray


@dataclass
class RenderOutput:
    color: ImageRGBA           # alpha channel = accumulated opacity
    depth: np.ndarray          # alpha-weighted expected depth; +inf where empty
    blend_cache: _BlendCache


def _bin_pairs(bbox: np.ndarray, height: int, width: int):
    """Assign depth-ranked gaussians to the 16x16 pixel tiles their boxes touch.

    Returns (tile_start, pair_rank, tiles_x): per-tile contiguous spans into
    pair_rank, each span depth-ordered.
    """
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    k = bbox.shape[0]
    if k == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x

    tx0 = bbox[:, 0] // TILE
    tx1 = bbox[:, 1] // TILE
    ty0 = bbox[:, 2] // TILE
    ty1 = bbox[:, 3] // TILE
    ntx = tx1 - tx0 + 1
    nty = ty1 - ty0 + 1
    cnt = ntx * nty
    starts = np.concatenate([[0], np.cumsum(cnt)])
    total = int(starts[-1])

    pair_rank = np.repeat(np.arange(k, dtype=np.int64), cnt)
    j = np.arange(total, dtype=np.int64) - starts[pair_rank]
    jx = j % ntx[pair_rank]
    jy = j // ntx[pair_rank]
    pair_tile = (ty0[pair_rank] + jy) * tiles_x + (tx0[pair_rank] + jx)

    order = np.lexsort((pair_rank, pair_tile))
    pair_rank = np.ascontiguousarray(pair_rank[order])
    tiles_sorted = pair_tile[order]
    tile_start = np.searchsorted(tiles_sorted, np.arange(n_tiles + 1), side="left")
    return tile_start.astype(np.int64), pair_rank, tiles_x


def render(cloud: GaussianCloud, intr: CameraIntrinsics, pose: CameraPose,
           background_rgb=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Splat the cloud into an RGBA + expected-depth image.

    Contributors are composited per pixel strictly by ascending depth (ties
    broken by input index); compositing stops once transmittance drops below
    T_EPS. Output color is composited over background_rgb; output alpha is
    the accumulated opacity.
    """
    H, W = intr.height, intr.width
    bg = np.asarray(background_rgb, dtype=np.float64)

    proj = _project_cloud(cloud, intr, pose) if len(cloud) else None
    if proj is not None:
        valid = proj["valid"].copy()
        r = proj["radius"]
        m = proj["mean2d"]
        x0 = np.floor(m[:, 0] - r).astype(np.int64)
        x1 = np.ceil(m[:, 0] + r).astype(np.int64)
        y0 = np.floor(m[:, 1] - r).astype(np.int64)
        y1 = np.ceil(m[:, 1] + r).astype(np.int64)
        x0c = np.maximum(x0, 0)
        x1c = np.minimum(x1, W - 1)
        y0c = np.maximum(y0, 0)
        y1c = np.minimum(y1, H - 1)
        valid &= (x0c <= x1c) & (y0c <= y1c)
        idx = np.flatnonzero(valid)
    else:
        idx = np.zeros(0, dtype=np.int64)

    if idx.size == 0:
        rgb = np.tile(bg, (H, W, 1))
        color = ImageRGBA.from_rgb_alpha(np.clip(rgb, 0, 1), np.zeros((H, W)))
        cache = _BlendCache(
            n_total=len(cloud), sorted_idx=idx, mean2d=np.zeros((0, 2)),
            conic=np.zeros((0, 3)), alpha=np.zeros(0), color=np.zeros((0, 3)),
            depth=np.zeros(0), bbox=np.zeros((0, 4), dtype=np.int64),
            t_cam=np.zeros((0, 3)), cov3=np.zeros((0, 3, 3)), M=np.zeros((0, 2, 3)),
            R=pose.rotation_matrix(), f=intr.focal, log_scales=np.zeros((0, 3)),
            quats=np.zeros((0, 4)), tile_start=np.zeros(1, dtype=np.int64),
            pair_rank=np.zeros(0, dtype=np.int64), tiles_x=1, height=H, width=W,
            background=bg, final_t=np.ones((H, W)), accum_rgb=np.zeros((H, W, 3)),
            term=np.zeros((H, W), dtype=np.int64))
        return RenderOutput(color=color, depth=np.full((H, W), np.inf), blend_cache=cache)

    # global depth sort; stable, so equal depths keep ascending input index
    order = idx[np.argsort(proj["depth"][idx], kind="stable")]
    mean2d = np.ascontiguousarray(proj["mean2d"][order])
    conic = np.ascontiguousarray(proj["conic"][order])
    alpha = np.ascontiguousarray(cloud.opacities[order])
    color_s = np.ascontiguousarray(cloud.colors[order])
    depth_s = np.ascontiguousarray(proj["depth"][order])
    bbox = np.stack([x0c[order], x1c[order], y0c[order], y1c[order]], axis=1)
    bbox = np.ascontiguousarray(bbox)

    tile_start, pair_rank, tiles_x = _bin_pairs(bbox, H, W)

    out_rgb = np.zeros((H, W, 3), dtype=np.float64)
    out_t = np.ones((H, W), dtype=np.float64)
    out_d = np.zeros((H, W), dtype=np.float64)
    term = np.zeros((H, W), dtype=np.int64)
    _kernels.forward_kernel(tile_start, pair_rank, mean2d, conic, alpha, color_s,
                            depth_s, bbox, tiles_x, H, W, out_rgb, out_t, out_d,
                            term)

    acc_alpha = 1.0 - out_t
    rgb = out_rgb + out_t[..., None] * bg
    depth_img = np.where(acc_alpha > 0.0, out_d / np.maximum(acc_alpha, 1e-300), np.inf)
    color = ImageRGBA.from_rgb_alpha(np.clip(rgb, 0.0, 1.0), np.clip(acc_alpha, 0.0, 1.0))

    cache = _BlendCache(
        n_total=len(cloud), sorted_idx=order, mean2d=mean2d, conic=conic,
        alpha=alpha, color=color_s, depth=depth_s, bbox=bbox,
        t_cam=proj["t"][order], cov3=proj["cov3"][order], M=proj["M"][order],
        R=proj["R"], f=proj["f"], log_scales=cloud.log_scales[order],
        quats=cloud.rotations[order], tile_start=tile_start, pair_rank=pair_rank,
        tiles_x=tiles_x, height=H, width=W, background=bg, final_t=out_t,
        accum_rgb=out_rgb, term=term)
    return RenderOutput(color=color, depth=depth_img, blend_cache=cache)


def _quat_rotation_grads(quats: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, (K, 4, 3, 3), before tangent projection."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    k = quats.shape[0]
    D = np.zeros((k, 4, 3, 3), dtype=np.float64)
    zero = np.zeros(k)
    D[:, 0] = 2 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1)], axis=1)
    D[:, 1] = 2 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    D[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    D[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1)], axis=1)
    return D


def render_backward(out: RenderOutput, dl_dcolor: np.ndarray,
                    dl_dalpha: np.ndarray) -> CloudGradients:
    """Exact gradients of the composite w.r.t. all five parameter groups.

    dl_dcolor is (H, W, 3) against the composited RGB; dl_dalpha is (H, W)
    against accumulated opacity. Gaussians that contributed to no pixel get
    exactly zero gradient.
    """
    cache = out.blend_cache
    H, W = cache.height, cache.width
    dl_dcolor = np.ascontiguousarray(dl_dcolor, dtype=np.float64)
    dl_dalpha = np.ascontiguousarray(dl_dalpha, dtype=np.float64)
    if dl_dcolor.shape != (H, W, 3) or dl_dalpha.shape != (H, W):
        raise CloudError(
            f"gradient shape mismatch: expected {(H, W, 3)} and {(H, W)}, "
            f"got {dl_dcolor.shape} and {dl_dalpha.shape}")

    grads = CloudGradients.zeros(cache.n_total)
    k = cache.sorted_idx.size
    if k == 0:
        return grads

    pair_grad = np.zeros((cache.pair_rank.size, 9), dtype=np.float64)
    _kernels.backward_kernel(
        cache.tile_start, cache.pair_rank, cache.mean2d, cache.conic, cache.alpha,
        cache.color, cache.depth, cache.bbox, cache.tiles_x, H, W,
        dl_dcolor, dl_dalpha, cache.background, cache.final_t, cache.accum_rgb,
        cache.term, pair_grad)

    # fixed-order reduction over (gaussian, tile) slots: deterministic
    by_rank = np.zeros((k, 9), dtype=np.float64)
    np.add.at(by_rank, cache.pair_rank, pair_grad)

    dmean = by_rank[:, 0:2]
    dconic = by_rank[:, 2:5]
    dcolor = by_rank[:, 5:8]
    dlogit = by_rank[:, 8]

    # conic = inverse of cov2d: dL/dcov2d = -A G A with G the symmetrized
    # gradient w.r.t. the matrix entries
    ca, cb, cc = cache.conic[:, 0], cache.conic[:, 1], cache.conic[:, 2]
    A = np.empty((k, 2, 2))
    A[:, 0, 0] = ca
    A[:, 0, 1] = cb
    A[:, 1, 0] = cb
    A[:, 1, 1] = cc
    G = np.empty((k, 2, 2))
    G[:, 0, 0] = dconic[:, 0]
    G[:, 0, 1] = 0.5 * dconic[:, 1]
    G[:, 1, 0] = 0.5 * dconic[:, 1]
    G[:, 1, 1] = dconic[:, 2]
    dcov2 = -np.einsum("nij,njk,nkl->nil", A, G, A)

    # cov2d = M cov3 M^T + lowpass
    M = cache.M
    cov3 = cache.cov3
    dcov3 = np.einsum("nji,njk,nkl->nil", M, dcov2, M)
    dM = 2.0 * np.einsum("nij,njk,nkl->nil", dcov2, M, cov3)

    # M = J R^T: dJ = dM R
    R = cache.R
    dJ = dM @ R

    f = cache.f
    t = cache.t_cam
    z = cache.depth                      # view depth = -t_z
    tx, ty = t[:, 0], t[:, 1]
    du, dv = dmean[:, 0], dmean[:, 1]

    dtx = du * (f / z) + dJ[:, 0, 2] * (f / z**2)
    dty = dv * (-f / z) + dJ[:, 1, 2] * (-f / z**2)
    dz = (du * (-f * tx / z**2) + dv * (f * ty / z**2)
          + dJ[:, 0, 0] * (-f / z**2) + dJ[:, 0, 2] * (-2 * f * tx / z**3)
          + dJ[:, 1, 1] * (f / z**2) + dJ[:, 1, 2] * (2 * f * ty / z**3))
    dt = np.stack([dtx, dty, -dz], axis=1)
    dpos = dt @ R.T

    # cov3 = Rq diag(exp(2 ls)) Rq^T
    Rq = rotation_matrices(cache.quats)
    D2 = np.exp(2.0 * cache.log_scales)
    B = np.einsum("nji,njk,nkl->nil", Rq, dcov3, Rq)
    dls = np.einsum("nkk->nk", B) * 2.0 * D2
    dRq = 2.0 * np.einsum("nij,njk->nik", dcov3, Rq) * D2[:, None, :]
    dRdq = _quat_rotation_grads(cache.quats / np.linalg.norm(cache.quats, axis=1,
                                                             keepdims=True))
    dq_raw = np.einsum("nij,nqij->nq", dRq, dRdq)
    qn = cache.quats / np.linalg.norm(cache.quats, axis=1, keepdims=True)
    dq = (dq_raw - qn * np.sum(dq_raw * qn, axis=1, keepdims=True)) \
        / np.linalg.norm(cache.quats, axis=1, keepdims=True)

    sel = cache.sorted_idx
    grads.positions[sel] = dpos
    grads.log_scales[sel] = dls
    grads.rotations[sel] = dq
    grads.opacity_logits[sel] = dlogit
    grads.colors[sel] = dcolor
    grads.screen_grad_norm[sel] = np.hypot(du * (W / 2.0), dv * (H / 2.0))
    return grads


def save_cloud(cloud: GaussianCloud, path) -> None:
    """Binary table: magic, version u32, count u64, then per-gaussian rows of
    14 little-endian float32 (position, log_scale, quaternion, logit, rgb)."""
    n = len(cloud)
    table = np.empty((n, FIELDS_PER_GAUSSIAN), dtype="<f4")
    table[:, 0:3] = cloud.positions
    table[:, 3:6] = cloud.log_scales
    table[:, 6:10] = cloud.rotations
    table[:, 10] = cloud.opacity_logits
    table[:, 11:14] = cloud.colors
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, n))
        fh.write(table.tobytes())


def load_cloud(path) -> GaussianCloud:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CloudError(f"bad magic in cloud file {path}")
    version, n = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise CloudError(f"unsupported cloud format version {version}")
    expected = 16 + n * FIELDS_PER_GAUSSIAN * 4
    if len(data) != expected:
        raise CloudError(f"cloud file truncated: {len(data)} bytes, expected {expected}")
    table = np.frombuffer(data, dtype="<f4", offset=16).reshape(n, FIELDS_PER_GAUSSIAN)
    table = table.astype(np.float64)
    return GaussianCloud(
        positions=table[:, 0:3].copy(), log_scales=table[:, 3:6].copy(),
        rotations=table[:, 6:10].copy(), opacity_logits=table[:, 10].copy(),
        colors=table[:, 11:14].copy())


def dump_cloud_text(cloud: GaussianCloud) -> str:
    """Plain-text debug dump, one gaussian per line."""
    out = io.StringIO()
    out.write(f"orbitalsplat-cloud v{FORMAT_VERSION} n={len(cloud)}\n")
    out.write("# px py pz ls_x ls_y ls_z qw qx qy qz logit r g b\n")
    for i in range(len(cloud)):
        row = np.concatenate([cloud.positions[i], cloud.log_scales[i],
                              cloud.rotations[i], [cloud.opacity_logits[i]],
                              cloud.colors[i]])
        out.write(" ".join(f"{v:.9g}" for v in row) + "\n")
    return out.getvalue()
