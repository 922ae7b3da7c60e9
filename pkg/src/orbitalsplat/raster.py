"""Software triangle rasterizer and multi-view dataset generation.

Z-buffered rasterization with perspective-correct barycentric interpolation.
Pixel centers sit at (x+0.5, y+0.5); a pixel is covered iff its center is
inside the triangle, with the top-left rule breaking boundary ties. No
anti-aliasing. Rendering is deterministic: identical inputs give identical
framebuffers and identical PNG bytes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

from . import imageops
from .geometry import (CameraIntrinsics, CameraPose, generate_paper_poses,
                       orbit_view_labels, pose_record)
from .imageops import ImageRGBA
from .meshio import Mesh, compute_vertex_normals, normalize_to_unit_sphere, parse_obj_file

DEFAULT_RENDER_SIZE = 512
AMBIENT = 0.15


class Shading(Enum):
    FLAT = "flat"
    LAMBERTIAN = "lambertian"
    TEXTURED = "textured"


@dataclass(frozen=True)
class RenderSettings:
    shading: Shading = Shading.TEXTURED
    light_dir: Optional[tuple[float, float, float]] = None  # None = headlight
    background_alpha: float = 0.0
    background_rgb: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.background_alpha not in (0.0, 1.0):
            raise ValueError("background_alpha must be 0 or 1")
        if self.light_dir is not None:
            n = np.linalg.norm(self.light_dir)
            if abs(n - 1.0) > 1e-6:
                raise ValueError("light_dir must be unit length")


@dataclass
class Framebuffer:
    color: ImageRGBA
    depth: np.ndarray  # (H, W) float64, +inf where empty


@dataclass
class DatasetManifest:
    model_id: str
    split: str = "train"                 # train | validation | test
    chunk_index: int = 0
    views: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "split": self.split,
                "chunk_index": self.chunk_index, "views": self.views}

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        return DatasetManifest(model_id=d["model_id"], split=d["split"],
                               chunk_index=int(d["chunk_index"]), views=list(d["views"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        return DatasetManifest.from_dict(json.loads(Path(path).read_text()))


@njit(cache=True)
def _fill_triangles(xy, zview, height, width, zbuf, tid, bary):
    """Z-buffer fill. xy: (T,3,2) screen coords, zview: (T,3) view depths > 0.

    Writes the winning triangle index and perspective-corrected barycentrics
    per pixel. Strict depth comparison keeps the earlier triangle on exact ties.
    """
    for t in range(xy.shape[0]):
        x0, y0 = xy[t, 0, 0], xy[t, 0, 1]
        x1, y1 = xy[t, 1, 0], xy[t, 1, 1]
        x2, y2 = xy[t, 2, 0], xy[t, 2, 1]
        z0, z1, z2 = zview[t, 0], zview[t, 1], zview[t, 2]

        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        swapped = False
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area2 = -area2
            swapped = True

        minx = min(x0, min(x1, x2))
        maxx = max(x0, max(x1, x2))
        miny = min(y0, min(y1, y2))
        maxy = max(y0, max(y1, y2))
        ix0 = max(0, int(np.ceil(minx - 0.5)))
        ix1 = min(width - 1, int(np.floor(maxx - 0.5)))
        iy0 = max(0, int(np.ceil(miny - 0.5)))
        iy1 = min(height - 1, int(np.floor(maxy - 0.5)))
        if ix1 < ix0 or iy1 < iy0:
            continue

        # directed edges: e0 v1->v2 (opposite v0), e1 v2->v0, e2 v0->v1
        dx0, dy0 = x2 - x1, y2 - y1
        dx1, dy1 = x0 - x2, y0 - y2
        dx2, dy2 = x1 - x0, y1 - y0
        # top-left rule: boundary pixels belong to top (dy==0, dx>0) or left (dy<0) edges
        ok0 = dy0 < 0.0 or (dy0 == 0.0 and dx0 > 0.0)
        ok1 = dy1 < 0.0 or (dy1 == 0.0 and dx1 > 0.0)
        ok2 = dy2 < 0.0 or (dy2 == 0.0 and dx2 > 0.0)

        inv_area = 1.0 / area2
        iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2

        for py in range(iy0, iy1 + 1):
            cy = py + 0.5
            for px in range(ix0, ix1 + 1):
                cx = px + 0.5
                e0 = dx0 * (cy - y1) - dy0 * (cx - x1)
                e1 = dx1 * (cy - y2) - dy1 * (cx - x2)
                e2 = dx2 * (cy - y0) - dy2 * (cx - x0)
                if e0 < 0.0 or e1 < 0.0 or e2 < 0.0:
                    continue
                if e0 == 0.0 and not ok0:
                    continue
                if e1 == 0.0 and not ok1:
                    continue
                if e2 == 0.0 and not ok2:
                    continue
                l0 = e0 * inv_area
                l1 = e1 * inv_area
                l2 = e2 * inv_area
                w0 = l0 * iz0
                w1 = l1 * iz1
                w2 = l2 * iz2
                depth = 1.0 / (w0 + w1 + w2)
                if depth < zbuf[py, px]:
                    zbuf[py, px] = depth
                    tid[py, px] = t
                    s = w0 + w1 + w2
                    if swapped:
                        bary[py, px, 0] = w0 / s
                        bary[py, px, 1] = w2 / s
                        bary[py, px, 2] = w1 / s
                    else:
                        bary[py, px, 0] = w0 / s
                        bary[py, px, 1] = w1 / s
                        bary[py, px, 2] = w2 / s


def _clip_near(corners_cam, attrs, near):
    """Sutherland-Hodgman clip of one triangle against the plane depth=near.

    corners_cam: (3,3) camera-space positions; attrs: (3,K) per-corner
    attributes interpolated linearly. Returns lists of clipped triangles.
    """
    depths = -corners_cam[:, 2]
    out_pos, out_attr = [], []
    for i in range(3):
        j = (i + 1) % 3
        pi, pj = corners_cam[i], corners_cam[j]
        di, dj = depths[i], depths[j]
        if di >= near:
            out_pos.append(pi)
            out_attr.append(attrs[i])
        if (di >= near) != (dj >= near):
            t = (near - di) / (dj - di)
            out_pos.append(pi + t * (pj - pi))
            out_attr.append(attrs[i] + t * (attrs[j] - attrs[i]))
    tris = []
    for k in range(1, len(out_pos) - 1):
        tris.append((np.stack([out_pos[0], out_pos[k], out_pos[k + 1]]),
                     np.stack([out_attr[0], out_attr[k], out_attr[k + 1]])))
    return tris


def render_mesh(mesh: Mesh, intr: CameraIntrinsics, pose: CameraPose,
                settings: RenderSettings = RenderSettings()) -> Framebuffer:
    """Render a normalized mesh from one camera into an RGBA + depth framebuffer."""
    H, W = intr.height, intr.width
    zbuf = np.full((H, W), np.inf, dtype=np.float64)
    tid = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3), dtype=np.float64)

    if mesh.n_triangles == 0:
        return _compose_framebuffer(zbuf, tid, None, None, settings, pose)

    R = pose.rotation_matrix()
    eye = pose.position.as_array()
    cam = (mesh.vertices - eye) @ R  # camera-space positions (world->cam = R^T)

    tv = mesh.tri_v
    corner_cam = cam[tv]                          # (T,3,3)
    depths = -corner_cam[:, :, 2]                 # view depth per corner

    # per-corner attributes: uv(2) + world normal(3) + diffuse handled per-tri
    if mesh.uvs is not None:
        uv_idx = np.where(mesh.tri_vt >= 0, mesh.tri_vt, 0)
        corner_uv = np.where((mesh.tri_vt >= 0)[..., None], mesh.uvs[uv_idx], 0.0)
    else:
        corner_uv = np.zeros((mesh.n_triangles, 3, 2), dtype=np.float64)

    e1 = mesh.vertices[tv[:, 1]] - mesh.vertices[tv[:, 0]]
    e2 = mesh.vertices[tv[:, 2]] - mesh.vertices[tv[:, 0]]
    face_n = np.cross(e1, e2)
    fn_norm = np.linalg.norm(face_n, axis=1, keepdims=True)
    face_n = np.where(fn_norm > 1e-12, face_n / np.maximum(fn_norm, 1e-12), 0.0)
    if mesh.normals is not None:
        n_idx = np.where(mesh.tri_vn >= 0, mesh.tri_vn, 0)
        corner_n = np.where((mesh.tri_vn >= 0)[..., None], mesh.normals[n_idx],
                            face_n[:, None, :])
    else:
        corner_n = np.broadcast_to(face_n[:, None, :], (mesh.n_triangles, 3, 3)).copy()

    mat_ids = (mesh.material_ids if mesh.material_ids is not None
               else np.full(mesh.n_triangles, -1, dtype=np.int64))

    attrs = np.concatenate([corner_uv, corner_n], axis=2)  # (T,3,5)

    # near-plane handling: fast path for fully visible, polygon clip otherwise
    fully_in = (depths >= intr.near).all(axis=1)
    any_in = (depths >= intr.near).any(axis=1)
    keep_cam = [corner_cam[fully_in]]
    keep_attr = [attrs[fully_in]]
    keep_mat = [mat_ids[fully_in]]
    for t in np.flatnonzero(any_in & ~fully_in):
        for pos_c, attr_c in _clip_near(corner_cam[t], attrs[t], intr.near):
            keep_cam.append(pos_c[None])
            keep_attr.append(attr_c[None])
            keep_mat.append(mat_ids[t:t + 1])
    corner_cam = np.concatenate(keep_cam, axis=0)
    attrs = np.concatenate(keep_attr, axis=0)
    mat_ids = np.concatenate(keep_mat, axis=0)

    if corner_cam.shape[0] == 0:
        return _compose_framebuffer(zbuf, tid, None, None, settings, pose)

    zview = -corner_cam[:, :, 2]
    f = intr.focal
    xy = np.empty_like(corner_cam[:, :, :2])
    xy[:, :, 0] = intr.cx + f * corner_cam[:, :, 0] / zview
    xy[:, :, 1] = intr.cy - f * corner_cam[:, :, 1] / zview

    _fill_triangles(np.ascontiguousarray(xy), np.ascontiguousarray(zview),
                    H, W, zbuf, tid, bary)

    return _compose_framebuffer(zbuf, tid, bary, (attrs, mat_ids, mesh.materials),
                                settings, pose)


def _compose_framebuffer(zbuf, tid, bary, shade_data, settings: RenderSettings,
                         pose: CameraPose) -> Framebuffer:
    H, W = zbuf.shape
    covered = tid >= 0
    rgb = np.zeros((H, W, 3), dtype=np.float64)
    alpha = np.zeros((H, W), dtype=np.float64)

    if covered.any() and shade_data is not None:
        attrs, mat_ids, materials = shade_data
        ts = tid[covered]
        b = bary[covered]                              # (P,3)
        uv = np.einsum("pc,pck->pk", b, attrs[ts, :, 0:2])
        normal = np.einsum("pc,pck->pk", b, attrs[ts, :, 2:5])
        nn = np.linalg.norm(normal, axis=1, keepdims=True)
        normal = np.where(nn > 1e-12, normal / np.maximum(nn, 1e-12), 0.0)

        mats = mat_ids[ts]
        diffuse = np.full((ts.shape[0], 3), 0.7, dtype=np.float64)
        for m in range(len(materials)):
            sel = mats == m
            if sel.any():
                diffuse[sel] = materials[m].diffuse_rgb

        if settings.shading in (Shading.TEXTURED, Shading.FLAT):
            for m in range(len(materials)):
                tex = materials[m].diffuse_texture
                if tex is None:
                    continue
                sel = mats == m
                if sel.any():
                    diffuse[sel] = _sample_texture_bilinear(tex.rgba, uv[sel])

        if settings.shading is Shading.FLAT:
            shade = diffuse
        else:
            if settings.light_dir is not None:
                light = np.asarray(settings.light_dir, dtype=np.float64)
            else:
                light = -pose.forward()  # headlight: from the scene toward the camera
            lam = np.maximum(0.0, normal @ light)
            shade = diffuse * np.minimum(1.0, lam + AMBIENT)[:, None]

        rgb[covered] = np.clip(shade, 0.0, 1.0)
        alpha[covered] = 1.0

    if settings.background_alpha == 1.0:
        rgb[~covered] = settings.background_rgb
        alpha[~covered] = 1.0

    color = ImageRGBA.from_rgb_alpha(rgb, alpha)
    return Framebuffer(color=color, depth=zbuf)


def _sample_texture_bilinear(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear texture sampling with wrap addressing. OBJ v runs bottom-up."""
    h, w = tex.shape[:2]
    u = np.mod(uv[:, 0], 1.0) * w - 0.5
    v = (1.0 - np.mod(uv[:, 1], 1.0)) * h - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    x0m, x1m = np.mod(x0, w), np.mod(x0 + 1, w)
    y0m, y1m = np.mod(y0, h), np.mod(y0 + 1, h)
    c00 = tex[y0m, x0m, :3]
    c01 = tex[y0m, x1m, :3]
    c10 = tex[y1m, x0m, :3]
    c11 = tex[y1m, x1m, :3]
    return (c00 * (1 - fx) * (1 - fy) + c01 * fx * (1 - fy)
            + c10 * (1 - fx) * fy + c11 * fx * fy)


def render_dataset(model_path, out_dir, radius: float = 2.0,
                   intr: Optional[CameraIntrinsics] = None,
                   settings: RenderSettings = RenderSettings()) -> DatasetManifest:
    """Render the 48-view orbit sweep of one model and write PNGs + manifest.

    Output files are `{plane}_{index:02d}.png` plus `manifest.json`. Running
    twice on the same input produces byte-identical files.
    """
    model_path = Path(model_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if intr is None:
        intr = CameraIntrinsics(fov_y_deg=49.1, width=DEFAULT_RENDER_SIZE,
                                height=DEFAULT_RENDER_SIZE)

    mesh, _stats = parse_obj_file(model_path)
    mesh, _center, _scale = normalize_to_unit_sphere(mesh)
    if mesh.normals is None:
        mesh = compute_vertex_normals(mesh)

    poses = generate_paper_poses(radius)
    labels = orbit_view_labels()
    manifest = DatasetManifest(model_id=model_path.stem)
    for pose, (plane, index, angle) in zip(poses, labels):
        fb = render_mesh(mesh, intr, pose, settings)
        name = f"{plane.value}_{index:02d}.png"
        imageops.save_png(fb.color, out_dir / name)
        rec = pose_record(plane, index, pose, intr, angle)
        rec["image_path"] = name
        manifest.views.append(rec)
    manifest.save(out_dir / "manifest.json")
    return manifest


def assign_splits(model_ids: list[str], n_validation: int, seed: int) -> dict[str, str]:
    """Deterministic shuffled train/validation assignment under a seed."""
    if n_validation >= len(model_ids):
        raise ValueError(f"n_validation={n_validation} must be < model count {len(model_ids)}")
    ordered = sorted(model_ids)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    assignment = {}
    for rank, idx in enumerate(perm):
        assignment[ordered[idx]] = "validation" if rank < n_validation else "train"
    return assignment


def chunk_manifests(manifests: list[DatasetManifest], n_chunks: int) -> list[DatasetManifest]:
    """Round-robin train manifests into chunks; sizes differ by at most one.

    Non-train manifests keep chunk_index 0 (chunking drives incremental
    training, which consumes the train split only).
    """
    if n_chunks < 1:
        raise ValueError(f"n_chunks must be >= 1, got {n_chunks}")
    out = []
    train_rank = 0
    for m in manifests:
        if m.split == "train":
            out.append(dataclasses.replace(m, chunk_index=train_rank % n_chunks))
            train_rank += 1
        else:
            out.append(dataclasses.replace(m, chunk_index=0))
    return out


def write_corpus_index(path, manifests: list[DatasetManifest], n_chunks: int,
                       seed: int) -> None:
    """Corpus-level index: every model's split and chunk, plus the documented
    downstream fine-tune defaults kept for provenance."""
    index = {
        "n_models": len(manifests),
        "n_chunks": n_chunks,
        "seed": seed,
        "views_per_model": 48,
        "finetune_defaults": {"learning_rate": 5e-5, "batch_size": 1, "chunks": 48},
        "models": [
            {"model_id": m.model_id, "split": m.split, "chunk_index": m.chunk_index}
            for m in manifests
        ],
    }
    Path(path).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
