"""Gaussian cloud to textured mesh: density grid, isosurface, texture baking.

The density field is the opacity-weighted sum of gaussian kernels with a
hard 3-sigma Mahalanobis cutoff. Isosurfaces come from marching cubes with
linear edge interpolation; texel colors are baked by back-projecting splat
renders from a set of views with visibility and view-angle weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .gaussians import GaussianCloud, covariances3d, render
from .meshio import Material, Mesh, TextureImage

DENSITY_CUTOFF_MAHAL2 = 9.0  # 3 sigma
BLOCK = 16                   # grid samples per culling block, each axis
DEFAULT_GRID_RESOLUTION = 128
DEFAULT_ISO = 1.0
DEFAULT_ATLAS_SIZE = 1024
BAKE_DEPTH_TOLERANCE = 0.01


class ExtractError(ValueError):
    pass


@dataclass
class DensityGrid:
    """Scalar samples on the cell-corner lattice of an axis-aligned box."""

    values: np.ndarray      # (R, R, R) float64, indexed [ix, iy, iz]
    lo: np.ndarray          # (3,)
    hi: np.ndarray          # (3,)

    @property
    def resolution(self) -> int:
        return int(self.values.shape[0])

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolution - 1)


@dataclass
class TexturedMesh:
    mesh: Mesh
    texture: TextureImage


def _inverse_covariances(cloud: GaussianCloud):
    cov = covariances3d(cloud)
    return np.linalg.inv(cov), cov


def density_at(cloud: GaussianCloud, x) -> float:
    """Density at one point: sum of alpha_i * exp(-mahalanobis^2 / 2), with
    gaussians beyond 3 sigma contributing exactly zero."""
    return float(density_many(cloud, np.asarray(x, dtype=np.float64).reshape(1, 3))[0])


def density_many(cloud: GaussianCloud, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros(points.shape[0])
    if len(cloud) == 0:
        return out
    inv_cov, _ = _inverse_covariances(cloud)
    alphas = cloud.opacities
    for i in range(len(cloud)):
        d = points - cloud.positions[i]
        m2 = np.einsum("pi,ij,pj->p", d, inv_cov[i], d)
        inside = m2 <= DENSITY_CUTOFF_MAHAL2
        out[inside] += alphas[i] * np.exp(-0.5 * m2[inside])
    return out


def default_bounds(cloud: GaussianCloud) -> tuple[np.ndarray, np.ndarray]:
    """Cloud AABB inflated by three times the largest scale, cubified."""
    if len(cloud) == 0:
        return np.full(3, -1.0), np.full(3, 1.0)
    pad = 3.0 * float(np.exp(cloud.log_scales).max())
    lo = cloud.positions.min(axis=0) - pad
    hi = cloud.positions.max(axis=0) + pad
    center = (lo + hi) / 2
    half = float((hi - lo).max()) / 2
    return center - half, center + half


def sample_grid(cloud: GaussianCloud, resolution: int, bounds=None) -> DensityGrid:
    """Evaluate the density on a cubic lattice with block culling.

    Gaussians are assigned to 16^3-sample blocks by 3-sigma AABB overlap, so
    values match naive evaluation exactly (the cutoff makes culling lossless).
    """
    if resolution < 2:
        raise ExtractError(f"grid resolution must be >= 2, got {resolution}")
    if bounds is None:
        lo, hi = default_bounds(cloud)
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi - lo <= 0):
        raise ExtractError(f"degenerate bounds: {lo} .. {hi}")

    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    values = np.zeros((resolution,) * 3)
    if len(cloud) == 0:
        return DensityGrid(values=values, lo=lo, hi=hi)

    inv_cov, cov = _inverse_covariances(cloud)
    alphas = cloud.opacities
    # per-gaussian 3-sigma world AABB from the covariance diagonal
    sig = np.sqrt(np.einsum("nkk->nk", cov))
    g_lo = cloud.positions - 3.0 * sig
    g_hi = cloud.positions + 3.0 * sig

    n_blocks = (resolution + BLOCK - 1) // BLOCK
    for bx in range(n_blocks):
        x0, x1 = bx * BLOCK, min(resolution, (bx + 1) * BLOCK)
        for by in range(n_blocks):
            y0, y1 = by * BLOCK, min(resolution, (by + 1) * BLOCK)
            for bz in range(n_blocks):
                z0, z1 = bz * BLOCK, min(resolution, (bz + 1) * BLOCK)
                b_lo = np.array([axes[0][x0], axes[1][y0], axes[2][z0]])
                b_hi = np.array([axes[0][x1 - 1], axes[1][y1 - 1], axes[2][z1 - 1]])
                hit = np.flatnonzero(
                    (g_lo <= b_hi).all(axis=1) & (g_hi >= b_lo).all(axis=1))
                if hit.size == 0:
                    continue
                gx, gy, gz = np.meshgrid(axes[0][x0:x1], axes[1][y0:y1],
                                         axes[2][z0:z1], indexing="ij")
                pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
                acc = np.zeros(pts.shape[0])
                for i in hit:
                    d = pts - cloud.positions[i]
                    m2 = np.einsum("pi,ij,pj->p", d, inv_cov[i], d)
                    inside = m2 <= DENSITY_CUTOFF_MAHAL2
                    acc[inside] += alphas[i] * np.exp(-0.5 * m2[inside])
                values[x0:x1, y0:y1, z0:z1] = acc.reshape(x1 - x0, y1 - y0, z1 - z0)
    return DensityGrid(values=values, lo=lo, hi=hi)


def marching_cubes(grid: DensityGrid, iso: float) -> Mesh:
    """Isosurface triangulation with linear edge interpolation.

    Output is oriented outward (positive enclosed volume against the
    density gradient) with vertices deduplicated along shared edges. A level
    outside the sampled range yields an empty mesh.
    """
    vmin, vmax = float(grid.values.min()), float(grid.values.max())
    if not vmin < iso < vmax:
        return Mesh(vertices=np.zeros((0, 3)),
                    tri_v=np.zeros((0, 3), dtype=np.int64),
                    tri_vt=np.full((0, 3), -1, dtype=np.int64),
                    tri_vn=np.full((0, 3), -1, dtype=np.int64))
    verts, faces, _normals, _vals = measure.marching_cubes(
        grid.values, level=iso, spacing=tuple(grid.cell_size))
    verts = verts + grid.lo[None, :]
    faces = faces.astype(np.int64)

    # enforce consistent outward orientation via the signed volume
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    signed_6v = float(np.einsum("ij,ij->", v0, np.cross(v1, v2)))
    if signed_6v < 0:
        faces = faces[:, ::-1]

    return Mesh(vertices=verts,
                tri_v=faces,
                tri_vt=np.full(faces.shape, -1, dtype=np.int64),
                tri_vn=np.full(faces.shape, -1, dtype=np.int64))


def extract_mesh(cloud: GaussianCloud, resolution: int = DEFAULT_GRID_RESOLUTION,
                 iso: float = DEFAULT_ISO, bounds=None) -> Mesh:
    """Grid sampling + marching cubes with the default bounds rule."""
    return marching_cubes(sample_grid(cloud, resolution, bounds), iso)


def _chart_layout(n_tris: int, atlas_size: int):
    """Per-triangle right-triangle charts packed on a square grid."""
    grid_n = max(1, int(math.ceil(math.sqrt(n_tris))))
    cell = atlas_size / grid_n
    margin = min(1.5, cell / 8.0)
    return grid_n, cell, margin


def bake_texture(cloud: GaussianCloud, mesh: Mesh, views, atlas_size: int = DEFAULT_ATLAS_SIZE,
                 background_rgb=(0.0, 0.0, 0.0)) -> TexturedMesh:
    """Bake splat-rendered colors into a per-triangle-chart UV atlas.

    For every texel the color is the visibility-and-angle weighted average
    over all views (weight max(0, n.v)^2, occlusion tested against the splat
    depth map with a fixed tolerance). Texels no view could see are filled
    from the nearest valid texel.
    """
    if mesh.n_triangles == 0:
        raise ExtractError("bake_texture: mesh is empty")
    if not views:
        raise ExtractError("bake_texture: need at least one view")

    grid_n, cell, margin = _chart_layout(mesh.n_triangles, atlas_size)
    inner = cell - 2.0 * margin

    # chart corner uv per triangle (u right, v up; atlas row 0 is v=1)
    tri_ids = np.arange(mesh.n_triangles)
    cell_x = (tri_ids % grid_n) * cell
    cell_y = (tri_ids // grid_n) * cell
    corners_px = np.stack([
        np.stack([cell_x + margin, cell_y + margin], axis=1),
        np.stack([cell_x + margin + inner, cell_y + margin], axis=1),
        np.stack([cell_x + margin, cell_y + margin + inner], axis=1),
    ], axis=1)                                                    # (T,3,2)
    uvs = np.empty_like(corners_px)
    uvs[:, :, 0] = corners_px[:, :, 0] / atlas_size
    uvs[:, :, 1] = 1.0 - corners_px[:, :, 1] / atlas_size

    # texel -> surface sample tables
    texel_xy = []       # atlas pixel coords (col, row)
    texel_pos = []      # 3D position
    texel_norm = []     # face normal
    v = mesh.vertices
    t = mesh.tri_v
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    face_n = np.cross(e1, e2)
    nn = np.linalg.norm(face_n, axis=1, keepdims=True)
    face_n = np.where(nn > 1e-12, face_n / np.maximum(nn, 1e-12), 0.0)

    span = max(1, int(math.ceil(cell)))
    for tri in range(mesh.n_triangles):
        ox, oy = cell_x[tri], cell_y[tri]
        px0, py0 = int(math.floor(ox)), int(math.floor(oy))
        for py in range(py0, min(atlas_size, py0 + span)):
            for px in range(px0, min(atlas_size, px0 + span)):
                lx = px + 0.5 - (ox + margin)
                ly = py + 0.5 - (oy + margin)
                b1 = lx / inner
                b2 = ly / inner
                b0 = 1.0 - b1 - b2
                # small negative slack fills the margin ring against seam bleed
                if b0 < -0.12 or b1 < -0.12 or b2 < -0.12:
                    continue
                b0c, b1c, b2c = max(b0, 0.0), max(b1, 0.0), max(b2, 0.0)
                s = b0c + b1c + b2c
                b0c, b1c, b2c = b0c / s, b1c / s, b2c / s
                pos = b0c * v[t[tri, 0]] + b1c * v[t[tri, 1]] + b2c * v[t[tri, 2]]
                texel_xy.append((px, py))
                texel_pos.append(pos)
                texel_norm.append(face_n[tri])

    texel_xy = np.asarray(texel_xy, dtype=np.int64)
    texel_pos = np.asarray(texel_pos)
    texel_norm = np.asarray(texel_norm)

    weight_sum = np.zeros(texel_pos.shape[0])
    color_sum = np.zeros((texel_pos.shape[0], 3))

    for intr, pose in views:
        out = render(cloud, intr, pose, background_rgb)
        rgb = out.color.rgb
        alpha = out.color.alpha
        depth_map = out.depth

        R = pose.rotation_matrix()
        eye = pose.position.as_array()
        tc = (texel_pos - eye) @ R
        depth = -tc[:, 2]
        ok = depth > intr.near
        f = intr.focal
        zs = np.where(ok, depth, 1.0)
        u = intr.cx + f * tc[:, 0] / zs
        vv = intr.cy - f * tc[:, 1] / zs
        px = np.floor(u).astype(np.int64)
        py = np.floor(vv).astype(np.int64)
        ok &= (px >= 0) & (px < intr.width) & (py >= 0) & (py < intr.height)
        pxc = np.clip(px, 0, intr.width - 1)
        pyc = np.clip(py, 0, intr.height - 1)

        visible = ok & (depth <= depth_map[pyc, pxc] + BAKE_DEPTH_TOLERANCE)
        view_dir = eye[None, :] - texel_pos
        view_dir /= np.maximum(np.linalg.norm(view_dir, axis=1, keepdims=True), 1e-12)
        ang = np.maximum(0.0, np.einsum("pi,pi->p", texel_norm, view_dir))
        w = np.where(visible, ang * ang * alpha[pyc, pxc], 0.0)

        color_sum += w[:, None] * rgb[pyc, pxc]
        weight_sum += w

    atlas = np.zeros((atlas_size, atlas_size, 4))
    valid = weight_sum > 0
    cols = np.zeros_like(color_sum)
    cols[valid] = color_sum[valid] / weight_sum[valid, None]

    if valid.any() and (~valid).any():
        tree = cKDTree(texel_xy[valid])
        _d, nearest = tree.query(texel_xy[~valid])
        cols[~valid] = cols[valid][nearest]
    elif not valid.any():
        cols[:] = 0.5  # nothing visible from any view: neutral gray

    atlas[texel_xy[:, 1], texel_xy[:, 0], :3] = np.clip(cols, 0.0, 1.0)
    atlas[texel_xy[:, 1], texel_xy[:, 0], 3] = 1.0

    uv_flat = uvs.reshape(-1, 2)
    tri_vt = np.arange(mesh.n_triangles * 3, dtype=np.int64).reshape(-1, 3)
    material = Material(name="baked", diffuse_rgb=(1.0, 1.0, 1.0),
                        diffuse_texture=TextureImage(rgba=atlas))
    out_mesh = Mesh(
        vertices=mesh.vertices.copy(),
        tri_v=mesh.tri_v.copy(),
        tri_vt=tri_vt,
        tri_vn=mesh.tri_vn.copy(),
        uvs=uv_flat,
        normals=mesh.normals,
        material_ids=np.zeros(mesh.n_triangles, dtype=np.int64),
        materials=[material],
    )
    tm = TexturedMesh(mesh=out_mesh, texture=material.diffuse_texture)
    tm._texel_xy = texel_xy          # kept for the optional refinement pass
    tm._texel_pos = texel_pos
    tm._texel_norm = texel_norm
    return tm


def refine_texture(tm: TexturedMesh, cloud: GaussianCloud, views, rounds: int = 3,
                   step: float = 0.5, background_rgb=(0.0, 0.0, 0.0)) -> TexturedMesh:
    """Optional iterative texel refinement (off by default in the pipeline).

    Each round re-renders the textured mesh per view and nudges every visible
    texel toward the splat render at its projected pixel. Requires a
    TexturedMesh fresh from bake_texture (it reuses the texel tables).
    """
    from .raster import RenderSettings, Shading, render_mesh

    if not hasattr(tm, "_texel_xy"):
        raise ExtractError("refine_texture needs a TexturedMesh from bake_texture")
    texel_xy, texel_pos, texel_norm = tm._texel_xy, tm._texel_pos, tm._texel_norm
    atlas = tm.texture.rgba
    settings = RenderSettings(shading=Shading.FLAT)

    for _round in range(rounds):
        delta = np.zeros((texel_pos.shape[0], 3))
        weight = np.zeros(texel_pos.shape[0])
        for intr, pose in views:
            splat = render(cloud, intr, pose, background_rgb)
            meshed = render_mesh(tm.mesh, intr, pose, settings)
            diff = splat.color.rgb - meshed.color.rgb

            R = pose.rotation_matrix()
            eye = pose.position.as_array()
            tc = (texel_pos - eye) @ R
            depth = -tc[:, 2]
            ok = depth > intr.near
            f = intr.focal
            zs = np.where(ok, depth, 1.0)
            px = np.floor(intr.cx + f * tc[:, 0] / zs).astype(np.int64)
            py = np.floor(intr.cy - f * tc[:, 1] / zs).astype(np.int64)
            ok &= (px >= 0) & (px < intr.width) & (py >= 0) & (py < intr.height)
            pxc = np.clip(px, 0, intr.width - 1)
            pyc = np.clip(py, 0, intr.height - 1)
            visible = ok & (depth <= splat.depth[pyc, pxc] + BAKE_DEPTH_TOLERANCE)
            view_dir = eye[None, :] - texel_pos
            view_dir /= np.maximum(np.linalg.norm(view_dir, axis=1, keepdims=True), 1e-12)
            ang = np.maximum(0.0, np.einsum("pi,pi->p", texel_norm, view_dir))
            w = np.where(visible, ang * ang, 0.0)
            delta += w[:, None] * diff[pyc, pxc]
            weight += w
        upd = weight > 0
        current = atlas[texel_xy[upd, 1], texel_xy[upd, 0], :3]
        nudge = step * delta[upd] / weight[upd, None]
        atlas[texel_xy[upd, 1], texel_xy[upd, 0], :3] = np.clip(current + nudge, 0.0, 1.0)
    return tm
