import math

import numpy as np
import pytest

from orbitalsplat.gaussians import GaussianCloud
from orbitalsplat.geometry import CameraIntrinsics
from orbitalsplat.meshextract import (DensityGrid, ExtractError, bake_texture,
                                      density_at, density_many, extract_mesh,
                                      marching_cubes, sample_grid)
from orbitalsplat.meshio import Mesh
from orbitalsplat.raster import RenderSettings, Shading, render_mesh
from orbitalsplat.reconstruct import axis_view_poses


def single_gaussian(alpha=0.9, s=0.2, center=(0, 0, 0)):
    logit = math.log(alpha / (1 - alpha))
    return GaussianCloud(
        positions=np.array([center], dtype=np.float64),
        log_scales=np.full((1, 3), math.log(s)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        opacity_logits=np.array([logit]),
        colors=np.array([[0.8, 0.2, 0.2]]))


def random_cloud(seed, n):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(
        positions=rng.uniform(-0.4, 0.4, (n, 3)),
        log_scales=rng.uniform(math.log(0.03), math.log(0.15), (n, 3)),
        rotations=q,
        opacity_logits=rng.uniform(-1.5, 2.5, n),
        colors=rng.uniform(0, 1, (n, 3)))


class TestDensityAt:
    def test_empty_cloud_zero(self):
        assert density_at(GaussianCloud.empty(), [0.1, 0.2, 0.3]) == 0.0

    def test_at_center_equals_alpha(self):
        cloud = single_gaussian(alpha=0.9)
        assert density_at(cloud, [0, 0, 0]) == pytest.approx(0.9, abs=1e-12)

    def test_one_sigma_value(self):
        cloud = single_gaussian(alpha=0.9, s=0.2)
        v = density_at(cloud, [0.2, 0, 0])
        assert v == pytest.approx(0.9 * math.exp(-0.5), abs=1e-9)

    def test_truncated_beyond_three_sigma(self):
        cloud = single_gaussian(alpha=0.9, s=0.2)
        assert density_at(cloud, [0.61, 0, 0]) == 0.0
        assert density_at(cloud, [0.59, 0, 0]) > 0.0

    def test_truncation_error_bound(self):
        # untruncated evaluation differs by < exp(-9/2) * sum(alpha) per sample
        for seed in range(3):
            cloud = random_cloud(seed, 8)
            rng = np.random.default_rng(seed + 50)
            pts = rng.uniform(-0.8, 0.8, (64, 3))
            truncated = density_many(cloud, pts)
            from orbitalsplat.gaussians import covariances3d
            inv = np.linalg.inv(covariances3d(cloud))
            alphas = cloud.opacities
            full = np.zeros(len(pts))
            for i in range(len(cloud)):
                d = pts - cloud.positions[i]
                m2 = np.einsum("pi,ij,pj->p", d, inv[i], d)
                full += alphas[i] * np.exp(-0.5 * m2)
            bound = math.exp(-4.5) * alphas.sum()
            assert np.abs(full - truncated).max() < bound


class TestSampleGrid:
    def test_empty_cloud_all_zero(self):
        grid = sample_grid(GaussianCloud.empty(), 8, ((-1, -1, -1), (1, 1, 1)))
        assert (grid.values == 0).all()

    def test_symmetric_gaussian_symmetric_grid(self):
        cloud = single_gaussian(alpha=0.8, s=0.25)
        grid = sample_grid(cloud, 17, ((-0.6, -0.6, -0.6), (0.6, 0.6, 0.6)))
        v = grid.values
        np.testing.assert_allclose(v, v[::-1, :, :], atol=1e-9)
        np.testing.assert_allclose(v, v[:, ::-1, :], atol=1e-9)
        np.testing.assert_allclose(v, v[:, :, ::-1], atol=1e-9)

    def test_block_culled_matches_naive(self):
        cloud = random_cloud(7, 20)
        lo, hi = np.full(3, -0.8), np.full(3, 0.8)
        grid = sample_grid(cloud, 32, (lo, hi))
        axes = [np.linspace(lo[k], hi[k], 32) for k in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        naive = density_many(cloud, pts).reshape(32, 32, 32)
        assert np.abs(grid.values - naive).max() < 1e-6

    def test_degenerate_bounds_rejected(self):
        with pytest.raises(ExtractError):
            sample_grid(single_gaussian(), 8, ((0, 0, 0), (0, 1, 1)))

    def test_resolution_too_small_rejected(self):
        with pytest.raises(ExtractError):
            sample_grid(single_gaussian(), 1)


def edge_counts(mesh: Mesh):
    counts = {}
    for tri in mesh.tri_v:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


class TestMarchingCubes:
    def test_constant_grid_empty_mesh(self):
        grid = DensityGrid(values=np.full((8, 8, 8), 0.5),
                           lo=np.zeros(3), hi=np.ones(3))
        mesh = marching_cubes(grid, 1.0)
        assert mesh.n_triangles == 0

    def test_analytic_sphere_level_set(self):
        res = 64
        axes = np.linspace(-1, 1, res)
        gx, gy, gz = np.meshgrid(axes, axes, axes, indexing="ij")
        radius = 0.55
        field = radius - np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)
        grid = DensityGrid(values=field, lo=np.full(3, -1.0), hi=np.full(3, 1.0))
        mesh = marching_cubes(grid, 0.0)
        assert mesh.n_triangles > 0
        radii = np.linalg.norm(mesh.vertices, axis=1)
        cell_diag = np.linalg.norm(grid.cell_size)
        assert np.abs(radii - radius).max() < 1.5 * cell_diag

    def test_gaussian_level_set_radius(self):
        alpha, s, tau = 0.9, 0.2, 0.3
        cloud = single_gaussian(alpha=alpha, s=s)
        grid = sample_grid(cloud, 64, ((-0.6, -0.6, -0.6), (0.6, 0.6, 0.6)))
        mesh = marching_cubes(grid, tau)
        expected_r = s * math.sqrt(2 * math.log(alpha / tau))
        radii = np.linalg.norm(mesh.vertices, axis=1)
        cell = grid.cell_size.max()
        assert mesh.n_triangles > 0
        assert np.abs(radii - expected_r).max() < 2 * cell

    def test_watertight_closed_surface(self):
        cloud = single_gaussian(alpha=0.9, s=0.2)
        mesh = extract_mesh(cloud, resolution=48, iso=0.3)
        counts = edge_counts(mesh)
        assert counts and set(counts.values()) == {2}

    def test_outward_orientation(self):
        cloud = single_gaussian(alpha=0.9, s=0.2)
        mesh = extract_mesh(cloud, resolution=48, iso=0.3)
        v = mesh.vertices
        t = mesh.tri_v
        centers = v[t].mean(axis=1)
        normals = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        outward = np.einsum("ij,ij->i", normals, centers)
        assert (outward > 0).mean() > 0.99

    def test_iso_outside_range_empty(self):
        cloud = single_gaussian(alpha=0.5)
        grid = sample_grid(cloud, 16)
        assert marching_cubes(grid, 2.0).n_triangles == 0


def cube_mesh(half=0.35):
    corners = np.array([
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=np.float64) * half
    quads = [(3, 2, 1, 0), (4, 5, 6, 7), (1, 5, 4, 0),
             (3, 7, 6, 2), (4, 7, 3, 0), (1, 2, 6, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    t = np.asarray(tris, dtype=np.int64)
    return Mesh(vertices=corners, tri_v=t,
                tri_vt=np.full(t.shape, -1, dtype=np.int64),
                tri_vn=np.full(t.shape, -1, dtype=np.int64))


def cube_surface_cloud(half=0.35, per_side=9, colors=None):
    """Gaussians tiling each cube face, optionally one color per face."""
    pos, col = [], []
    lin = np.linspace(-half, half, per_side)
    u, v = np.meshgrid(lin, lin)
    u, v = u.ravel(), v.ravel()
    faces = [
        (np.stack([u, v, np.full_like(u, +half)], axis=1)),
        (np.stack([u, v, np.full_like(u, -half)], axis=1)),
        (np.stack([np.full_like(u, +half), u, v], axis=1)),
        (np.stack([np.full_like(u, -half), u, v], axis=1)),
        (np.stack([u, np.full_like(u, +half), v], axis=1)),
        (np.stack([u, np.full_like(u, -half), v], axis=1)),
    ]
    for k, f in enumerate(faces):
        pos.append(f)
        c = colors[k] if colors else (0.9, 0.1, 0.1)
        col.append(np.tile(c, (f.shape[0], 1)))
    pos = np.concatenate(pos)
    col = np.concatenate(col)
    n = pos.shape[0]
    spacing = 2 * half / (per_side - 1)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianCloud(positions=pos, log_scales=np.full((n, 3), math.log(spacing * 0.7)),
                         rotations=quats, opacity_logits=np.full(n, 4.0), colors=col)


class TestBakeTexture:
    VIEWS = [(CameraIntrinsics(fov_y_deg=49.1, width=128, height=128), p)
             for _n, p in axis_view_poses(2.0)]

    def test_uniform_red_cloud_red_texels(self):
        cloud = cube_surface_cloud()
        tm = bake_texture(cloud, cube_mesh(), self.VIEWS, atlas_size=128)
        atlas = tm.texture.rgba
        texels = atlas[atlas[:, :, 3] > 0]
        assert texels.shape[0] > 0
        err = np.abs(texels[:, :3] - np.array([0.9, 0.1, 0.1]))
        assert np.percentile(err, 95) < 1e-2

    def test_single_view_back_faces_inpainted(self):
        cloud = cube_surface_cloud()
        tm = bake_texture(cloud, cube_mesh(), self.VIEWS[:1], atlas_size=64)
        atlas = tm.texture.rgba
        assert (atlas[:, :, 3] > 0).any()

    def test_face_colors_survive_round_trip(self):
        colors = [(0.9, 0.1, 0.1), (0.1, 0.9, 0.1), (0.1, 0.1, 0.9),
                  (0.9, 0.9, 0.1), (0.9, 0.1, 0.9), (0.1, 0.9, 0.9)]
        # cloud faces ordered +z,-z,+x,-x,+y,-y
        cloud = cube_surface_cloud(colors=colors)
        tm = bake_texture(cloud, cube_mesh(), self.VIEWS, atlas_size=256)
        intr = CameraIntrinsics(fov_y_deg=49.1, width=64, height=64)
        expected_by_axis = {
            "pos_z": colors[0], "neg_z": colors[1], "pos_x": colors[2],
            "neg_x": colors[3], "pos_y": colors[4], "neg_y": colors[5]}
        for name, pose in axis_view_poses(2.0):
            fb = render_mesh(tm.mesh, intr, pose, RenderSettings(shading=Shading.FLAT))
            center = fb.color.rgb[32, 32]
            np.testing.assert_allclose(center, expected_by_axis[name], atol=5e-2,
                                       err_msg=name)

    def test_deterministic(self):
        cloud = cube_surface_cloud()
        t1 = bake_texture(cloud, cube_mesh(), self.VIEWS[:2], atlas_size=64)
        t2 = bake_texture(cloud, cube_mesh(), self.VIEWS[:2], atlas_size=64)
        np.testing.assert_array_equal(t1.texture.rgba, t2.texture.rgba)
        np.testing.assert_array_equal(t1.mesh.uvs, t2.mesh.uvs)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ExtractError):
            bake_texture(cube_surface_cloud(), cube_mesh(), [])
        empty = Mesh(vertices=np.zeros((0, 3)),
                     tri_v=np.zeros((0, 3), dtype=np.int64),
                     tri_vt=np.zeros((0, 3), dtype=np.int64),
                     tri_vn=np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(ExtractError):
            bake_texture(cube_surface_cloud(), empty, self.VIEWS)


class TestRefineTexture:
    def test_refinement_does_not_degrade_and_stays_in_range(self):
        from orbitalsplat.meshextract import refine_texture
        colors = [(0.9, 0.1, 0.1), (0.1, 0.9, 0.1), (0.1, 0.1, 0.9),
                  (0.9, 0.9, 0.1), (0.9, 0.1, 0.9), (0.1, 0.9, 0.9)]
        cloud = cube_surface_cloud(colors=colors)
        views = TestBakeTexture.VIEWS
        tm = bake_texture(cloud, cube_mesh(), views, atlas_size=128)
        before = tm.texture.rgba.copy()
        tm = refine_texture(tm, cloud, views, rounds=2)
        after = tm.texture.rgba
        assert after[..., :3].min() >= 0.0 and after[..., :3].max() <= 1.0
        # alpha layout untouched, only colors nudged
        np.testing.assert_array_equal(before[..., 3], after[..., 3])

    def test_requires_freshly_baked_mesh(self):
        from orbitalsplat.meshextract import TexturedMesh, refine_texture
        from orbitalsplat.meshio import TextureImage
        fake = TexturedMesh(mesh=cube_mesh(), texture=TextureImage(rgba=np.zeros((8, 8, 4))))
        with pytest.raises(ExtractError):
            refine_texture(fake, cube_surface_cloud(), TestBakeTexture.VIEWS)
