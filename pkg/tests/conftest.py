"""Shared fixtures: the OBJ model corpus and image helpers."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from orbitalsplat import imageops
from orbitalsplat.imageops import ImageRGBA

# Unit-free cube with vertices at +-1. Quad corner orders put every fan
# diagonal on a corner of the inscribed tetrahedron, so area-weighted vertex
# normals come out symmetric at all eight corners.
CUBE_OBJ = """\
# cube fixture
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
f 4 3 2 1
f 5 6 7 8
f 2 6 5 1
f 4 8 7 3
f 5 8 4 1
f 2 3 7 6
"""

RELATIVE_INDEX_OBJ = """\
v 0 0 0
v 1 0 0
v 0 1 0
f -3 -2 -1
"""

MALFORMED_OBJ = """\
v 0 0 0
v 1.0 oops 2.0
v 0 1 0
f 1 2 3
"""

MULTI_MATERIAL_OBJ = """\
mtllib parts.mtl
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
usemtl red_part
f 1 2 3 4
usemtl blue_part
f 5 6 7 8
"""

MULTI_MATERIAL_MTL = """\
newmtl red_part
Kd 0.9 0.1 0.1
newmtl blue_part
Kd 0.1 0.1 0.9
"""


def make_quad_sphere(stacks: int = 24, slices: int = 32) -> str:
    """Lat-long sphere of quads (triangles at the poles), radius 1."""
    lines = ["# quad sphere fixture"]
    verts = []
    for i in range(1, stacks):
        theta = math.pi * i / stacks
        for j in range(slices):
            phi = 2 * math.pi * j / slices
            verts.append((math.sin(theta) * math.cos(phi),
                          math.sin(theta) * math.sin(phi),
                          math.cos(theta)))
    north = len(verts) + 1
    verts.append((0.0, 0.0, 1.0))
    south = len(verts) + 1
    verts.append((0.0, 0.0, -1.0))
    for v in verts:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")

    def ring(i, j):
        return i * slices + (j % slices) + 1

    for i in range(stacks - 2):
        for j in range(slices):
            lines.append(f"f {ring(i, j)} {ring(i, j + 1)} {ring(i + 1, j + 1)} {ring(i + 1, j)}")
    for j in range(slices):
        lines.append(f"f {north} {ring(0, j)} {ring(0, j + 1)}")
        lines.append(f"f {south} {ring(stacks - 2, j + 1)} {ring(stacks - 2, j)}")
    return "\n".join(lines) + "\n"


FACE_COLORS = [
    (0.85, 0.15, 0.15),
    (0.15, 0.75, 0.15),
    (0.2, 0.3, 0.9),
    (0.9, 0.85, 0.2),
    (0.85, 0.2, 0.85),
    (0.2, 0.85, 0.85),
]


def make_textured_cube(dir_path: Path) -> Path:
    """Cube whose six faces sample six distinct flat colors from a PNG atlas."""
    atlas = np.zeros((2 * 32, 3 * 32, 4))
    atlas[:, :, 3] = 1.0
    for f, col in enumerate(FACE_COLORS):
        r, c = divmod(f, 3)
        atlas[r * 32:(r + 1) * 32, c * 32:(c + 1) * 32, :3] = col
    imageops.save_png(ImageRGBA(atlas), dir_path / "cube_atlas.png")

    lines = ["mtllib cube_tex.mtl"]
    corners = [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
               (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]
    for v in corners:
        lines.append(f"v {v[0]} {v[1]} {v[2]}")
    faces = ["f 4 3 2 1", "f 5 6 7 8", "f 2 6 5 1",
             "f 4 8 7 3", "f 5 8 4 1", "f 2 3 7 6"]
    # per-face uv quad centered inside its atlas cell (inset kills bleed)
    uv_lines, face_lines = [], []
    for f, face in enumerate(faces):
        r, c = divmod(f, 3)
        u0, u1 = (c + 0.2) / 3, (c + 0.8) / 3
        v0, v1 = 1 - (r + 0.8) / 2, 1 - (r + 0.2) / 2
        base = 4 * f + 1
        uv_lines += [f"vt {u0:.6f} {v0:.6f}", f"vt {u1:.6f} {v0:.6f}",
                     f"vt {u1:.6f} {v1:.6f}", f"vt {u0:.6f} {v1:.6f}"]
        ids = face.split()[1:]
        face_lines.append("usemtl atlas")
        face_lines.append("f " + " ".join(
            f"{vid}/{base + k}" for k, vid in enumerate(ids)))
    obj = "\n".join(lines + uv_lines + face_lines) + "\n"
    (dir_path / "cube_tex.obj").write_text(obj)
    (dir_path / "cube_tex.mtl").write_text(
        "newmtl atlas\nKd 1 1 1\nmap_Kd cube_atlas.png\n")
    return dir_path / "cube_tex.obj"


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory) -> Path:
    """The OBJ test corpus: cube, quad-sphere, multi-material, relative-index,
    malformed, and a textured cube."""
    root = tmp_path_factory.mktemp("corpus")
    (root / "cube.obj").write_text(CUBE_OBJ)
    (root / "quad_sphere.obj").write_text(make_quad_sphere())
    (root / "multi_material.obj").write_text(MULTI_MATERIAL_OBJ)
    (root / "parts.mtl").write_text(MULTI_MATERIAL_MTL)
    (root / "relative_index.obj").write_text(RELATIVE_INDEX_OBJ)
    (root / "malformed.obj").write_text(MALFORMED_OBJ)
    make_textured_cube(root)
    return root


def random_image(rng, h=32, w=32) -> ImageRGBA:
    return ImageRGBA(rng.random((h, w, 4)))


def solid_image(h, w, rgba) -> ImageRGBA:
    return ImageRGBA.solid(h, w, rgba)
