"""Wavefront OBJ/MTL parsing into an indexed triangle mesh, plus writing back.

Faces with more than three corners are fan-triangulated at the first corner.
Texture decode is limited to PNG and TGA. A missing or unreadable material
falls back to flat gray so rendering stays total.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

FALLBACK_DIFFUSE = (0.7, 0.7, 0.7)


class MeshError(ValueError):
    """Structured parse/validation failure; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None, directive: str | None = None):
        self.line = line
        self.directive = directive
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class TextureImage:
    """Decoded texture, RGBA float in [0,1]."""

    rgba: np.ndarray  # (H, W, 4) float64

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]


@dataclass
class Material:
    name: str
    diffuse_rgb: tuple[float, float, float] = FALLBACK_DIFFUSE
    diffuse_texture: Optional[TextureImage] = None


@dataclass
class Mesh:
    """Indexed triangle mesh. Index -1 marks an absent uv/normal reference."""

    vertices: np.ndarray                    # (V, 3) float64
    tri_v: np.ndarray                       # (T, 3) int64 vertex indices
    tri_vt: np.ndarray                      # (T, 3) int64 uv indices or -1
    tri_vn: np.ndarray                      # (T, 3) int64 normal indices or -1
    uvs: Optional[np.ndarray] = None        # (U, 2) float64
    normals: Optional[np.ndarray] = None    # (N, 3) float64, unit length
    material_ids: Optional[np.ndarray] = None   # (T,) int64, -1 = no material
    materials: list[Material] = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.tri_v.shape[0])


def _parse_face_corner(token: str, counts: tuple[int, int, int], line_no: int):
    """Resolve one `v[/vt[/vn]]` face corner, handling negative (relative) indices."""
    parts = token.split("/")
    if len(parts) > 3:
        raise MeshError(f"malformed face corner '{token}'", line_no, "f")
    idx = []
    for slot, (part, count) in enumerate(zip(parts + [""] * (3 - len(parts)), counts)):
        if part == "":
            idx.append(-1)
            continue
        try:
            i = int(part)
        except ValueError:
            raise MeshError(f"non-integer index '{part}' in face corner '{token}'",
                            line_no, "f") from None
        if i == 0:
            raise MeshError("face index 0 is not valid in OBJ", line_no, "f")
        resolved = count + i if i < 0 else i - 1
        if not 0 <= resolved < count:
            raise MeshError(
                f"index {i} out of range (have {count} entries) in corner '{token}'",
                line_no, "f")
        idx.append(resolved)
    return idx[0], idx[1], idx[2]


def _decode_texture(data: bytes) -> TextureImage:
    with Image.open(io.BytesIO(data)) as im:
        if im.format not in ("PNG", "TGA"):
            raise MeshError(f"unsupported texture format {im.format} (PNG/TGA only)")
        arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
    return TextureImage(rgba=arr)


def _parse_mtl(text: str, resolver: Optional[Callable[[str], Optional[bytes]]]):
    """Parse an MTL library; texture loads go through the resolver."""
    materials: dict[str, Material] = {}
    current: Optional[Material] = None
    warnings = 0
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "newmtl" and len(parts) >= 2:
            current = Material(name=parts[1])
            materials[parts[1]] = current
        elif key == "Kd" and current is not None and len(parts) >= 4:
            try:
                r, g, b = (min(1.0, max(0.0, float(v))) for v in parts[1:4])
                current.diffuse_rgb = (r, g, b)
            except ValueError:
                warnings += 1
        elif key == "map_Kd" and current is not None and len(parts) >= 2:
            tex_name = parts[-1]
            data = resolver(tex_name) if resolver else None
            if data is None:
                warnings += 1
                continue
            try:
                current.diffuse_texture = _decode_texture(data)
            except (MeshError, OSError):
                warnings += 1
        # other MTL directives (Ka, Ks, Ns, d, illum, ...) are ignored
    return materials, warnings


@dataclass
class ParseStats:
    unknown_directives: int = 0
    material_warnings: int = 0
    dropped_degenerate: int = 0


def parse_obj(data, material_resolver: Optional[Callable[[str], Optional[bytes]]] = None,
              stats: Optional[ParseStats] = None) -> Mesh:
    """Parse OBJ text or bytes into a Mesh with its material list.

    `material_resolver(name)` returns the bytes of a referenced .mtl or texture
    file, or None when unavailable (then a gray fallback material is used).
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8", errors="replace")
    else:
        text = data
    stats = stats if stats is not None else ParseStats()

    vertices: list[list[float]] = []
    uvs: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[tuple] = []          # (corners, material_index)
    materials: list[Material] = []
    mat_index: dict[str, int] = {}
    current_mat = -1

    def intern_material(name: str, library: dict[str, Material]) -> int:
        if name not in mat_index:
            mat = library.get(name)
            if mat is None:
                mat = Material(name=name, diffuse_rgb=FALLBACK_DIFFUSE)
                stats.material_warnings += 1
            mat_index[name] = len(materials)
            materials.append(mat)
        return mat_index[name]

    library: dict[str, Material] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "v":
                if len(parts) < 4:
                    raise MeshError("vertex needs 3 coordinates", line_no, "v")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif key == "vt":
                if len(parts) < 3:
                    raise MeshError("uv needs 2 coordinates", line_no, "vt")
                uvs.append([float(parts[1]), float(parts[2])])
            elif key == "vn":
                if len(parts) < 4:
                    raise MeshError("normal needs 3 coordinates", line_no, "vn")
                normals.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif key == "f":
                if len(parts) < 4:
                    raise MeshError("face needs at least 3 corners", line_no, "f")
                counts = (len(vertices), len(uvs), len(normals))
                corners = [_parse_face_corner(tok, counts, line_no) for tok in parts[1:]]
                # fan triangulation anchored at the first corner
                for i in range(1, len(corners) - 1):
                    faces.append(((corners[0], corners[i], corners[i + 1]), current_mat))
            elif key == "usemtl":
                if len(parts) >= 2:
                    current_mat = intern_material(parts[1], library)
            elif key == "mtllib":
                for name in parts[1:]:
                    data_bytes = material_resolver(name) if material_resolver else None
                    if data_bytes is None:
                        stats.material_warnings += 1
                        continue
                    mtl_text = data_bytes.decode("utf-8", errors="replace")
                    parsed, warns = _parse_mtl(mtl_text, material_resolver)
                    library.update(parsed)
                    stats.material_warnings += warns
            elif key in ("o", "g", "s"):
                pass  # grouping and smoothing are not used downstream
            else:
                stats.unknown_directives += 1
        except ValueError as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"malformed numeric field: {exc}", line_no, key) from None

    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tri_v = np.full((len(faces), 3), -1, dtype=np.int64)
    tri_vt = np.full((len(faces), 3), -1, dtype=np.int64)
    tri_vn = np.full((len(faces), 3), -1, dtype=np.int64)
    mat_ids = np.full(len(faces), -1, dtype=np.int64)
    for t, (corners, mat) in enumerate(faces):
        for c in range(3):
            tri_v[t, c], tri_vt[t, c], tri_vn[t, c] = corners[c]
        mat_ids[t] = mat

    # drop trivially degenerate triangles (repeated vertex index)
    if len(faces):
        keep = ((tri_v[:, 0] != tri_v[:, 1]) & (tri_v[:, 1] != tri_v[:, 2])
                & (tri_v[:, 0] != tri_v[:, 2]))
        stats.dropped_degenerate += int((~keep).sum())
        tri_v, tri_vt, tri_vn, mat_ids = tri_v[keep], tri_vt[keep], tri_vn[keep], mat_ids[keep]

    return Mesh(
        vertices=verts,
        tri_v=tri_v, tri_vt=tri_vt, tri_vn=tri_vn,
        uvs=np.asarray(uvs, dtype=np.float64).reshape(-1, 2) if uvs else None,
        normals=np.asarray(normals, dtype=np.float64).reshape(-1, 3) if normals else None,
        material_ids=mat_ids,
        materials=materials,
    )


def parse_obj_file(path) -> tuple[Mesh, ParseStats]:
    """Parse an OBJ from disk, resolving .mtl and texture paths next to it."""
    path = Path(path)
    base = path.parent

    def resolver(name: str) -> Optional[bytes]:
        candidate = base / name
        try:
            return candidate.read_bytes()
        except OSError:
            return None

    stats = ParseStats()
    mesh = parse_obj(path.read_bytes(), material_resolver=resolver, stats=stats)
    return mesh, stats


def write_obj(mesh: Mesh) -> str:
    """Serialize back to OBJ text with 9-significant-digit vertices."""
    out = io.StringIO()
    for v in mesh.vertices:
        out.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
    if mesh.uvs is not None:
        for uv in mesh.uvs:
            out.write(f"vt {uv[0]:.9g} {uv[1]:.9g}\n")
    if mesh.normals is not None:
        for n in mesh.normals:
            out.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")

    current_mat = None
    for t in range(mesh.n_triangles):
        if mesh.material_ids is not None:
            mat = int(mesh.material_ids[t])
            if mat != current_mat and 0 <= mat < len(mesh.materials):
                out.write(f"usemtl {mesh.materials[mat].name}\n")
                current_mat = mat
        corners = []
        for c in range(3):
            v = mesh.tri_v[t, c] + 1
            vt = mesh.tri_vt[t, c]
            vn = mesh.tri_vn[t, c]
            if vt >= 0 and vn >= 0:
                corners.append(f"{v}/{vt + 1}/{vn + 1}")
            elif vt >= 0:
                corners.append(f"{v}/{vt + 1}")
            elif vn >= 0:
                corners.append(f"{v}//{vn + 1}")
            else:
                corners.append(f"{v}")
        out.write("f " + " ".join(corners) + "\n")
    return out.getvalue()


def write_mtl(materials: list[Material], texture_names: dict[str, str] | None = None) -> str:
    """Serialize a material library; texture_names maps material -> image filename."""
    out = io.StringIO()
    for mat in materials:
        out.write(f"newmtl {mat.name}\n")
        r, g, b = mat.diffuse_rgb
        out.write(f"Kd {r:.6g} {g:.6g} {b:.6g}\n")
        if texture_names and mat.name in texture_names:
            out.write(f"map_Kd {texture_names[mat.name]}\n")
    return out.getvalue()


def normalize_to_unit_sphere(mesh: Mesh):
    """Recenter on the AABB centroid and scale so max vertex norm is 1.

    Returns (normalized mesh, center, scale) with original = v/scale + center.
    """
    if mesh.n_vertices == 0:
        raise MeshError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = (lo + hi) / 2.0
    shifted = mesh.vertices - center
    extent = np.linalg.norm(shifted, axis=1).max()
    if extent <= 1e-12:
        raise MeshError("mesh has zero extent (all vertices identical)")
    scale = 1.0 / extent
    out = Mesh(
        vertices=shifted * scale,
        tri_v=mesh.tri_v, tri_vt=mesh.tri_vt, tri_vn=mesh.tri_vn,
        uvs=mesh.uvs, normals=mesh.normals,
        material_ids=mesh.material_ids, materials=mesh.materials,
    )
    return out, center, scale


def compute_vertex_normals(mesh: Mesh) -> Mesh:
    """Per-vertex normals as the normalized area-weighted sum of incident
    triangle normals. Replaces any existing normals; degenerate triangles
    contribute zero weight."""
    accum = np.zeros((mesh.n_vertices, 3), dtype=np.float64)
    v = mesh.vertices
    t = mesh.tri_v
    # cross product magnitude is twice the triangle area: area weighting for free
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    face_n = np.cross(e1, e2)
    for c in range(3):
        np.add.at(accum, t[:, c], face_n)
    norms = np.linalg.norm(accum, axis=1, keepdims=True)
    unit = np.where(norms > 1e-12, accum / np.maximum(norms, 1e-12), 0.0)
    tri_vn = mesh.tri_v.copy()  # normals now indexed like vertices
    return Mesh(
        vertices=mesh.vertices,
        tri_v=mesh.tri_v, tri_vt=mesh.tri_vt, tri_vn=tri_vn,
        uvs=mesh.uvs, normals=unit,
        material_ids=mesh.material_ids, materials=mesh.materials,
    )
