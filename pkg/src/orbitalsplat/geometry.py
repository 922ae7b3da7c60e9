"""Vectors, quaternions, camera models, and orbital view-pose generation.

Angles are degrees at the API boundary and radians internally. All values
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEG = math.pi / 180.0

# Views per orbit plane and the resulting full-sweep count (16 * 3 planes).
VIEWS_PER_PLANE = 16
TOTAL_ORBIT_VIEWS = 48

DEFAULT_ORBIT_RADIUS = 2.0
DEFAULT_FOV_Y_DEG = 49.1


class GeometryError(ValueError):
    """Raised on degenerate or out-of-contract geometric input."""


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise GeometryError(f"non-finite vector component: {self}")

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def __add__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, w-first. Normalized on construction (norm within 1e-9 after)."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise GeometryError("zero-norm quaternion")
        if abs(n - 1.0) > 1e-9:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_matrix(R: np.ndarray) -> "UnitQuaternion":
        """Rotation matrix (3x3, det +1) to quaternion, w >= 0 convention."""
        t = R[0, 0] + R[1, 1] + R[2, 2]
        if t > 0:
            s = 0.5 / math.sqrt(t + 1.0)
            w = 0.25 / s
            x = (R[2, 1] - R[1, 2]) * s
            y = (R[0, 2] - R[2, 0]) * s
            z = (R[1, 0] - R[0, 1]) * s
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            w = (R[2, 1] - R[1, 2]) / s
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            w = (R[0, 2] - R[2, 0]) / s
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            w = (R[1, 0] - R[0, 1]) / s
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
        if w < 0:
            w, x, y, z = -w, -x, -y, -z
        return UnitQuaternion(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())


def quat_to_matrix(q) -> np.ndarray:
    """Quaternion (w, x, y, z; not necessarily unit) to 3x3 rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise GeometryError("zero-norm quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: vertical FOV in degrees, image size, clip range."""

    fov_y_deg: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.fov_y_deg < 180.0:
            raise GeometryError(f"fov_y_deg out of range: {self.fov_y_deg}")
        if self.width < 1 or self.height < 1:
            raise GeometryError("image dimensions must be >= 1")
        if not self.near < self.far:
            raise GeometryError("near must be < far")

    @property
    def focal(self) -> float:
        """Focal length in pixels: height / (2 tan(fov_y / 2))."""
        return self.height / (2.0 * math.tan(0.5 * self.fov_y_deg * DEG))

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world pose. The camera looks down its local -Z; +Y is up."""

    position: Vec3
    rotation: UnitQuaternion

    def rotation_matrix(self) -> np.ndarray:
        """3x3 camera-to-world rotation (columns: right, up, backward)."""
        return self.rotation.to_matrix()

    def view_matrix(self) -> np.ndarray:
        """4x4 world-to-camera rigid transform."""
        R = self.rotation_matrix()
        m = np.eye(4)
        m[:3, :3] = R.T
        m[:3, 3] = -R.T @ self.position.as_array()
        return m

    def forward(self) -> np.ndarray:
        """World-space view direction (-Z axis of the camera frame)."""
        return -self.rotation_matrix()[:, 2]


class OrbitPlane(Enum):
    XY = "xy"
    YZ = "yz"
    XZ = "xz"


@dataclass(frozen=True)
class RelativePose:
    """Spherical offset between two origin-centered poses; azimuth in (-180, 180]."""

    delta_elevation_deg: float
    delta_azimuth_deg: float
    delta_radius: float


def look_at(eye: Vec3, target: Vec3, up: Vec3) -> CameraPose:
    """Pose at `eye` whose -Z axis points at `target`, +Y in the plane of `up`."""
    e = eye.as_array()
    t = target.as_array()
    view = t - e
    dist = np.linalg.norm(view)
    if dist <= 1e-9:
        raise GeometryError("look_at: eye and target coincide")
    fwd = view / dist
    u = up.as_array()
    un = np.linalg.norm(u)
    if un <= 1e-12:
        raise GeometryError("look_at: zero-length up vector")
    u = u / un
    # up parallel to the view direction (within 1e-6 rad) leaves roll undefined
    if np.linalg.norm(np.cross(fwd, u)) < 1e-6:
        raise GeometryError("look_at: up vector parallel to view direction")
    right = np.cross(fwd, u)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    R = np.stack([right, true_up, -fwd], axis=1)
    return CameraPose(position=eye, rotation=UnitQuaternion.from_matrix(R))


# Up vector per orbit plane; never parallel to any in-plane view direction.
_PLANE_UP = {
    OrbitPlane.XY: Vec3(0.0, 0.0, 1.0),
    OrbitPlane.XZ: Vec3(0.0, 1.0, 0.0),
    OrbitPlane.YZ: Vec3(1.0, 0.0, 0.0),
}


def _orbit_position(plane: OrbitPlane, radius: float, theta: float) -> Vec3:
    c, s = radius * math.cos(theta), radius * math.sin(theta)
    if plane is OrbitPlane.XY:
        return Vec3(c, s, 0.0)
    if plane is OrbitPlane.YZ:
        return Vec3(0.0, c, s)
    return Vec3(c, 0.0, s)  # XZ


def generate_orbit_poses(plane: OrbitPlane, radius: float, count: int) -> list[CameraPose]:
    """`count` poses evenly spaced on the plane's circle, all looking at the origin.

    Each plane's sweep starts on the positive first axis of its name (XY and
    XZ at +X, YZ at +Y) and advances by 360/count degrees.
    """
    if radius <= 0:
        raise GeometryError(f"orbit radius must be positive, got {radius}")
    if count < 1:
        raise GeometryError(f"orbit count must be >= 1, got {count}")
    origin = Vec3(0.0, 0.0, 0.0)
    up = _PLANE_UP[plane]
    poses = []
    for i in range(count):
        theta = 2.0 * math.pi * i / count
        poses.append(look_at(_orbit_position(plane, radius, theta), origin, up))
    return poses


def generate_paper_poses(radius: float) -> list[CameraPose]:
    """The full 48-view sweep: 16 views per plane over XY, YZ, XZ at 22.5° steps.

    Plane-major order, angle ascending within each plane. Poses duplicated at
    plane intersections are retained so the count is exactly 48.
    """
    poses = []
    for plane in (OrbitPlane.XY, OrbitPlane.YZ, OrbitPlane.XZ):
        poses.extend(generate_orbit_poses(plane, radius, VIEWS_PER_PLANE))
    return poses


def orbit_view_labels() -> list[tuple[OrbitPlane, int, float]]:
    """(plane, index, angle_deg) labels matching generate_paper_poses order."""
    labels = []
    for plane in (OrbitPlane.XY, OrbitPlane.YZ, OrbitPlane.XZ):
        for i in range(VIEWS_PER_PLANE):
            labels.append((plane, i, 360.0 * i / VIEWS_PER_PLANE))
    return labels


def project_point(intr: CameraIntrinsics, pose: CameraPose, p: Vec3):
    """Pinhole projection of a world point: (u, v, depth along camera -Z).

    Raises GeometryError when the point is at or behind the camera plane.
    """
    R = pose.rotation_matrix()
    t = R.T @ (p.as_array() - pose.position.as_array())
    depth = -t[2]
    if depth <= 0:
        raise GeometryError("project_point: point at or behind the camera")
    f = intr.focal
    u = intr.cx + f * t[0] / depth
    v = intr.cy - f * t[1] / depth
    return u, v, depth


def wrap_angle_deg(a: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def spherical_of(pose: CameraPose) -> tuple[float, float, float]:
    """(elevation_deg above the XY plane, azimuth_deg in the XY plane, radius)."""
    p = pose.position
    r = p.norm()
    if r <= 1e-12:
        raise GeometryError("pose at the origin has no spherical coordinates")
    elevation = math.asin(max(-1.0, min(1.0, p.z / r))) / DEG
    azimuth = math.atan2(p.y, p.x) / DEG
    return elevation, azimuth, r


def _assert_origin_centered(pose: CameraPose, tol_rad: float = 1e-6):
    p = pose.position.as_array()
    r = np.linalg.norm(p)
    if r <= 1e-12:
        raise GeometryError("pose positioned at the origin")
    # angle between the view direction and the direction to the origin,
    # via atan2(cross, dot) which stays exact for tiny angles
    fwd = pose.forward()
    direction = -p / r
    ang = math.atan2(float(np.linalg.norm(np.cross(fwd, direction))),
                     float(np.dot(fwd, direction)))
    if ang > tol_rad:
        raise GeometryError("pose does not look at the origin")


def relative_spherical(reference: CameraPose, target: CameraPose) -> RelativePose:
    """Spherical deltas (target minus reference) for origin-centered poses."""
    _assert_origin_centered(reference)
    _assert_origin_centered(target)
    el_r, az_r, r_r = spherical_of(reference)
    el_t, az_t, r_t = spherical_of(target)
    return RelativePose(
        delta_elevation_deg=el_t - el_r,
        delta_azimuth_deg=wrap_angle_deg(az_t - az_r),
        delta_radius=r_t - r_r,
    )


def pose_record(plane: OrbitPlane, index: int, pose: CameraPose,
                intr: CameraIntrinsics, angle_deg: float) -> dict:
    """Serializable per-view pose record (quaternion stored w-first)."""
    return {
        "plane": plane.value,
        "index": index,
        "angle_deg": angle_deg,
        "position": [pose.position.x, pose.position.y, pose.position.z],
        "quaternion": [pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z],
        "fov_y_deg": intr.fov_y_deg,
        "width": intr.width,
        "height": intr.height,
    }


def pose_from_record(rec: dict) -> CameraPose:
    qw, qx, qy, qz = rec["quaternion"]
    px, py, pz = rec["position"]
    return CameraPose(position=Vec3(px, py, pz), rotation=UnitQuaternion(qw, qx, qy, qz))
