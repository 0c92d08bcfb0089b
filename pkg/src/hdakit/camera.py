"""Pinhole camera model, rigid poses, and navigation-driven region prediction.

Conventions used throughout the package:

  World frame (right-handed):  x east, y north, z up.  Gravity is supplied
  per NavRecord as a unit vector pointing DOWN (toward the surface).

  Camera frame (computer vision standard):  x right, y down, z forward
  along the boresight.  The attitude quaternion rotates world-frame
  vectors into the camera frame.

  Pixels:  u along +x_cam (columns), v along +y_cam (rows), origin at the
  top-left corner of the image.  The pixel at array index [i, j] covers
  [j, j+1) x [i, i+1) with its center at (j + 0.5, i + 0.5).

Quaternions are scalar-first (w, x, y, z), matching the nav flat-file
column order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCamera, OffImage, OutOfBounds

_UNIT_TOL = 1e-12


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-first)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical sign: w >= 0 keeps serialization stable
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix applying the same rotation as unit quaternion q."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Inverse of quat_to_matrix, via the trace method (numerically safe)."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a*b; rotation b followed by rotation a."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; square pixels, no distortion."""

    focal_length_px: float
    principal_point: tuple[float, float]
    width_px: int
    height_px: int

    def __post_init__(self):
        u0, v0 = self.principal_point
        if self.focal_length_px <= 0:
            raise ValueError("focal_length_px must be positive")
        if not (0 <= u0 < self.width_px and 0 <= v0 < self.height_px):
            raise ValueError("principal point outside image")


@dataclass(frozen=True)
class Pose:
    """Camera pose: world position (m) and world->camera attitude quaternion."""

    position: np.ndarray
    attitude: np.ndarray  # (w, x, y, z), unit norm

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        q = np.asarray(self.attitude, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("attitude quaternion must be unit norm")
        object.__setattr__(self, "attitude", q)

    @property
    def rotation_wc(self) -> np.ndarray:
        """3x3 matrix taking world-frame vectors into the camera frame."""
        return quat_to_matrix(self.attitude)

    def to_camera(self, pts_world: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts_world, dtype=float))
        return (pts - self.position) @ self.rotation_wc.T

    def to_world(self, pts_cam: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts_cam, dtype=float))
        return pts @ self.rotation_wc + self.position

    def boresight(self) -> np.ndarray:
        """Unit view direction (camera +z) expressed in the world frame."""
        return self.rotation_wc.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class NavRecord:
    """Time-tagged pose with boresight laser range and local gravity direction."""

    time: float
    pose: Pose
    range_m: float
    gravity_dir: np.ndarray  # unit vector, points down

    def __post_init__(self):
        g = np.asarray(self.gravity_dir, dtype=float)
        if abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise ValueError("gravity_dir must be unit norm")
        object.__setattr__(self, "gravity_dir", g)
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")


@dataclass(frozen=True)
class RelativePose:
    """Motion from camera 1 to camera 2.

    rotation: 3x3 matrix taking cam1-frame vectors into the cam2 frame.
    translation: cam2 position minus cam1 position, expressed in cam1 frame.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @property
    def baseline_m(self) -> float:
        return float(np.linalg.norm(self.translation))

    @staticmethod
    def identity() -> "RelativePose":
        return RelativePose(np.eye(3), np.zeros(3))


# ---------------------------------------------------------------------------
# operations

def project(cam: CameraModel, pose: Pose, world_pt) -> tuple[float, float]:
    """Perspective-project a world point. Raises BehindCamera for depth <= 0."""
    p = pose.to_camera(world_pt)[0]
    if p[2] <= 0:
        raise BehindCamera(f"point depth {p[2]:.6g} <= 0")
    u0, v0 = cam.principal_point
    f = cam.focal_length_px
    return (u0 + f * p[0] / p[2], v0 + f * p[1] / p[2])


def project_many(cam: CameraModel, pose: Pose, pts_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns (n x 2 pixels, valid mask: depth > 0)."""
    p = pose.to_camera(pts_world)
    z = p[:, 2]
    valid = z > 0
    zsafe = np.where(valid, z, 1.0)
    u0, v0 = cam.principal_point
    f = cam.focal_length_px
    uv = np.column_stack([u0 + f * p[:, 0] / zsafe, v0 + f * p[:, 1] / zsafe])
    return uv, valid


def back_project(cam: CameraModel, pose: Pose, px) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray (origin, unit direction) through a pixel.

    Raises OutOfBounds for pixels outside [0, W) x [0, H).
    """
    u, v = float(px[0]), float(px[1])
    if not (0 <= u < cam.width_px and 0 <= v < cam.height_px):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {cam.width_px}x{cam.height_px}")
    origin, dirs = pixel_rays(cam, pose, np.array([[u, v]]))
    return origin, dirs[0]


def pixel_rays(cam: CameraModel, pose: Pose, px: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rays for an n x 2 pixel array; no bounds check. Returns (origin, n x 3 dirs)."""
    px = np.atleast_2d(np.asarray(px, dtype=float))
    u0, v0 = cam.principal_point
    f = cam.focal_length_px
    d_cam = np.column_stack([
        (px[:, 0] - u0) / f,
        (px[:, 1] - v0) / f,
        np.ones(len(px)),
    ])
    d_world = d_cam @ pose.rotation_wc
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    return pose.position.copy(), d_world


def look_at_pose(position, target, up_hint=(0.0, 0.0, 1.0)) -> Pose:
    """Pose with boresight from position toward target.

    Image right (camera x) is made perpendicular to up_hint; when the
    boresight is parallel to up_hint (nadir view) world north is used
    instead, which puts image-up at north and image-right at east.
    """
    position = np.asarray(position, dtype=float)
    z_c = np.asarray(target, dtype=float) - position
    n = np.linalg.norm(z_c)
    if n == 0:
        raise ValueError("target coincides with position")
    z_c = z_c / n
    x_c = np.cross(z_c, np.asarray(up_hint, dtype=float))
    if np.linalg.norm(x_c) < 1e-9:
        x_c = np.cross(z_c, np.array([0.0, 1.0, 0.0]))
    x_c /= np.linalg.norm(x_c)
    y_c = np.cross(z_c, x_c)
    r_wc = np.vstack([x_c, y_c, z_c])  # rows are camera axes in world coords
    return Pose(position, matrix_to_quat(r_wc))


def relative_motion(nav1: NavRecord, nav2: NavRecord) -> RelativePose:
    """Relative camera motion between two nav records (cam1 -> cam2)."""
    r1 = nav1.pose.rotation_wc
    r2 = nav2.pose.rotation_wc
    rotation = r2 @ r1.T
    translation = r1 @ (nav2.pose.position - nav1.pose.position)
    return RelativePose(rotation, translation)


def compose_pose(pose1: Pose, rel: RelativePose) -> Pose:
    """Apply a relative motion to pose1, recovering the second camera pose."""
    r1 = pose1.rotation_wc
    position = pose1.position + r1.T @ rel.translation
    r2 = rel.rotation @ r1
    return Pose(position, matrix_to_quat(r2))


def predict_roi(roi, rel: RelativePose, cam: CameraModel, range_m: float,
                margin_frac: float):
    """Predict where a first-image ROI lands in the second image.

    The ROI corners are carried to the fronto-parallel terrain plane at the
    laser range, moved by the relative motion, reprojected, and the bounding
    box inflated by margin_frac per side, then clamped to the image.
    Raises OffImage when the predicted box misses the image entirely.
    """
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    if margin_frac < 0:
        raise ValueError("margin_frac must be >= 0")
    u0, v0 = cam.principal_point
    f = cam.focal_length_px
    corners = np.array([
        [roi.x0, roi.y0],
        [roi.x0 + roi.width_px, roi.y0],
        [roi.x0, roi.y0 + roi.height_px],
        [roi.x0 + roi.width_px, roi.y0 + roi.height_px],
    ], dtype=float)
    # cam1-frame points on the plane z = range_m
    p_c1 = np.column_stack([
        (corners[:, 0] - u0) / f * range_m,
        (corners[:, 1] - v0) / f * range_m,
        np.full(4, range_m),
    ])
    p_c2 = (p_c1 - rel.translation) @ rel.rotation.T
    if np.any(p_c2[:, 2] <= 0):
        raise OffImage("predicted region behind the second camera")
    u = u0 + f * p_c2[:, 0] / p_c2[:, 2]
    v = v0 + f * p_c2[:, 1] / p_c2[:, 2]
    lo_u, hi_u = float(u.min()), float(u.max())
    lo_v, hi_v = float(v.min()), float(v.max())
    w, h = hi_u - lo_u, hi_v - lo_v
    lo_u -= margin_frac * w
    hi_u += margin_frac * w
    lo_v -= margin_frac * h
    hi_v += margin_frac * h
    # clamp to image bounds
    lo_u = max(lo_u, 0.0)
    lo_v = max(lo_v, 0.0)
    hi_u = min(hi_u, float(cam.width_px))
    hi_v = min(hi_v, float(cam.height_px))
    if hi_u <= lo_u or hi_v <= lo_v:
        raise OffImage("predicted region outside the second image")
    x0, y0 = int(np.floor(lo_u)), int(np.floor(lo_v))
    x1, y1 = int(np.ceil(hi_u)), int(np.ceil(hi_v))
    x1 = min(x1, cam.width_px)
    y1 = min(y1, cam.height_px)
    from .quadtree import Roi  # local import to avoid a cycle
    return Roi(x0=x0, y0=y0, width_px=x1 - x0, height_px=y1 - y0,
               mean_brightness=roi.mean_brightness,
               stddev_brightness=roi.stddev_brightness,
               footprint_m=roi.footprint_m, index=roi.index)


# ---------------------------------------------------------------------------
# nav flat file

NAV_HEADER = ["time", "px", "py", "pz", "qw", "qx", "qy", "qz",
              "range", "gx", "gy", "gz"]


def save_nav_csv(path, records: list[NavRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NAV_HEADER)
        for r in records:
            w.writerow([repr(float(r.time)),
                        *[repr(float(x)) for x in r.pose.position],
                        *[repr(float(x)) for x in r.pose.attitude],
                        repr(float(r.range_m)),
                        *[repr(float(x)) for x in r.gravity_dir]])


def load_nav_csv(path) -> list[NavRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != NAV_HEADER:
            raise ValueError(f"{path}: expected nav header {','.join(NAV_HEADER)}")
        records = []
        for row in reader:
            if not row:
                continue
            vals = [float(x) for x in row]
            pose = Pose(np.array(vals[1:4]), quat_normalize(vals[4:8]))
            records.append(NavRecord(time=vals[0], pose=pose, range_m=vals[8],
                                     gravity_dir=np.array(vals[9:12])))
    return records
