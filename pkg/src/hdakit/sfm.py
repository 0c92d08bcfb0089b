"""Triangulation of match survivors, plane fitting, and site ranking.

Triangulation uses the midpoint of the closest approach of the two pixel
rays (transparent and exactly right for noiseless inputs). Plane fits are
total-least-squares via the smallest principal component. Roughness is
defined as the 95th-percentile absolute orthogonal residual, taken as an
order statistic so a single proud rock among coplanar points is flagged
at its full height.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraModel, Pose, RelativePose, compose_pose, pixel_rays
from .errors import AllPointsDegenerate, DegenerateGeometry, ZeroBaseline


@dataclass(frozen=True)
class PointCloud:
    """World-frame triangulated points for one ROI."""

    points: np.ndarray  # (n, 3)
    source_roi: int = -1
    n_discarded: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud points must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SiteAssessment:
    """Per-ROI safety metrics and final rank (0 = unranked/unsafe)."""

    roi: int
    slope_deg: float
    roughness_m: float
    area_m2: float
    n_points: int
    distance_to_ils_m: float = float("nan")
    safe: bool = False
    rank: int = 0
    ground_position: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SiteLimits:
    """Safety thresholds and composite ranking weights."""

    slope_limit_deg: float = 10.0
    roughness_limit_m: float = 0.30
    area_limit_m2: float = 100.0
    n_min: int = 15
    min_parallax_deg: float = 0.2
    weight_slope: float = 0.5
    weight_roughness: float = 0.3
    weight_area: float = 0.2


def triangulate(matches, kps1, kps2, pose1: Pose, rel: RelativePose,
                cam: CameraModel, min_parallax_deg: float = 0.2,
                source_roi: int = -1) -> PointCloud:
    """Midpoint triangulation of matches into the world frame.

    Matches with negative depth in either camera or ray angle below
    min_parallax_deg are discarded and counted in the cloud.
    """
    if rel.baseline_m == 0.0:
        raise ZeroBaseline("cannot triangulate with zero baseline")
    if not matches:
        raise AllPointsDegenerate("no matches to triangulate")
    pose2 = compose_pose(pose1, rel)
    px1 = np.array([kps1[m.idx1].px for m in matches], dtype=float)
    px2 = np.array([kps2[m.idx2].px for m in matches], dtype=float)
    o1, d1 = pixel_rays(cam, pose1, px1)
    o2, d2 = pixel_rays(cam, pose2, px2)

    b = np.einsum("ij,ij->i", d1, d2)
    w0 = o1 - o2
    d = d1 @ w0
    e = d2 @ w0
    denom = 1.0 - b * b
    parallax = np.degrees(np.arccos(np.clip(np.abs(b), 0.0, 1.0)))
    ok = (parallax >= min_parallax_deg) & (denom > 1e-15)
    denom_safe = np.where(ok, denom, 1.0)
    s = (b * e - d) / denom_safe
    t = (e - b * d) / denom_safe
    ok &= (s > 0) & (t > 0)  # positive depth along both rays
    mid = 0.5 * ((o1 + d1 * s[:, None]) + (o2 + d2 * t[:, None]))
    pts = mid[ok]
    n_discarded = int(len(matches) - ok.sum())
    if len(pts) == 0:
        raise AllPointsDegenerate(
            f"all {len(matches)} matches discarded (parallax/depth)")
    return PointCloud(points=pts, source_roi=source_roi, n_discarded=n_discarded)


def fit_plane(cloud: PointCloud, gravity_dir=None):
    """Total-least-squares plane: (unit normal, offset, rms residual m).

    The normal is oriented upward (against gravity when provided, else +z).
    Plane equation: normal . x = offset. Raises DegenerateGeometry for
    fewer than 3 points or a collinear/coincident set.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if len(pts) < 3:
        raise DegenerateGeometry(f"{len(pts)} points; need >= 3")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if sv[1] < max(sv[0], 1e-300) * 1e-9:
        raise DegenerateGeometry("points are collinear or coincident")
    normal = vt[-1]
    up = -np.asarray(gravity_dir, float) if gravity_dir is not None \
        else np.array([0.0, 0.0, 1.0])
    if normal @ up < 0:
        normal = -normal
    offset = float(normal @ centroid)
    rms = float(sv[2] / np.sqrt(len(pts)))
    return normal, offset, rms


def slope_of(normal, gravity_dir) -> float:
    """Angle in degrees between the plane normal and the up direction [0, 90]."""
    n = np.asarray(normal, dtype=float)
    up = -np.asarray(gravity_dir, dtype=float)
    c = abs(float(n @ up)) / (np.linalg.norm(n) * np.linalg.norm(up))
    return float(np.degrees(np.arccos(np.clip(c, 0.0, 1.0))))


def roughness_of(cloud: PointCloud, plane) -> float:
    """95th-percentile |orthogonal residual| in meters (order statistic)."""
    normal, offset = plane[0], plane[1]
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    resid = np.abs(pts @ np.asarray(normal, float) - offset)
    return float(np.percentile(resid, 95.0, method="higher"))


def composite_score(a: SiteAssessment, limits: SiteLimits) -> float:
    """Weighted normalized slope, roughness, and inverse area; lower is better."""
    return (limits.weight_slope * a.slope_deg / limits.slope_limit_deg
            + limits.weight_roughness * a.roughness_m / limits.roughness_limit_m
            + limits.weight_area * limits.area_limit_m2 / max(a.area_m2, 1e-9))


def assess_and_rank(assessments, ils_ground_position,
                    limits: SiteLimits = SiteLimits()) -> list[SiteAssessment]:
    """Apply safety gates and order sites by composite score.

    Safe sites get ranks 1..n (ties broken by ILS distance, then ROI index);
    unsafe sites keep rank 0 and trail the list ordered the same way.
    """
    ils = np.asarray(ils_ground_position, dtype=float)
    updated = []
    for a in assessments:
        gp = np.asarray(a.ground_position, dtype=float)
        dist = float(np.hypot(gp[0] - ils[0], gp[1] - ils[1]))
        safe = (a.slope_deg < limits.slope_limit_deg
                and a.roughness_m < limits.roughness_limit_m
                and a.area_m2 >= limits.area_limit_m2
                and a.n_points >= limits.n_min)
        updated.append(replace(a, distance_to_ils_m=dist, safe=safe, rank=0))

    def sort_key(a):
        return (composite_score(a, limits), a.distance_to_ils_m, a.roi)

    safe_sites = sorted([a for a in updated if a.safe], key=sort_key)
    unsafe_sites = sorted([a for a in updated if not a.safe], key=sort_key)
    ranked = [replace(a, rank=i + 1) for i, a in enumerate(safe_sites)]
    return ranked + unsafe_sites


ASSESSMENT_HEADER = ["rank", "roi", "slope_deg", "roughness_m", "area_m2",
                     "n_points", "dist_ils_m", "safe"]


def save_assessment_csv(path, assessments) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ASSESSMENT_HEADER)
        for a in assessments:
            w.writerow([a.rank, a.roi, f"{a.slope_deg:.4f}", f"{a.roughness_m:.4f}",
                        f"{a.area_m2:.2f}", a.n_points,
                        f"{a.distance_to_ils_m:.2f}", int(a.safe)])
