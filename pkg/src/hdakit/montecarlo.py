"""Monte Carlo observability study: slope error versus baseline and noise.

Synthetic features on a tilted ground patch are projected into two camera
positions, perturbed with Gaussian pixel noise, triangulated with the true
relative pose, and plane-fitted. The two motion profiles are lateral
translation at constant altitude and translation along the camera
boresight (the glide-slope geometry); the second is near-degenerate by
construction, which is the study's point.

Trials run with the parallax cutoff disabled so the boresight curve
measures raw geometry instead of collapsing to all-discarded; cell seeds
derive from (master seed, cell index, trial index), so results do not
depend on evaluation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .camera import (
    CameraModel,
    NavRecord,
    Pose,
    look_at_pose,
    project_many,
    relative_motion,
)
from .errors import AllPointsDegenerate, DegenerateGeometry, ZeroBaseline
from .features import Keypoint, Match
from .sfm import fit_plane, slope_of, triangulate

_GRAVITY = np.array([0.0, 0.0, -1.0])


class Motion(Enum):
    LATERAL = "lateral"
    BORESIGHT = "boresight"


def default_mc_camera() -> CameraModel:
    return CameraModel(15000.0, (1024.0, 1024.0), 2048, 2048)


@dataclass(frozen=True)
class McConfig:
    """One sweep: a motion profile over a (baseline, noise) grid."""

    motion: Motion = Motion.LATERAL
    baselines_m: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0)
    pixel_noise_px: tuple = (0.0, 0.25, 0.5, 1.0, 1.5, 2.0)
    n_trials: int = 500
    n_features: int = 150
    altitude_m: float = 400.0
    look_angle_deg: float = 45.0
    truth_slope_deg: float = 0.0
    patch_m: float = 10.0
    seed: int = 0
    cam: CameraModel = field(default_factory=default_mc_camera)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if any(b < 0 for b in self.baselines_m) or any(s < 0 for s in self.pixel_noise_px):
            raise ValueError("baselines and noise levels must be >= 0")


@dataclass(frozen=True)
class McResult:
    """Error statistics per (baseline, noise) cell, in degrees."""

    motion: Motion
    baselines_m: tuple
    pixel_noise_px: tuple
    median_err_deg: np.ndarray   # (n_baselines, n_noise)
    p95_err_deg: np.ndarray
    n_degenerate: np.ndarray     # trials that raised a geometric error


def make_trial_poses(cfg: McConfig, baseline_m: float) -> tuple[Pose, Pose]:
    """Two camera poses for the configured motion profile."""
    look = np.radians(cfg.look_angle_deg)
    downrange = cfg.altitude_m * np.tan(look)
    p1 = np.array([0.0, -downrange, cfg.altitude_m])
    pose1 = look_at_pose(p1, [0.0, 0.0, 0.0])
    if cfg.motion is Motion.LATERAL:
        shift = np.array([baseline_m, 0.0, 0.0])  # constant altitude, constant pitch
    else:
        shift = baseline_m * pose1.boresight()    # descend along the glide slope
    return pose1, Pose(p1 + shift, pose1.attitude)


def _scatter_features(cfg: McConfig, rng) -> np.ndarray:
    """Features uniform over the truth patch, on the tilted plane."""
    half = cfg.patch_m / 2.0
    xy = rng.uniform(-half, half, size=(cfg.n_features, 2))
    z = xy[:, 1] * np.tan(np.radians(cfg.truth_slope_deg))  # tilt about x axis
    return np.column_stack([xy, z])


def run_trial(cfg: McConfig, baseline_m: float, noise_px: float, seed) -> float:
    """One trial; returns |estimated - truth| slope in degrees (inf if degenerate)."""
    rng = np.random.default_rng(seed)
    pose1, pose2 = make_trial_poses(cfg, baseline_m)
    pts = _scatter_features(cfg, rng)
    uv1, ok1 = project_many(cfg.cam, pose1, pts)
    uv2, ok2 = project_many(cfg.cam, pose2, pts)
    sel = ok1 & ok2
    uv1 = uv1[sel]
    uv2 = uv2[sel]
    if noise_px > 0:
        uv1 = uv1 + rng.normal(0.0, noise_px, uv1.shape)
        uv2 = uv2 + rng.normal(0.0, noise_px, uv2.shape)
    kps1 = [Keypoint(px=(u, v), response=0.0, orientation=0.0, descriptor=bytes(32))
            for u, v in uv1]
    kps2 = [Keypoint(px=(u, v), response=0.0, orientation=0.0, descriptor=bytes(32))
            for u, v in uv2]
    matches = [Match(i, i, 0) for i in range(len(kps1))]
    nav1 = NavRecord(0.0, pose1, max(np.linalg.norm(pose1.position), 1.0), _GRAVITY)
    nav2 = NavRecord(1.0, pose2, max(np.linalg.norm(pose2.position), 1.0), _GRAVITY)
    rel = relative_motion(nav1, nav2)
    try:
        cloud = triangulate(matches, kps1, kps2, pose1, rel, cfg.cam,
                            min_parallax_deg=0.0)
        normal, _, _ = fit_plane(cloud, _GRAVITY)
    except (ZeroBaseline, AllPointsDegenerate, DegenerateGeometry):
        return float("inf")
    return abs(slope_of(normal, _GRAVITY) - cfg.truth_slope_deg)


def trial_seed(master_seed: int, cell_index: int, trial_index: int):
    """Scheduling-independent per-trial seed."""
    return np.random.SeedSequence(entropy=master_seed,
                                  spawn_key=(cell_index, trial_index))


def sweep(cfg: McConfig) -> McResult:
    """Evaluate the full (baseline, noise) grid; deterministic per seed."""
    nb, nn = len(cfg.baselines_m), len(cfg.pixel_noise_px)
    median = np.zeros((nb, nn))
    p95 = np.zeros((nb, nn))
    degen = np.zeros((nb, nn), dtype=int)
    for bi, baseline in enumerate(cfg.baselines_m):
        for ni, noise in enumerate(cfg.pixel_noise_px):
            cell = bi * nn + ni
            errs = np.array([
                run_trial(cfg, baseline, noise, trial_seed(cfg.seed, cell, t))
                for t in range(cfg.n_trials)
            ])
            degen[bi, ni] = int(np.isinf(errs).sum())
            median[bi, ni] = float(np.median(errs))
            p95[bi, ni] = float(np.percentile(errs, 95.0))
    return McResult(cfg.motion, tuple(cfg.baselines_m), tuple(cfg.pixel_noise_px),
                    median, p95, degen)


MC_HEADER = ["motion", "baseline_m", "noise_px", "median_err_deg",
             "p95_err_deg", "n_degenerate"]


def save_mc_csv(path, results) -> None:
    """Write one or more sweep results into the plotting CSV."""
    if isinstance(results, McResult):
        results = [results]

    def fmt(x):
        return "inf" if np.isinf(x) else f"{x:.6f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MC_HEADER)
        for res in results:
            for bi, baseline in enumerate(res.baselines_m):
                for ni, noise in enumerate(res.pixel_noise_px):
                    w.writerow([res.motion.value, f"{baseline:g}", f"{noise:g}",
                                fmt(res.median_err_deg[bi, ni]),
                                fmt(res.p95_err_deg[bi, ni]),
                                int(res.n_degenerate[bi, ni])])
