"""Quadtree reduction of the first image into candidate landing regions.

A region is split into four quadrants while its brightness standard
deviation exceeds the threshold; leaves are kept only when they are bright
enough, uniform enough, and large enough on the ground. Dark regions are
rejected outright without splitting (shadows indicate hazards; refining
them cannot yield a landing site and would break the accepted-area
monotonicity in the stddev threshold).

Statistics use int64 integral images, so mean/stddev are exact up to one
float64 rounding and match a brute-force recomputation to ~1e-12.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .camera import CameraModel


@dataclass(frozen=True)
class Roi:
    """Pixel rectangle with brightness statistics and ground footprint."""

    x0: int
    y0: int
    width_px: int
    height_px: int
    mean_brightness: float
    stddev_brightness: float
    footprint_m: float
    index: int

    @property
    def size_px(self) -> int:
        return self.width_px

    def center_px(self) -> tuple[float, float]:
        return (self.x0 + self.width_px / 2.0, self.y0 + self.height_px / 2.0)


@dataclass(frozen=True)
class QuadtreeCriteria:
    """Acceptance thresholds for quadtree leaves (brightness in 0..255)."""

    max_stddev: float = 12.0
    min_mean: float = 20.0
    min_size_px: int = 32
    min_footprint_m: float = 9.5
    max_depth: int = 8

    def __post_init__(self):
        if self.min_size_px < 2:
            raise ValueError("min_size_px must be >= 2")
        if self.min_footprint_m <= 0:
            raise ValueError("min_footprint_m must be positive")


class _Integral:
    """int64 integral images of I and I^2 over a square crop."""

    def __init__(self, img: np.ndarray):
        i64 = img.astype(np.int64)
        self.s1 = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=np.int64)
        self.s2 = np.zeros_like(self.s1)
        np.cumsum(np.cumsum(i64, axis=0), axis=1, out=self.s1[1:, 1:])
        np.cumsum(np.cumsum(i64 * i64, axis=0), axis=1, out=self.s2[1:, 1:])

    def stats(self, x0: int, y0: int, w: int, h: int) -> tuple[float, float]:
        n = w * h
        s1 = int(self.s1[y0 + h, x0 + w] - self.s1[y0, x0 + w]
                 - self.s1[y0 + h, x0] + self.s1[y0, x0])
        s2 = int(self.s2[y0 + h, x0 + w] - self.s2[y0, x0 + w]
                 - self.s2[y0 + h, x0] + self.s2[y0, x0])
        mean = s1 / n
        # n*s2 - s1^2 is an exact integer >= 0
        var = (n * s2 - s1 * s1) / (n * n)
        return mean, float(np.sqrt(max(var, 0.0)))


def roi_stats(image: np.ndarray, rect: tuple[int, int, int, int]) -> tuple[float, float]:
    """Exact (mean, population stddev) of image[y0:y0+h, x0:x0+w]."""
    x0, y0, w, h = rect
    if x0 < 0 or y0 < 0 or x0 + w > image.shape[1] or y0 + h > image.shape[0] or w < 1 or h < 1:
        raise ValueError(f"rect {rect} outside image {image.shape}")
    block = image[y0:y0 + h, x0:x0 + w].astype(np.int64)
    n = block.size
    s1 = int(block.sum())
    s2 = int((block * block).sum())
    var = (n * s2 - s1 * s1) / (n * n)
    return s1 / n, float(np.sqrt(max(var, 0.0)))


def footprint_axes(size_px: float, range_m: float, cam: CameraModel,
                   look_angle_rad: float = 0.0) -> tuple[float, float]:
    """(cross-range, down-range) ground extent of a square region of size_px.

    The down-range axis stretches by 1/cos(look angle) for an off-nadir view.
    """
    cross = size_px * range_m / cam.focal_length_px
    down = cross / np.cos(look_angle_rad)
    return cross, float(down)


def footprint_of(size_px: float, range_m: float, cam: CameraModel,
                 look_angle_rad: float = 0.0) -> float:
    """Conservative ground size (m): the smaller footprint axis."""
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    cross, down = footprint_axes(size_px, range_m, cam, look_angle_rad)
    return min(cross, down)


def ground_area_of(size_px: float, range_m: float, cam: CameraModel,
                   look_angle_rad: float = 0.0) -> float:
    """Metric ground area (m^2) spanned by a square region of size_px."""
    cross, down = footprint_axes(size_px, range_m, cam, look_angle_rad)
    return cross * down


def crop_square(shape: tuple[int, int]) -> tuple[int, int, int]:
    """(x_off, y_off, side) of the largest centered power-of-two square."""
    h, w = shape
    side = 1 << int(np.floor(np.log2(min(h, w))))
    return (w - side) // 2, (h - side) // 2, side


def decompose_leaves(image: np.ndarray, criteria: QuadtreeCriteria,
                     range_m: float, cam: CameraModel) -> tuple[list[Roi], list[Roi]]:
    """Full decomposition: (accepted, rejected) leaves tiling the cropped square.

    Leaf coordinates are in original-image pixels. Accepted ROIs are indexed
    row-major by (y0, x0); rejected leaves continue the numbering.
    """
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    if image.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    x_off, y_off, side = crop_square(image.shape)
    crop = image[y_off:y_off + side, x_off:x_off + side]
    integral = _Integral(crop)
    px_m = range_m / cam.focal_length_px  # conservative cross-range scale

    accepted: list[tuple[int, int, int, float, float]] = []
    rejected: list[tuple[int, int, int, float, float]] = []

    def visit(x0: int, y0: int, size: int, depth: int) -> None:
        mean, std = integral.stats(x0, y0, size, size)
        footprint = size * px_m
        if mean < criteria.min_mean:
            rejected.append((x0, y0, size, mean, std))
            return
        if std <= criteria.max_stddev:
            if footprint >= criteria.min_footprint_m:
                accepted.append((x0, y0, size, mean, std))
            else:
                rejected.append((x0, y0, size, mean, std))
            return
        half = size // 2
        can_split = (depth < criteria.max_depth
                     and half >= criteria.min_size_px
                     and half * px_m >= criteria.min_footprint_m)
        if not can_split:
            rejected.append((x0, y0, size, mean, std))
            return
        visit(x0, y0, half, depth + 1)
        visit(x0 + half, y0, half, depth + 1)
        visit(x0, y0 + half, half, depth + 1)
        visit(x0 + half, y0 + half, half, depth + 1)

    visit(0, 0, side, 0)

    accepted.sort(key=lambda t: (t[1], t[0]))
    rejected.sort(key=lambda t: (t[1], t[0]))

    def build(raw, start):
        return [Roi(x0=x0 + x_off, y0=y0 + y_off, width_px=s, height_px=s,
                    mean_brightness=mean, stddev_brightness=std,
                    footprint_m=s * px_m, index=start + i)
                for i, (x0, y0, s, mean, std) in enumerate(raw)]

    acc = build(accepted, 0)
    rej = build(rejected, len(acc))
    return acc, rej


def decompose(image: np.ndarray, criteria: QuadtreeCriteria, range_m: float,
              cam: CameraModel) -> list[Roi]:
    """Accepted candidate-site ROIs; empty list means no safe site in view."""
    accepted, _ = decompose_leaves(image, criteria, range_m, cam)
    return accepted


ROI_HEADER = ["index", "x0", "y0", "size_px", "mean", "stddev",
              "footprint_m", "accepted"]


def save_roi_csv(path, accepted: list[Roi], rejected: list[Roi] = ()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROI_HEADER)
        for roi, flag in [(r, 1) for r in accepted] + [(r, 0) for r in rejected]:
            w.writerow([roi.index, roi.x0, roi.y0, roi.size_px,
                        f"{roi.mean_brightness:.6f}",
                        f"{roi.stddev_brightness:.6f}",
                        f"{roi.footprint_m:.6f}", flag])
