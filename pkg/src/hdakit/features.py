"""Keypoint detection, binary description, matching, and outlier rejection.

Detection is ORB-style and fully deterministic: FAST-9 segment tests on a
small bilinear pyramid, Harris re-ranking with 3x3 non-max suppression,
intensity-centroid orientation, and steered 256-bit binary descriptors
sampled from a fixed seeded pattern (30 discrete orientation bins, like
the reference design). No OpenCV; everything is numpy so results are
bit-identical across runs and thread counts.

Outlier rejection is two-stage, in pipeline order: seeded RANSAC over a
normalized 8-point fundamental matrix, then epipolar gating against the
essential geometry built directly from the navigation relative pose.
Both stages only remove matches; survivor order is preserved.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraModel, RelativePose
from .errors import TooFewMatches, ZeroBaseline

PATCH_RADIUS = 15          # descriptor patch is 31x31
_PATTERN_RADIUS = 13       # sampling offsets stay inside the patch when rotated
_N_ORIENTATION_BINS = 30
_DESCRIPTOR_BITS = 256

_FAST_RING = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
_FAST_ARC = 9

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def _make_patterns():
    """256 seeded comparison pairs, pre-rotated into 30 orientation bins."""
    rng = np.random.default_rng(0x0B5E55ED)
    pts = []
    while len(pts) < 2 * _DESCRIPTOR_BITS:
        p = rng.normal(0.0, PATCH_RADIUS / 2.5, size=2)
        if np.hypot(*p) <= _PATTERN_RADIUS:
            pts.append(p)
    base = np.array(pts).reshape(_DESCRIPTOR_BITS, 2, 2)  # (bit, a/b, xy)
    bins = []
    for b in range(_N_ORIENTATION_BINS):
        th = 2 * np.pi * b / _N_ORIENTATION_BINS
        c, s = np.cos(th), np.sin(th)
        # row vectors: p @ [[c, s], [-s, c]] rotates by +th
        rot = base @ np.array([[c, s], [-s, c]])
        bins.append(np.rint(rot).astype(np.int64))
    return np.stack(bins)  # (30, 256, 2, 2)


_PATTERNS = _make_patterns()

_disc = [(dx, dy)
         for dy in range(-PATCH_RADIUS, PATCH_RADIUS + 1)
         for dx in range(-PATCH_RADIUS, PATCH_RADIUS + 1)
         if dx * dx + dy * dy <= PATCH_RADIUS * PATCH_RADIUS]
_DISC_DX = np.array([d[0] for d in _disc])
_DISC_DY = np.array([d[1] for d in _disc])


@dataclass(frozen=True)
class Keypoint:
    """Detected corner with orientation and 256-bit binary descriptor."""

    px: tuple[float, float]
    response: float
    orientation: float
    descriptor: bytes  # 32 bytes

    def __post_init__(self):
        if len(self.descriptor) != _DESCRIPTOR_BITS // 8:
            raise ValueError("descriptor must be 256 bits")


@dataclass(frozen=True)
class Match:
    """Correspondence between keypoint lists; residual filled by rejection."""

    idx1: int
    idx2: int
    hamming: int
    epipolar_residual_px: float = float("nan")


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1 - 1e-9)
    y = np.clip(y, 0.0, h - 1 - 1e-9)
    j = x.astype(np.int64)
    i = y.astype(np.int64)
    tx = x - j
    ty = y - i
    return (img[i, j] * (1 - tx) * (1 - ty) + img[i, j + 1] * tx * (1 - ty)
            + img[i + 1, j] * (1 - tx) * ty + img[i + 1, j + 1] * tx * ty)


def _resize(img: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear resize by 1/scale (pixel-center aligned)."""
    h = max(int(round(img.shape[0] / scale)), 1)
    w = max(int(round(img.shape[1] / scale)), 1)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    x = (jj + 0.5) * (img.shape[1] / w) - 0.5
    y = (ii + 0.5) * (img.shape[0] / h) - 0.5
    return _bilinear(img, x, y)


def _fast_corners(img: np.ndarray, threshold: float, margin: int) -> np.ndarray:
    """Boolean corner mask (FAST-9) over the interior beyond margin."""
    h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    m = max(margin, 3)
    if h <= 2 * m or w <= 2 * m:
        return mask
    c = img[m:h - m, m:w - m]
    ring = np.stack([img[m + dy:h - m + dy, m + dx:w - m + dx]
                     for dx, dy in _FAST_RING])
    bright = ring > c + threshold
    dark = ring < c - threshold
    corner = np.zeros(c.shape, dtype=bool)
    for arr in (bright, dark):
        ext = np.concatenate([arr, arr[:_FAST_ARC - 1]], axis=0).astype(np.int8)
        run = ext[:_FAST_ARC].sum(axis=0)
        best = run.copy()
        for k in range(1, 16):
            run = run - ext[k - 1] + ext[k + _FAST_ARC - 1]
            np.maximum(best, run, out=best)
        corner |= best >= _FAST_ARC
    mask[m:h - m, m:w - m] = corner
    return mask


def _harris_response(img: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    sxx = ndimage.uniform_filter(gx * gx, size=5, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, size=5, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, size=5, mode="nearest")
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    return det - 0.04 * tr * tr


def _orientations(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Intensity-centroid angle for integer keypoint locations."""
    px = xs[:, None] + _DISC_DX[None, :]
    py = ys[:, None] + _DISC_DY[None, :]
    vals = img[py, px]
    m10 = (vals * _DISC_DX[None, :]).sum(axis=1)
    m01 = (vals * _DISC_DY[None, :]).sum(axis=1)
    return np.arctan2(m01, m10)


def _describe(smooth: np.ndarray, xs: np.ndarray, ys: np.ndarray,
              angles: np.ndarray) -> np.ndarray:
    """(n, 32) uint8 steered binary descriptors."""
    bins = np.rint(angles / (2 * np.pi / _N_ORIENTATION_BINS)).astype(np.int64)
    bins %= _N_ORIENTATION_BINS
    out = np.empty((len(xs), _DESCRIPTOR_BITS // 8), dtype=np.uint8)
    for b in np.unique(bins):
        sel = bins == b
        pat = _PATTERNS[b]  # (256, 2, 2) integer offsets
        ax = xs[sel][:, None] + pat[None, :, 0, 0]
        ay = ys[sel][:, None] + pat[None, :, 0, 1]
        bx = xs[sel][:, None] + pat[None, :, 1, 0]
        by = ys[sel][:, None] + pat[None, :, 1, 1]
        bits = smooth[ay, ax] < smooth[by, bx]
        out[sel] = np.packbits(bits, axis=1)
    return out


def detect_and_describe(image: np.ndarray, roi, max_keypoints: int = 500,
                        n_levels: int = 4, scale_factor: float = 1.25,
                        fast_threshold: float = 8.0) -> list[Keypoint]:
    """ORB-style keypoints inside a ROI, strongest response first.

    Keypoint pixel coordinates are in full-image convention (pixel centers
    at integer + 0.5). The list is deterministic for identical inputs.
    """
    img = np.asarray(image, dtype=np.float32)
    margin = PATCH_RADIUS + 1
    pad = int(np.ceil(margin * scale_factor ** (n_levels - 1))) + 2
    cx0 = max(roi.x0 - pad, 0)
    cy0 = max(roi.y0 - pad, 0)
    cx1 = min(roi.x0 + roi.width_px + pad, img.shape[1])
    cy1 = min(roi.y0 + roi.height_px + pad, img.shape[0])
    crop = img[cy0:cy1, cx0:cx1]
    if crop.shape[0] < 2 * margin + 1 or crop.shape[1] < 2 * margin + 1:
        return []

    found = []  # (response, level, y_lvl, x_lvl, u, v)
    for lvl in range(n_levels):
        s = scale_factor ** lvl
        lvl_img = crop if lvl == 0 else _resize(crop, s)
        if lvl_img.shape[0] < 2 * margin + 1 or lvl_img.shape[1] < 2 * margin + 1:
            break
        corners = _fast_corners(lvl_img, fast_threshold, margin)
        if not corners.any():
            continue
        resp = _harris_response(lvl_img)
        masked = np.where(corners, resp, -np.inf)
        local_max = masked >= ndimage.maximum_filter(masked, size=3, mode="constant",
                                                     cval=-np.inf)
        keep = corners & local_max
        ys, xs = np.nonzero(keep)
        if len(xs) == 0:
            continue
        u = cx0 + (xs + 0.5) * (crop.shape[1] / lvl_img.shape[1])
        v = cy0 + (ys + 0.5) * (crop.shape[0] / lvl_img.shape[0])
        inside = ((u >= roi.x0) & (u < roi.x0 + roi.width_px)
                  & (v >= roi.y0) & (v < roi.y0 + roi.height_px))
        for i in np.nonzero(inside)[0]:
            found.append((float(resp[ys[i], xs[i]]), lvl, int(ys[i]), int(xs[i]),
                          float(u[i]), float(v[i])))

    if not found:
        return []
    found.sort(key=lambda t: (-t[0], t[1], t[5], t[4]))
    found = found[:max_keypoints]

    kps: list[Keypoint] = []
    by_level: dict[int, list[int]] = {}
    for i, item in enumerate(found):
        by_level.setdefault(item[1], []).append(i)
    results: list[Keypoint | None] = [None] * len(found)
    for lvl, idxs in by_level.items():
        s = scale_factor ** lvl
        lvl_img = crop if lvl == 0 else _resize(crop, s)
        smooth = ndimage.uniform_filter(lvl_img, size=5, mode="nearest")
        xs = np.array([found[i][3] for i in idxs])
        ys = np.array([found[i][2] for i in idxs])
        angles = _orientations(lvl_img, xs, ys)
        descs = _describe(smooth, xs, ys, angles)
        for j, i in enumerate(idxs):
            resp, _, _, _, u, v = found[i]
            results[i] = Keypoint(px=(u, v), response=resp,
                                  orientation=float(angles[j]),
                                  descriptor=descs[j].tobytes())
    for r in results:
        assert r is not None
        kps.append(r)
    return kps


# ---------------------------------------------------------------------------
# matching

def _as_desc_matrix(descs) -> np.ndarray:
    if isinstance(descs, np.ndarray):
        return descs.astype(np.uint8)
    if descs and isinstance(descs[0], Keypoint):
        descs = [k.descriptor for k in descs]
    return np.frombuffer(b"".join(descs), dtype=np.uint8).reshape(len(descs), -1)


def hamming_distance(a: bytes, b: bytes) -> int:
    x = np.frombuffer(a, dtype=np.uint8) ^ np.frombuffer(b, dtype=np.uint8)
    return int(_POPCOUNT[x].sum())


def match(desc1, desc2, ratio: float = 0.75, cross_check: bool = True) -> list[Match]:
    """Lowe's ratio test (best < ratio * second-best) with mutual best check."""
    if not (0 < ratio <= 1):
        raise ValueError("ratio must be in (0, 1]")
    d1 = _as_desc_matrix(desc1)
    d2 = _as_desc_matrix(desc2)
    if len(d1) == 0 or len(d2) == 0:
        return []
    dist = _POPCOUNT[d1[:, None, :] ^ d2[None, :, :]].sum(axis=2, dtype=np.int32)
    best_j = np.argmin(dist, axis=1)
    best = dist[np.arange(len(d1)), best_j]
    if dist.shape[1] > 1:
        tmp = dist.copy()
        tmp[np.arange(len(d1)), best_j] = np.iinfo(np.int32).max
        second = tmp.min(axis=1)
    else:
        second = np.full(len(d1), np.iinfo(np.int32).max)
    keep = best < ratio * second
    if cross_check:
        col_best = np.argmin(dist, axis=0)
        keep &= col_best[best_j] == np.arange(len(d1))
    return [Match(idx1=int(i), idx2=int(best_j[i]), hamming=int(best[i]))
            for i in np.nonzero(keep)[0]]


# ---------------------------------------------------------------------------
# outlier rejection

def _kp_points(kps, idxs) -> np.ndarray:
    return np.array([kps[i].px for i in idxs], dtype=float)


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0, -s * centroid[0]],
                  [0, s, -s * centroid[1]],
                  [0, 0, 1]])
    ph = np.column_stack([pts, np.ones(len(pts))]) @ T.T
    return ph, T


def _eight_point(p1h: np.ndarray, p2h: np.ndarray) -> np.ndarray:
    a = np.column_stack([
        p2h[:, 0] * p1h[:, 0], p2h[:, 0] * p1h[:, 1], p2h[:, 0],
        p2h[:, 1] * p1h[:, 0], p2h[:, 1] * p1h[:, 1], p2h[:, 1],
        p1h[:, 0], p1h[:, 1], np.ones(len(p1h)),
    ])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt2 = np.linalg.svd(f)
    s[2] = 0.0
    return u @ np.diag(s) @ vt2


def symmetric_epipolar_distance(F: np.ndarray, pts1: np.ndarray,
                                pts2: np.ndarray) -> np.ndarray:
    """Per-match residual sqrt(0.5 * (d1^2 + d2^2)) in pixels."""
    p1 = np.column_stack([pts1, np.ones(len(pts1))])
    p2 = np.column_stack([pts2, np.ones(len(pts2))])
    l2 = p1 @ F.T  # epipolar lines in image 2
    l1 = p2 @ F
    num = np.abs(np.einsum("ij,ij->i", p2, l2))
    d2 = num / np.maximum(np.hypot(l2[:, 0], l2[:, 1]), 1e-15)
    d1 = num / np.maximum(np.hypot(l1[:, 0], l1[:, 1]), 1e-15)
    return np.sqrt(0.5 * (d1 * d1 + d2 * d2))


def ransac_reject(matches: list[Match], kps1, kps2, threshold_px: float = 1.5,
                  max_iters: int = 500, seed: int = 0) -> list[Match]:
    """Fundamental-matrix consensus; returns the inlier sub-list (stable order)."""
    if len(matches) < 8:
        raise TooFewMatches(f"{len(matches)} matches, need >= 8")
    pts1 = _kp_points(kps1, [m.idx1 for m in matches])
    pts2 = _kp_points(kps2, [m.idx2 for m in matches])
    p1h, t1 = _normalize_points(pts1)
    p2h, t2 = _normalize_points(pts2)
    rng = np.random.default_rng(seed)
    n = len(matches)
    best_count = -1
    best_err = np.inf
    best_inliers = np.zeros(n, dtype=bool)
    for _ in range(max_iters):
        sel = rng.choice(n, size=8, replace=False)
        fn = _eight_point(p1h[sel], p2h[sel])
        F = t2.T @ fn @ t1
        r = symmetric_epipolar_distance(F, pts1, pts2)
        inl = r < threshold_px
        count = int(inl.sum())
        err = float(r[inl].sum()) if count else np.inf
        if count > best_count or (count == best_count and err < best_err):
            best_count, best_err, best_inliers = count, err, inl
            best_resid = r
    out = []
    for i in np.nonzero(best_inliers)[0]:
        out.append(dataclasses.replace(matches[i],
                                       epipolar_residual_px=float(best_resid[i])))
    return out


def fundamental_from_relative(rel: RelativePose, cam: CameraModel) -> np.ndarray:
    """F built directly from the known relative pose (no estimation)."""
    if rel.baseline_m == 0.0:
        raise ZeroBaseline("relative translation is zero")
    t2 = -rel.rotation @ rel.translation  # p_c2 = R p_c1 + t2
    tx = np.array([[0, -t2[2], t2[1]],
                   [t2[2], 0, -t2[0]],
                   [-t2[1], t2[0], 0]])
    E = tx @ rel.rotation
    f = cam.focal_length_px
    u0, v0 = cam.principal_point
    k_inv = np.array([[1 / f, 0, -u0 / f],
                      [0, 1 / f, -v0 / f],
                      [0, 0, 1]])
    return k_inv.T @ E @ k_inv


def nav_epipolar_reject(matches: list[Match], kps1, kps2, rel: RelativePose,
                        cam: CameraModel, threshold_px: float = 2.0) -> list[Match]:
    """Gate matches against the nav-derived epipolar geometry."""
    F = fundamental_from_relative(rel, cam)
    if not matches:
        return []
    pts1 = _kp_points(kps1, [m.idx1 for m in matches])
    pts2 = _kp_points(kps2, [m.idx2 for m in matches])
    r = symmetric_epipolar_distance(F, pts1, pts2)
    return [dataclasses.replace(m, epipolar_residual_px=float(r[i]))
            for i, m in enumerate(matches) if r[i] < threshold_px]


# ---------------------------------------------------------------------------
# debug dumps

def save_keypoints_csv(path, rows) -> None:
    """rows: iterables of (roi_index, image_id, u, v, response, orientation)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["roi", "image", "u", "v", "response", "orientation"])
        for r in rows:
            w.writerow([r[0], r[1], f"{r[2]:.3f}", f"{r[3]:.3f}",
                        f"{r[4]:.6g}", f"{r[5]:.6f}"])


def save_matches_csv(path, rows) -> None:
    """rows: iterables of (roi, u1, v1, u2, v2, hamming, residual, stage)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["roi", "u1", "v1", "u2", "v2", "hamming", "residual_px", "stage"])
        for r in rows:
            w.writerow([r[0], f"{r[1]:.3f}", f"{r[2]:.3f}", f"{r[3]:.3f}",
                        f"{r[4]:.3f}", r[5], f"{r[6]:.4f}", r[7]])
