"""Procedural lunar terrain, rock fields, and a ray-cast renderer.

The world surface is a bilinear heightfield plus analytic hemispheroid
rocks (height = height_ratio * diameter, sitting on the terrain at their
center elevation). Rendering is lambertian with a single directional sun
and hard shadows:

    intensity = round(albedo * max(0, n . s) * 255),  0 where occluded

Camera rays march the heightfield at half-cell steps inside the terrain
slab and refine hits by bisection to < 1e-6 m; rock intersections are
exact quadratic roots. Everything is a pure function of (inputs, seed),
so renders are bit-identical across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel, Pose, pixel_rays

_RAY_TOL_M = 1e-6
_CHUNK = 1 << 17


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Heightmap:
    """Gridded elevations; grid[i, j] is the node at
    (origin_x + j*res, origin_y + i*res)."""

    grid: np.ndarray
    resolution_mpp: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
            raise ValueError("grid must be at least 2x2")
        if self.resolution_mpp <= 0:
            raise ValueError("resolution_mpp must be positive")
        if not np.all(np.isfinite(g)):
            raise ValueError("elevations must be finite")
        object.__setattr__(self, "grid", g)

    @property
    def extent_m(self) -> tuple[float, float]:
        h, w = self.grid.shape
        return ((w - 1) * self.resolution_mpp, (h - 1) * self.resolution_mpp)

    def sample(self, x, y) -> np.ndarray:
        """Bilinear elevation at world (x, y); clamped at the borders."""
        z, _, _ = self._sample_grad(np.asarray(x, float), np.asarray(y, float))
        return z

    def _sample_grad(self, x, y):
        res = self.resolution_mpp
        h, w = self.grid.shape
        fx = np.clip((x - self.origin[0]) / res, 0.0, w - 1 - 1e-12)
        fy = np.clip((y - self.origin[1]) / res, 0.0, h - 1 - 1e-12)
        j = fx.astype(np.int64)
        i = fy.astype(np.int64)
        tx = fx - j
        ty = fy - i
        g = self.grid
        c00 = g[i, j]
        c10 = g[i, j + 1]
        c01 = g[i + 1, j]
        c11 = g[i + 1, j + 1]
        z = (c00 * (1 - tx) * (1 - ty) + c10 * tx * (1 - ty)
             + c01 * (1 - tx) * ty + c11 * tx * ty)
        dzdx = ((c10 - c00) * (1 - ty) + (c11 - c01) * ty) / res
        dzdy = ((c01 - c00) * (1 - tx) + (c11 - c10) * tx) / res
        return z, dzdx, dzdy


@dataclass(frozen=True)
class RockDistributionParams:
    """Cumulative power law N(D) = k * D^r, counts over the scatter disc."""

    k: float
    r: float
    d_min_m: float
    d_max_m: float
    area_radius_m: float
    height_ratio: float = 0.5
    center_xy: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not (0 < self.d_min_m < self.d_max_m):
            raise ValueError("need 0 < d_min_m < d_max_m")
        if self.area_radius_m <= 0:
            raise ValueError("area_radius_m must be positive")


@dataclass(frozen=True)
class RockField:
    """Scattered hemispheroids: columns x, y, diameter, height, orientation."""

    centers: np.ndarray      # (n, 2)
    diameters: np.ndarray    # (n,)
    heights: np.ndarray      # (n,)
    orientations: np.ndarray  # (n,) radians about +z

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, float).reshape(-1, 2))
        for name in ("diameters", "heights", "orientations"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float).ravel())

    def __len__(self) -> int:
        return len(self.diameters)

    @staticmethod
    def empty() -> "RockField":
        return RockField(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0))

    @staticmethod
    def merge(fields) -> "RockField":
        fields = list(fields)
        if not fields:
            return RockField.empty()
        return RockField(np.vstack([f.centers for f in fields]),
                         np.concatenate([f.diameters for f in fields]),
                         np.concatenate([f.heights for f in fields]),
                         np.concatenate([f.orientations for f in fields]))


@dataclass(frozen=True)
class TerrainScene:
    """Heightmap + rocks + directional sun; sun_dir points toward the sun."""

    heightmap: Heightmap
    rocks: RockField = field(default_factory=RockField.empty)
    sun_dir: np.ndarray = (0.0, 0.0, 1.0)
    albedo: float = 0.6

    def __post_init__(self):
        s = np.asarray(self.sun_dir, dtype=float)
        n = np.linalg.norm(s)
        if n == 0:
            raise ValueError("sun_dir must be nonzero")
        object.__setattr__(self, "sun_dir", s / n)
        if not (0 < self.albedo <= 1):
            raise ValueError("albedo must be in (0, 1]")
        object.__setattr__(self, "_rock_base_z",
                           self.heightmap.sample(self.rocks.centers[:, 0],
                                                 self.rocks.centers[:, 1])
                           if len(self.rocks) else np.zeros(0))

    @property
    def rock_base_z(self) -> np.ndarray:
        return self._rock_base_z

    def surface_height(self, x, y) -> np.ndarray:
        """Terrain max-composited with rock domes (used for ground truth)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.array(self.heightmap.sample(x, y), dtype=float, copy=True)
        for idx in range(len(self.rocks)):
            cx, cy = self.rocks.centers[idx]
            a = self.rocks.diameters[idx] / 2.0
            hgt = self.rocks.heights[idx]
            rho2 = (x - cx) ** 2 + (y - cy) ** 2
            inside = rho2 < a * a
            if np.any(inside):
                dome = self._rock_base_z[idx] + hgt * np.sqrt(
                    np.maximum(1.0 - rho2[inside] / (a * a), 0.0))
                z_in = z[inside] if z.ndim else z
                np.copyto(z_in, np.maximum(z_in, dome))
                if z.ndim:
                    z[inside] = z_in
                else:
                    z = z_in
        return z


def sun_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector toward the sun; azimuth from +x (east) toward +y (north)."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


# ---------------------------------------------------------------------------
# generation

def generate_heightmap(seed: int, size_px: int, resolution_mpp: float,
                       amplitude_spec, origin=(0.0, 0.0),
                       sloped_patches=()) -> Heightmap:
    """Sum of seeded random-direction sinusoid octaves.

    amplitude_spec: iterable of (wavelength_m, amplitude_m). Each octave
    contributes at most 2*pi*amplitude/wavelength of surface gradient, so
    the spec doubles as an analytic slope bound. sloped_patches optionally
    blend tilted square regions into the terrain (see apply_sloped_patch).
    """
    if size_px < 2:
        raise ValueError("size_px must be >= 2")
    rng = np.random.default_rng(seed)
    xs = origin[0] + np.arange(size_px) * resolution_mpp
    ys = origin[1] + np.arange(size_px) * resolution_mpp
    xg, yg = np.meshgrid(xs, ys)
    grid = np.zeros((size_px, size_px))
    for wavelength, amplitude in amplitude_spec:
        if wavelength <= 0:
            raise ValueError("octave wavelength must be positive")
        theta = rng.uniform(0.0, 2 * np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        k = 2 * np.pi / wavelength
        grid += amplitude * np.sin(k * (np.cos(theta) * xg + np.sin(theta) * yg) + phase)
    for patch in sloped_patches:
        grid += _sloped_patch_field(xg, yg, **patch)
    return Heightmap(grid, resolution_mpp, tuple(origin))


def _sloped_patch_field(xg, yg, center_xy, size_m, slope_deg,
                        azimuth_deg=0.0, blend_m=5.0):
    """Tilted square patch, raised-cosine blended into the surroundings."""
    cx, cy = center_xy
    az = np.radians(azimuth_deg)
    # downhill direction of the tilt
    ux, uy = np.cos(az), np.sin(az)
    dx = xg - cx
    dy = yg - cy
    ramp = -np.tan(np.radians(slope_deg)) * (dx * ux + dy * uy)
    half = size_m / 2.0
    dist = np.maximum(np.abs(dx), np.abs(dy))  # square footprint
    w = np.clip((half + blend_m - dist) / blend_m, 0.0, 1.0)
    w = 0.5 - 0.5 * np.cos(np.pi * w)
    return ramp * w


def rock_count(params: RockDistributionParams, diameter_m: float) -> float:
    """Cumulative count of rocks with diameter >= diameter_m: k * D^r."""
    if diameter_m <= 0:
        raise ValueError("diameter must be positive")
    return params.k * diameter_m ** params.r


def scatter_rocks(params: RockDistributionParams, seed: int) -> RockField:
    """Sample a rock field from the power law; deterministic per seed.

    Count = round(N(d_min) - N(d_max)); diameters by inverse-CDF of the
    truncated law; positions uniform over the disc of area_radius_m.
    """
    n = int(round(rock_count(params, params.d_min_m) - rock_count(params, params.d_max_m)))
    if n <= 0:
        return RockField.empty()
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    r = params.r
    if abs(r) < 1e-12:
        diam = np.full(n, params.d_min_m)
    else:
        lo = params.d_min_m ** r
        hi = params.d_max_m ** r
        diam = (lo - u * (lo - hi)) ** (1.0 / r)
    rad = params.area_radius_m * np.sqrt(rng.uniform(size=n))
    ang = rng.uniform(0.0, 2 * np.pi, size=n)
    centers = np.column_stack([params.center_xy[0] + rad * np.cos(ang),
                               params.center_xy[1] + rad * np.sin(ang)])
    orient = rng.uniform(0.0, 2 * np.pi, size=n)
    return RockField(centers, diam, params.height_ratio * diam, orient)


def rock_diameter_cdf(params: RockDistributionParams, d) -> np.ndarray:
    """Analytic CDF of sampled diameters (for distribution-fidelity checks)."""
    d = np.asarray(d, dtype=float)
    lo = params.d_min_m ** params.r
    hi = params.d_max_m ** params.r
    c = (lo - np.clip(d, params.d_min_m, params.d_max_m) ** params.r) / (lo - hi)
    return np.where(d < params.d_min_m, 0.0, np.where(d > params.d_max_m, 1.0, c))


# ---------------------------------------------------------------------------
# ray casting

def _terrain_march(hm: Heightmap, origin: np.ndarray, dirs: np.ndarray):
    """First heightfield crossing per ray. Returns (t, hit mask).

    Fixed-step march (<= half a cell per step in any axis) bounded by the
    heightmap AABB, then bisection to _RAY_TOL_M.
    """
    n = len(dirs)
    t_hit = np.full(n, np.inf)
    if n == 0:
        return t_hit, np.zeros(0, dtype=bool)
    ex, ey = hm.extent_m
    lo = np.array([hm.origin[0], hm.origin[1], float(hm.grid.min()) - 1e-9])
    hi = np.array([hm.origin[0] + ex, hm.origin[1] + ey, float(hm.grid.max()) + 1e-9])

    t_near = np.zeros(n)
    t_far = np.full(n, np.inf)
    for ax in range(3):
        d = dirs[:, ax]
        moving = d != 0
        if np.any(moving):
            ta = (lo[ax] - origin[ax]) / d[moving]
            tb = (hi[ax] - origin[ax]) / d[moving]
            t_near[moving] = np.maximum(t_near[moving], np.minimum(ta, tb))
            t_far[moving] = np.minimum(t_far[moving], np.maximum(ta, tb))
        if (origin[ax] < lo[ax]) or (origin[ax] > hi[ax]):
            t_far[~moving] = -np.inf
    active = t_far > t_near

    step = 0.5 * hm.resolution_mpp
    idx = np.nonzero(active)[0]
    for s in range(0, len(idx), _CHUNK):
        sel = idx[s:s + _CHUNK]
        t_hit[sel] = _march_chunk(hm, origin, dirs[sel], t_near[sel], t_far[sel], step)
    return t_hit, np.isfinite(t_hit)


def _march_chunk(hm, origin, dirs, t_a, t_b, step):
    m = len(dirs)
    t_hit = np.full(m, np.inf)
    t_cur = t_a.copy()
    p = origin + dirs * t_cur[:, None]
    f = p[:, 2] - hm.sample(p[:, 0], p[:, 1])
    below = f < 0
    t_hit[below] = t_cur[below]  # started below the surface: hit at slab entry
    idx = np.nonzero(~below)[0]
    while len(idx):
        t_next = np.minimum(t_cur[idx] + step, t_b[idx])
        p = origin + dirs[idx] * t_next[:, None]
        f_next = p[:, 2] - hm.sample(p[:, 0], p[:, 1])
        crossed = f_next < 0
        if np.any(crossed):
            ci = idx[crossed]
            a = t_cur[ci].copy()
            b = t_next[crossed].copy()
            d = dirs[ci]
            for _ in range(60):
                mid = 0.5 * (a + b)
                pm = origin + d * mid[:, None]
                fm = pm[:, 2] - hm.sample(pm[:, 0], pm[:, 1])
                gt = fm > 0
                a = np.where(gt, mid, a)
                b = np.where(gt, b, mid)
                if np.all(b - a < _RAY_TOL_M * 0.5):
                    break
            t_hit[ci] = 0.5 * (a + b)
        t_cur[idx] = t_next
        ended = (t_next >= t_b[idx]) | crossed
        idx = idx[~ended]
    return t_hit


def _rock_ray_hits(scene: TerrainScene, origin: np.ndarray, dirs: np.ndarray,
                   candidates_per_rock=None):
    """Nearest rock intersection per ray: (t, rock index or -1).

    candidates_per_rock optionally restricts the rays tested against each
    rock (sequence of index arrays); by default all rays are tested.
    """
    n = len(dirs)
    t_best = np.full(n, np.inf)
    which = np.full(n, -1, dtype=np.int64)
    for idx in range(len(scene.rocks)):
        sel = (np.arange(n) if candidates_per_rock is None
               else candidates_per_rock[idx])
        if len(sel) == 0:
            continue
        cx, cy = scene.rocks.centers[idx]
        a = scene.rocks.diameters[idx] / 2.0
        hgt = scene.rocks.heights[idx]
        bz = scene.rock_base_z[idx]
        if a <= 0 or hgt <= 0:
            continue
        scale = np.array([a, a, hgt])
        q = (origin - np.array([cx, cy, bz])) / scale
        e = dirs[sel] / scale
        ee = np.einsum("ij,ij->i", e, e)
        qe = e @ q
        qq = q @ q - 1.0
        disc = qe * qe - ee * qq
        ok = disc >= 0
        if not np.any(ok):
            continue
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-qe - sq) / ee
        t2 = (-qe + sq) / ee
        for troot in (t1, t2):
            z_hit = origin[2] + dirs[sel][:, 2] * troot
            valid = ok & (troot > 1e-9) & (z_hit >= bz - 1e-12)
            better = valid & (troot < t_best[sel])
            if np.any(better):
                si = sel[better]
                t_best[si] = troot[better]
                which[si] = idx
    return t_best, which


def _rock_pixel_candidates(scene, cam, pose, px_grid_shape, uv_of_px):
    """Per-rock candidate ray indices from projected bounding boxes."""
    n_rays = px_grid_shape[0] * px_grid_shape[1]
    cands = []
    rows, cols = px_grid_shape
    for idx in range(len(scene.rocks)):
        cx, cy = scene.rocks.centers[idx]
        a = scene.rocks.diameters[idx] / 2.0
        hgt = scene.rocks.heights[idx]
        bz = scene.rock_base_z[idx]
        corners = np.array([[cx + sx * a, cy + sy * a, bz + sz * hgt]
                            for sx in (-1, 1) for sy in (-1, 1) for sz in (0, 1)])
        pc = pose.to_camera(corners)
        if np.all(pc[:, 2] <= 0):
            cands.append(np.zeros(0, dtype=np.int64))
            continue
        z = np.maximum(pc[:, 2], 1e-6)
        u0, v0 = cam.principal_point
        f = cam.focal_length_px
        us = u0 + f * pc[:, 0] / z
        vs = v0 + f * pc[:, 1] / z
        # uv_of_px maps pixel coords to ray-grid indices
        j0, j1, i0, i1 = uv_of_px(us.min() - 1, us.max() + 1, vs.min() - 1, vs.max() + 1)
        if j1 <= j0 or i1 <= i0:
            cands.append(np.zeros(0, dtype=np.int64))
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1), np.arange(i0, i1))
        cands.append((ii * cols + jj).ravel())
    return cands


def _shadow_mask(scene: TerrainScene, pts: np.ndarray, normals: np.ndarray,
                 skip_rock: np.ndarray) -> np.ndarray:
    """True where the sun ray from each point is occluded by terrain or rocks."""
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=bool)
    s = scene.sun_dir
    shadowed = np.zeros(n, dtype=bool)
    start = pts + normals * 1e-4

    if s[2] <= 0:
        return np.ones(n, dtype=bool)  # sun at/below horizon: all dark

    hm = scene.heightmap
    step = 0.5 * hm.resolution_mpp
    z_hi = float(hm.grid.max())
    for c0 in range(0, n, _CHUNK):
        sel = slice(c0, min(c0 + _CHUNK, n))
        p = start[sel]
        t_exit = np.maximum((z_hi - p[:, 2]) / s[2], 0.0)
        occ = np.zeros(p.shape[0], dtype=bool)
        t = np.full(p.shape[0], step * 0.5)
        live = t < t_exit
        while np.any(live):
            q = p[live] + np.outer(t[live], s)
            h = hm.sample(q[:, 0], q[:, 1])
            hit = h > q[:, 2]
            li = np.nonzero(live)[0]
            occ[li[hit]] = True
            t[live] += step
            live = live & ~occ & (t < t_exit)
        shadowed[sel] = occ

    if len(scene.rocks):
        # corridor prefilter: point must be within shadow reach of the rock
        open_idx = np.nonzero(~shadowed)[0]
        if len(open_idx):
            p = start[open_idx]
            cands = []
            tan_el = s[2] / max(np.hypot(s[0], s[1]), 1e-12)
            for ridx in range(len(scene.rocks)):
                cx, cy = scene.rocks.centers[ridx]
                a = scene.rocks.diameters[ridx] / 2.0
                top = scene.rock_base_z[ridx] + scene.rocks.heights[ridx]
                dz = top - p[:, 2]
                reach = np.where(dz > 0, dz / max(tan_el, 1e-9), 0.0) + a + 1.0
                d2 = (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2
                near = d2 <= reach * reach
                keep = near & (skip_rock[open_idx] != ridx)
                cands.append(np.nonzero(keep)[0])
            shadowed[open_idx] |= _rock_shadow(scene, p, cands)
    return shadowed


def _rock_shadow(scene: TerrainScene, pts: np.ndarray, cands) -> np.ndarray:
    """Exact sun-ray / ellipsoid occlusion test for candidate points."""
    s = scene.sun_dir
    out = np.zeros(len(pts), dtype=bool)
    for ridx, sel in enumerate(cands):
        if len(sel) == 0:
            continue
        cx, cy = scene.rocks.centers[ridx]
        a = scene.rocks.diameters[ridx] / 2.0
        hgt = scene.rocks.heights[ridx]
        bz = scene.rock_base_z[ridx]
        scale = np.array([a, a, hgt])
        q = (pts[sel] - np.array([cx, cy, bz])) / scale
        e = s / scale
        ee = e @ e
        qe = q @ e
        qq = np.einsum("ij,ij->i", q, q) - 1.0
        disc = qe * qe - ee * qq
        ok = disc > 0
        if not np.any(ok):
            continue
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-qe - sq) / ee
        t2 = (-qe + sq) / ee
        for troot in (t1, t2):
            z_hit = pts[sel][:, 2] + s[2] * troot
            hit = ok & (troot > 1e-9) & (z_hit >= bz - 1e-12)
            out[sel[hit]] = True
    return out


@dataclass(frozen=True)
class RenderResult:
    """Full per-pixel ray-cast products for one view."""

    image: np.ndarray        # uint8 (rows, cols)
    hit_mask: np.ndarray     # bool, False where NoIntersection
    points: np.ndarray       # (rows, cols, 3) world hits; nan where miss
    normals: np.ndarray      # (rows, cols, 3)
    shadowed: np.ndarray     # bool
    rock_id: np.ndarray      # int64; -1 terrain, -2 miss
    pixel_uv: np.ndarray     # (rows, cols, 2) sample pixel coordinates


def _raycast_grid(scene: TerrainScene, cam: CameraModel, pose: Pose,
                  us: np.ndarray, vs: np.ndarray) -> RenderResult:
    rows, cols = len(vs), len(us)
    ug, vg = np.meshgrid(us, vs)
    px = np.column_stack([ug.ravel(), vg.ravel()])
    origin, dirs = pixel_rays(cam, pose, px)

    t_terr, _ = _terrain_march(scene.heightmap, origin, dirs)

    def uv_to_idx(ulo, uhi, vlo, vhi):
        j0 = int(np.searchsorted(us, ulo, side="left"))
        j1 = int(np.searchsorted(us, uhi, side="right"))
        i0 = int(np.searchsorted(vs, vlo, side="left"))
        i1 = int(np.searchsorted(vs, vhi, side="right"))
        return j0, j1, i0, i1

    if len(scene.rocks):
        cands = _rock_pixel_candidates(scene, cam, pose, (rows, cols), uv_to_idx)
        t_rock, rock_idx = _rock_ray_hits(scene, origin, dirs, cands)
    else:
        t_rock = np.full(len(dirs), np.inf)
        rock_idx = np.full(len(dirs), -1, dtype=np.int64)

    use_rock = t_rock < t_terr
    t = np.where(use_rock, t_rock, t_terr)
    hit = np.isfinite(t)
    rock_id = np.where(use_rock, rock_idx, -1)
    rock_id = np.where(hit, rock_id, -2)

    pts = np.full((len(dirs), 3), np.nan)
    normals = np.zeros((len(dirs), 3))
    if np.any(hit):
        ph = origin + dirs[hit] * t[hit][:, None]
        pts[hit] = ph
        nh = np.zeros_like(ph)
        terr_sel = rock_id[hit] == -1
        if np.any(terr_sel):
            q = ph[terr_sel]
            _, dzdx, dzdy = scene.heightmap._sample_grad(q[:, 0], q[:, 1])
            nv = np.column_stack([-dzdx, -dzdy, np.ones(len(q))])
            nv /= np.linalg.norm(nv, axis=1, keepdims=True)
            nh[terr_sel] = nv
        rock_sel = ~terr_sel
        if np.any(rock_sel):
            q = ph[rock_sel]
            ridx = rock_id[hit][rock_sel]
            a = scene.rocks.diameters[ridx] / 2.0
            hgt = scene.rocks.heights[ridx]
            cxy = scene.rocks.centers[ridx]
            bz = scene.rock_base_z[ridx]
            nv = np.column_stack([
                (q[:, 0] - cxy[:, 0]) / (a * a),
                (q[:, 1] - cxy[:, 1]) / (a * a),
                (q[:, 2] - bz) / (hgt * hgt),
            ])
            nv /= np.linalg.norm(nv, axis=1, keepdims=True)
            nh[rock_sel] = nv
        normals[hit] = nh

    shadowed = np.zeros(len(dirs), dtype=bool)
    if np.any(hit):
        shadowed_hit = _shadow_mask(scene, pts[hit], normals[hit], rock_id[hit])
        shadowed[hit] = shadowed_hit

    lambert = np.maximum(np.einsum("ij,j->i", normals, scene.sun_dir), 0.0)
    inten = np.rint(scene.albedo * lambert * 255.0)
    inten[shadowed | ~hit] = 0.0
    image = inten.astype(np.uint8)

    shape = (rows, cols)
    return RenderResult(
        image=image.reshape(shape),
        hit_mask=hit.reshape(shape),
        points=pts.reshape(shape + (3,)),
        normals=normals.reshape(shape + (3,)),
        shadowed=shadowed.reshape(shape),
        rock_id=rock_id.reshape(shape),
        pixel_uv=np.stack([ug, vg], axis=-1),
    )


def render_full(scene: TerrainScene, cam: CameraModel, pose: Pose) -> RenderResult:
    """Ray-cast every pixel center; returns image plus truth by-products."""
    us = np.arange(cam.width_px) + 0.5
    vs = np.arange(cam.height_px) + 0.5
    return _raycast_grid(scene, cam, pose, us, vs)


def render(scene: TerrainScene, cam: CameraModel, pose: Pose) -> np.ndarray:
    """8-bit grayscale render (misses are 0; see render_full for the flags)."""
    return render_full(scene, cam, pose).image


def ground_truth_cloud(scene: TerrainScene, cam: CameraModel, pose: Pose,
                       rows: int, cols: int):
    """World-frame hits of a rows x cols ray grid across the image.

    Returns (points array (rows, cols, 3) with nan at misses, RenderResult).
    With rows = cols = 2 the rays pass through the four corner pixels.
    """
    if rows < 2 or cols < 2:
        raise ValueError("rows and cols must be >= 2")
    us = np.linspace(0.5, cam.width_px - 0.5, cols)
    vs = np.linspace(0.5, cam.height_px - 0.5, rows)
    rr = _raycast_grid(scene, cam, pose, us, vs)
    return rr.points, rr


def truth_maps(scene: TerrainScene, cam: CameraModel, pose: Pose,
               rows: int | None = None, cols: int | None = None):
    """(elevation map, slope map in degrees) of the hit surface per sample ray.

    Defaults to one ray per pixel; misses are nan.
    """
    rows = rows or cam.height_px
    cols = cols or cam.width_px
    us = np.linspace(0.5, cam.width_px - 0.5, cols)
    vs = np.linspace(0.5, cam.height_px - 0.5, rows)
    rr = _raycast_grid(scene, cam, pose, us, vs)
    elev = np.where(rr.hit_mask, rr.points[..., 2], np.nan)
    cosang = np.clip(rr.normals[..., 2], -1.0, 1.0)
    slope = np.degrees(np.arccos(np.abs(cosang)))
    slope = np.where(rr.hit_mask, slope, np.nan)
    return elev, slope


# ---------------------------------------------------------------------------
# file formats

def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM (P5)."""
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("image must be 2-D uint8")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    i += 1  # single whitespace after maxval
    img = np.frombuffer(data[i:i + w * h], dtype=np.uint8)
    if img.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return img.reshape(h, w).copy()


def save_cloud_csv(path, points: np.ndarray) -> None:
    """CSV `row,col,x,y,z`; rays that missed are omitted."""
    rows, cols = points.shape[:2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "x", "y", "z"])
        for i in range(rows):
            for j in range(cols):
                p = points[i, j]
                if np.all(np.isfinite(p)):
                    w.writerow([i, j, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])


def load_cloud_csv(path) -> np.ndarray:
    """(n, 3) world points from a truth-cloud CSV."""
    pts = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["row", "col", "x", "y", "z"]:
            raise ValueError(f"{path}: unexpected cloud header")
        for row in reader:
            if row:
                pts.append([float(row[2]), float(row[3]), float(row[4])])
    return np.array(pts) if pts else np.zeros((0, 3))


def save_map_csv(path, values: np.ndarray) -> None:
    """CSV `row,col,value` (nan for misses)."""
    rows, cols = values.shape
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    flat = np.column_stack([ii.ravel(), jj.ravel(), values.ravel()])
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        np.savetxt(fh, flat, fmt=["%d", "%d", "%.6f"], delimiter=",")
