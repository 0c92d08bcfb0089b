"""Triangulation, plane-fit, slope, roughness, and ranking tests."""

import numpy as np
import pytest

from hdakit.camera import (
    CameraModel,
    NavRecord,
    Pose,
    look_at_pose,
    project,
    quat_normalize,
    quat_to_matrix,
    relative_motion,
)
from hdakit.errors import AllPointsDegenerate, DegenerateGeometry, ZeroBaseline
from hdakit.features import Keypoint, Match
from hdakit.sfm import (
    PointCloud,
    SiteAssessment,
    SiteLimits,
    assess_and_rank,
    fit_plane,
    roughness_of,
    save_assessment_csv,
    slope_of,
    triangulate,
)

CAM = CameraModel(1000.0, (256.0, 256.0), 512, 512)
GRAV = np.array([0.0, 0.0, -1.0])


def kp(u, v):
    return Keypoint(px=(float(u), float(v)), response=1.0, orientation=0.0,
                    descriptor=bytes(32))


def correspondences(pts, pose1, pose2):
    kps1 = [kp(*project(CAM, pose1, p)) for p in pts]
    kps2 = [kp(*project(CAM, pose2, p)) for p in pts]
    matches = [Match(i, i, 0) for i in range(len(pts))]
    rel = relative_motion(NavRecord(0, pose1, 500.0, GRAV),
                          NavRecord(1, pose2, 500.0, GRAV))
    return kps1, kps2, matches, rel


class TestTriangulate:
    def test_noiseless_recovery_within_1e6(self):
        rng = np.random.default_rng(0)
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([30.0, 0, 0]), pose1.attitude)
        pts = np.column_stack([rng.uniform(-40, 40, 100),
                               rng.uniform(-40, 40, 100),
                               rng.uniform(-5, 5, 100)])
        kps1, kps2, matches, rel = correspondences(pts, pose1, pose2)
        cloud = triangulate(matches, kps1, kps2, pose1, rel, CAM)
        assert len(cloud) == 100
        assert cloud.n_discarded == 0
        assert np.abs(cloud.points - pts).max() < 1e-6

    def test_zero_baseline(self):
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        kps1, kps2, matches, rel = correspondences(np.zeros((3, 3)), pose1, pose1)
        with pytest.raises(ZeroBaseline):
            triangulate(matches, kps1, kps2, pose1, rel, CAM)

    def test_oblique_view_gives_trapezoidal_footprint(self):
        # regular pixel grid under a 45 degree view: the far edge of the
        # reconstructed patch is wider on the ground than the near edge
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([30.0, 0, 0]), pose1.attitude)
        uu, vv = np.meshgrid(np.linspace(106, 406, 7), np.linspace(106, 406, 7))
        kps1 = [kp(u, v) for u, v in zip(uu.ravel(), vv.ravel())]
        # project ground intersections into camera 2 for exact correspondences
        from hdakit.camera import pixel_rays
        o, d = pixel_rays(CAM, pose1, np.column_stack([uu.ravel(), vv.ravel()]))
        t = -o[2] / d[:, 2]
        ground = o + d * t[:, None]
        kps2 = [kp(*project(CAM, pose2, g)) for g in ground]
        matches = [Match(i, i, 0) for i in range(len(kps1))]
        rel = relative_motion(NavRecord(0, pose1, 565.7, GRAV),
                              NavRecord(1, pose2, 565.7, GRAV))
        cloud = triangulate(matches, kps1, kps2, pose1, rel, CAM)
        pts = cloud.points.reshape(7, 7, 3)
        # identify near/far rows by ground distance from the camera
        y_cam = pose1.position[1]
        rows_dist = np.abs(pts[:, :, 1].mean(axis=1) - y_cam)
        widths = pts[:, -1, 0] - pts[:, 0, 0]
        assert widths[np.argmax(rows_dist)] > widths[np.argmin(rows_dist)]

    def test_low_parallax_discarded(self):
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([0.5, 0, 0]), pose1.attitude)
        pts = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 0.0], [-5.0, 3.0, 0.0]])
        kps1, kps2, matches, rel = correspondences(pts, pose1, pose2)
        # 0.5 m baseline at 565 m range: parallax ~0.05 deg < 0.2 deg
        with pytest.raises(AllPointsDegenerate):
            triangulate(matches, kps1, kps2, pose1, rel, CAM, min_parallax_deg=0.2)
        cloud = triangulate(matches, kps1, kps2, pose1, rel, CAM, min_parallax_deg=0.0)
        assert len(cloud) == 3


class TestFitPlane:
    def test_four_points_on_z0(self):
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]))
        normal, offset, rms = fit_plane(cloud)
        assert np.allclose(normal, [0, 0, 1], atol=1e-12)
        assert offset == pytest.approx(0.0, abs=1e-12)
        assert rms == pytest.approx(0.0, abs=1e-12)

    def test_ten_degree_ramp(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(-10, 10, size=(50, 2))
        z = xy[:, 0] * np.tan(np.radians(10.0))
        cloud = PointCloud(np.column_stack([xy, z]))
        normal, _, rms = fit_plane(cloud)
        tilt = np.degrees(np.arccos(abs(normal[2])))
        assert tilt == pytest.approx(10.0, abs=1e-9)
        assert rms < 1e-9

    def test_collinear_points_degenerate(self):
        pts = np.column_stack([np.arange(3.0), np.arange(3.0), np.zeros(3)])
        with pytest.raises(DegenerateGeometry):
            fit_plane(PointCloud(pts))

    def test_residual_zero_iff_coplanar(self):
        rng = np.random.default_rng(2)
        xy = rng.uniform(-5, 5, size=(30, 2))
        coplanar = np.column_stack([xy, 2.0 + 0.3 * xy[:, 0] - 0.1 * xy[:, 1]])
        _, _, rms = fit_plane(PointCloud(coplanar))
        assert rms < 1e-12
        bumped = coplanar.copy()
        bumped[0, 2] += 0.5
        _, _, rms2 = fit_plane(PointCloud(bumped))
        assert rms2 > 1e-3

    def test_normal_oriented_against_gravity(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 3, 0.0]])
        normal, _, _ = fit_plane(PointCloud(pts), gravity_dir=[0, 0, -1])
        assert normal[2] > 0


class TestSlope:
    def test_antiparallel_normal_zero_slope(self):
        assert slope_of([0, 0, 1], GRAV) == pytest.approx(0.0, abs=1e-12)

    def test_45_degrees(self):
        n = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
        assert slope_of(n, GRAV) == pytest.approx(45.0, abs=1e-9)

    def test_flipped_normal_same_slope(self):
        n = np.array([0.2, -0.3, 0.93])
        assert slope_of(n, GRAV) == pytest.approx(slope_of(-n, GRAV), abs=1e-12)

    def test_invariant_under_common_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            g = rng.normal(size=3)
            g /= np.linalg.norm(g)
            rot = quat_to_matrix(quat_normalize(rng.normal(size=4)))
            assert slope_of(rot @ n, rot @ g) == pytest.approx(
                slope_of(n, g), abs=1e-9)


class TestRoughness:
    def plane(self):
        return (np.array([0.0, 0.0, 1.0]), 0.0, 0.0)

    def test_perfect_plane_zero(self):
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.uniform(-5, 5, (20, 2)), np.zeros((20, 1))])
        assert roughness_of(PointCloud(pts), self.plane()) == 0.0

    def test_single_proud_point_flagged(self):
        pts = np.zeros((20, 3))
        pts[:, 0] = np.arange(20)
        pts[7, 2] = 0.4
        assert roughness_of(PointCloud(pts), self.plane()) == pytest.approx(0.4)

    def test_gaussian_residuals_match_order_statistics(self):
        rng = np.random.default_rng(5)
        pts = np.column_stack([rng.uniform(-20, 20, (1000, 2)),
                               rng.normal(0.0, 0.05, (1000, 1))])
        rough = roughness_of(PointCloud(pts), self.plane())
        assert rough == pytest.approx(1.96 * 0.05, rel=0.20)


class TestAssessAndRank:
    def mk(self, roi, slope=2.0, rough=0.1, area=400.0, n=50, gp=(0, 0, 0)):
        return SiteAssessment(roi=roi, slope_deg=slope, roughness_m=rough,
                              area_m2=area, n_points=n, ground_position=gp)

    def test_single_safe_site_rank1(self):
        out = assess_and_rank([self.mk(0)], [0, 0, 0])
        assert out[0].rank == 1 and out[0].safe

    def test_tie_broken_by_ils_distance(self):
        a = self.mk(0, gp=(50.0, 0.0, 0.0))
        b = self.mk(1, gp=(10.0, 0.0, 0.0))
        out = assess_and_rank([a, b], [0, 0, 0])
        assert out[0].roi == 1 and out[0].rank == 1
        assert out[1].roi == 0 and out[1].rank == 2

    def test_slope_over_limit_unsafe(self):
        out = assess_and_rank([self.mk(0, slope=10.1)], [0, 0, 0])
        assert not out[0].safe
        assert out[0].rank == 0

    def test_threshold_is_strict(self):
        out = assess_and_rank([self.mk(0, slope=10.0)], [0, 0, 0])
        assert not out[0].safe  # "less than 10 degrees"

    def test_safety_gate_matches_invariant(self):
        lim = SiteLimits()
        cases = [self.mk(0), self.mk(1, slope=11.0), self.mk(2, rough=0.31),
                 self.mk(3, area=99.0), self.mk(4, n=14)]
        out = assess_and_rank(cases, [0, 0, 0], lim)
        by_roi = {a.roi: a for a in out}
        for a in out:
            expect = (a.slope_deg < lim.slope_limit_deg
                      and a.roughness_m < lim.roughness_limit_m
                      and a.area_m2 >= lim.area_limit_m2
                      and a.n_points >= lim.n_min)
            assert a.safe == expect
        assert by_roi[0].rank == 1
        assert all(by_roi[i].rank == 0 for i in (1, 2, 3, 4))

    def test_better_slope_ranks_first(self):
        a = self.mk(0, slope=8.0)
        b = self.mk(1, slope=1.0)
        out = assess_and_rank([a, b], [0, 0, 0])
        assert out[0].roi == 1

    def test_csv(self, tmp_path):
        out = assess_and_rank([self.mk(0), self.mk(1, slope=12.0)], [0, 0, 0])
        path = tmp_path / "result.csv"
        save_assessment_csv(path, out)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "rank,roi,slope_deg,roughness_m,area_m2,n_points,dist_ils_m,safe"
        assert len(lines) == 3


class TestErrorVsPointCount:
    def test_error_decreases_with_point_count(self):
        # fixed geometry/noise; more surviving points -> smaller median error
        rng = np.random.default_rng(6)
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([30.0, 0, 0]), pose1.attitude)
        rel = relative_motion(NavRecord(0, pose1, 565.7, GRAV),
                              NavRecord(1, pose2, 565.7, GRAV))
        truth = 3.0

        def median_err(n_pts, trials=40):
            errs = []
            for _ in range(trials):
                xy = rng.uniform(-25, 25, size=(n_pts, 2))
                z = xy[:, 0] * np.tan(np.radians(truth))
                pts = np.column_stack([xy, z])
                uv1 = np.array([project(CAM, pose1, p) for p in pts])
                uv2 = np.array([project(CAM, pose2, p) for p in pts])
                uv1 += rng.normal(0, 0.5, uv1.shape)
                uv2 += rng.normal(0, 0.5, uv2.shape)
                kps1 = [kp(u, v) for u, v in uv1]
                kps2 = [kp(u, v) for u, v in uv2]
                matches = [Match(i, i, 0) for i in range(n_pts)]
                cloud = triangulate(matches, kps1, kps2, pose1, rel, CAM)
                normal, _, _ = fit_plane(cloud, GRAV)
                errs.append(abs(slope_of(normal, GRAV) - truth))
            return np.median(errs)

        e15, e46, e84 = median_err(15), median_err(46), median_err(84)
        assert e46 < e15
        assert e84 < e15
