"""Camera model, pose algebra, and ROI prediction tests."""

import numpy as np
import pytest

from hdakit.camera import (
    CameraModel,
    NavRecord,
    Pose,
    RelativePose,
    back_project,
    compose_pose,
    load_nav_csv,
    look_at_pose,
    matrix_to_quat,
    pixel_rays,
    predict_roi,
    project,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    relative_motion,
    save_nav_csv,
)
from hdakit.errors import BehindCamera, OffImage, OutOfBounds
from hdakit.quadtree import Roi


CAM = CameraModel(1000.0, (512.0, 512.0), 1024, 1024)


def identity_pose(position=(0.0, 0.0, 0.0)):
    return Pose(np.asarray(position, float), np.array([1.0, 0.0, 0.0, 0.0]))


def random_pose(rng):
    q = quat_normalize(rng.normal(size=4))
    return Pose(rng.uniform(-100, 100, size=3), q)


def make_roi(x0, y0, size):
    return Roi(x0=x0, y0=y0, width_px=size, height_px=size,
               mean_brightness=100.0, stddev_brightness=5.0,
               footprint_m=20.0, index=0)


class TestQuaternions:
    def test_round_trip_matrix(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            q = quat_normalize(rng.normal(size=4))
            q2 = matrix_to_quat(quat_to_matrix(q))
            assert np.allclose(q, q2, atol=1e-12)

    def test_mul_matches_matrix_product(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = quat_normalize(rng.normal(size=4))
            b = quat_normalize(rng.normal(size=4))
            m = quat_to_matrix(quat_mul(a, b))
            assert np.allclose(m, quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


class TestProject:
    def test_on_axis_point_maps_to_principal_point(self):
        pose = identity_pose()
        for depth in (0.5, 10.0, 400.0):
            u, v = project(CAM, pose, [0, 0, depth])
            assert (u, v) == (512.0, 512.0)

    def test_hand_computed_offset(self):
        # u = u0 + f*x/z = 512 + 1000*1/100
        u, v = project(CAM, identity_pose(), [1.0, 0.0, 100.0])
        assert u == pytest.approx(522.0, abs=1e-12)
        assert v == pytest.approx(512.0, abs=1e-12)

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(CAM, identity_pose(), [0.0, 0.0, -1.0])


class TestBackProject:
    def test_principal_point_is_boresight(self):
        pose = look_at_pose([0, 0, 400], [0, 0, 0])
        _, d = back_project(CAM, pose, (512.0, 512.0))
        assert np.allclose(d, pose.boresight(), atol=1e-12)

    def test_round_trip_random_pixels(self):
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        px = rng.uniform([0, 0], [CAM.width_px, CAM.height_px], size=(1000, 2))
        origin, dirs = pixel_rays(CAM, pose, px)
        t = rng.uniform(1.0, 500.0, size=1000)
        pts = origin + dirs * t[:, None]
        err = 0.0
        for p, (u, v) in zip(pts, px):
            uu, vv = project(CAM, pose, p)
            err = max(err, abs(uu - u), abs(vv - v))
        assert err < 1e-9

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            back_project(CAM, identity_pose(), (-1.0, 0.0))


class TestRelativeMotion:
    def g(self):
        return np.array([0.0, 0.0, -1.0])

    def test_same_record_is_identity(self):
        nav = NavRecord(0.0, look_at_pose([0, -400, 400], [0, 0, 0]), 565.0, self.g())
        rel = relative_motion(nav, nav)
        assert rel.baseline_m == 0.0
        assert np.allclose(rel.rotation, np.eye(3), atol=1e-12)

    def test_pure_lateral_30m(self):
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([30.0, 0, 0]), pose1.attitude)
        nav1 = NavRecord(0.0, pose1, 565.0, self.g())
        nav2 = NavRecord(2.4, pose2, 565.0, self.g())
        rel = relative_motion(nav1, nav2)
        assert rel.baseline_m == pytest.approx(30.0, abs=1e-12)
        assert np.allclose(rel.rotation, np.eye(3), atol=1e-12)

    def test_composition_oracle_random_poses(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            p1, p2 = random_pose(rng), random_pose(rng)
            rel = relative_motion(NavRecord(0.0, p1, 100.0, self.g()),
                                  NavRecord(1.0, p2, 100.0, self.g()))
            p2_back = compose_pose(p1, rel)
            assert np.allclose(p2_back.position, p2.position, atol=1e-10)
            assert np.allclose(p2_back.rotation_wc, p2.rotation_wc, atol=1e-10)

    def test_baseline_invariant_under_global_rigid_transform(self):
        rng = np.random.default_rng(5)
        p1, p2 = random_pose(rng), random_pose(rng)
        rel = relative_motion(NavRecord(0, p1, 1.0, self.g()),
                              NavRecord(1, p2, 1.0, self.g()))
        q = quat_normalize(rng.normal(size=4))
        rot = quat_to_matrix(q)
        shift = rng.uniform(-50, 50, size=3)

        def moved(p):
            return Pose(rot @ p.position + shift, quat_mul(p.attitude, quat_normalize(
                matrix_to_quat(rot.T))))

        relm = relative_motion(NavRecord(0, moved(p1), 1.0, self.g()),
                               NavRecord(1, moved(p2), 1.0, self.g()))
        assert relm.baseline_m == pytest.approx(rel.baseline_m, abs=1e-9)


class TestPredictRoi:
    def test_identity_zero_margin(self):
        roi = make_roi(100, 200, 128)
        out = predict_roi(roi, RelativePose.identity(), CAM, 400.0, 0.0)
        assert (out.x0, out.y0, out.width_px, out.height_px) == (100, 200, 128, 128)

    def test_identity_margin_inflates_each_side(self):
        roi = make_roi(256, 256, 128)
        out = predict_roi(roi, RelativePose.identity(), CAM, 400.0, 0.25)
        assert (out.x0, out.y0) == (224, 224)
        assert (out.width_px, out.height_px) == (192, 192)

    def test_clamped_to_image(self):
        roi = make_roi(0, 0, 128)
        out = predict_roi(roi, RelativePose.identity(), CAM, 400.0, 0.25)
        assert (out.x0, out.y0) == (0, 0)
        assert (out.width_px, out.height_px) == (160, 160)

    def test_lateral_motion_matches_ray_plane_oracle(self):
        # 30 m lateral at 400 m range, 45 degree look angle
        pose1 = look_at_pose([0, -400, 400], [0, 0, 0])
        pose2 = Pose(pose1.position + np.array([30.0, 0, 0]), pose1.attitude)
        g = np.array([0.0, 0.0, -1.0])
        rel = relative_motion(NavRecord(0, pose1, 400.0, g),
                              NavRecord(1, pose2, 400.0, g))
        roi = make_roi(400, 400, 200)
        out = predict_roi(roi, rel, CAM, 400.0, 0.0)

        # oracle: intersect each corner ray with the fronto-parallel plane at
        # range 400 (plane through boresight point, normal = boresight), then
        # project into camera 2
        n = pose1.boresight()
        plane_pt = pose1.position + 400.0 * n
        corners = np.array([[roi.x0, roi.y0], [roi.x0 + 200, roi.y0],
                            [roi.x0, roi.y0 + 200], [roi.x0 + 200, roi.y0 + 200]],
                           dtype=float)
        origin, dirs = pixel_rays(CAM, pose1, corners)
        ts = ((plane_pt - origin) @ n) / (dirs @ n)
        world = origin + dirs * ts[:, None]
        uv = np.array([project(CAM, pose2, w) for w in world])
        assert abs(uv[:, 0].min() - out.x0) <= 1.0
        assert abs(uv[:, 1].min() - out.y0) <= 1.0
        assert abs(uv[:, 0].max() - (out.x0 + out.width_px)) <= 1.0
        assert abs(uv[:, 1].max() - (out.y0 + out.height_px)) <= 1.0

    def test_off_image(self):
        roi = make_roi(0, 0, 64)
        # huge lateral shift pushes the box past the image edge
        rel = RelativePose(np.eye(3), np.array([500.0, 0.0, 0.0]))
        with pytest.raises(OffImage):
            predict_roi(roi, rel, CAM, 400.0, 0.0)


class TestNavCsv:
    def test_round_trip(self, tmp_path):
        g = np.array([0.0, 0.0, -1.0])
        nav = [
            NavRecord(10.0, look_at_pose([0, -400, 400], [0, 0, 0]), 565.685, g),
            NavRecord(12.4, look_at_pose([31.2, -400, 400], [0, 0, 0]), 566.0, g),
        ]
        path = tmp_path / "nav.csv"
        save_nav_csv(path, nav)
        back = load_nav_csv(path)
        assert len(back) == 2
        for a, b in zip(nav, back):
            assert b.time == a.time
            assert np.allclose(b.pose.position, a.pose.position, atol=0)
            assert np.allclose(b.pose.attitude, a.pose.attitude, atol=1e-15)
            assert b.range_m == a.range_m

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "nav.csv"
        path.write_text("time,x,y\n1,2,3\n")
        with pytest.raises(ValueError):
            load_nav_csv(path)


class TestInvariants:
    def test_unit_attitude_enforced(self):
        with pytest.raises(ValueError):
            Pose(np.zeros(3), np.array([1.0, 1.0, 0.0, 0.0]))

    def test_nav_requires_positive_range(self):
        with pytest.raises(ValueError):
            NavRecord(0.0, identity_pose(), 0.0, np.array([0, 0, -1.0]))

    def test_camera_validation(self):
        with pytest.raises(ValueError):
            CameraModel(-1.0, (10, 10), 100, 100)
        with pytest.raises(ValueError):
            CameraModel(100.0, (200, 10), 100, 100)
