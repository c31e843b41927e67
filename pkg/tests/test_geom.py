import numpy as np
import pytest

from lcfusion import geom
from lcfusion.errors import ValidationError


def simple_camera(fx=100.0, fy=100.0, cx=64.0, cy=32.0, size=(64, 128)):
    intr = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    return geom.CameraModel(intr, np.eye(4), size)


def project_oracle(p, intr, extr, w=1.0):
    """Independent homogeneous-coordinates projection."""
    ph = np.array([p[0] * w, p[1] * w, p[2] * w, w])
    q = extr @ ph
    uvw = intr @ q[:3]
    return uvw[0] / uvw[2], uvw[1] / uvw[2], q[2] / q[3]


class TestProjectPoint:
    def test_principal_point_ray(self):
        cam = simple_camera()
        u, v, depth, valid = geom.project_point((0, 0, 10), cam)
        assert (u, v, depth, valid) == (64.0, 32.0, 10.0, True)

    def test_offset_point_matches_homogeneous_oracle(self):
        cam = simple_camera()
        u, v, depth, valid = geom.project_point((1, 0.5, 10), cam)
        ou, ov, od = project_oracle((1, 0.5, 10), cam.intrinsics, cam.extrinsics)
        assert valid
        assert abs(u - ou) < 1e-12 and abs(v - ov) < 1e-12 and abs(depth - od) < 1e-12
        assert (u, v, depth) == (74.0, 37.0, 10.0)

    def test_behind_camera_invalid(self):
        cam = simple_camera()
        u, v, depth, valid = geom.project_point((0, 0, -1), cam)
        assert not valid
        assert (u, v) == (0.0, 0.0)
        assert np.isfinite(depth)

    def test_homogeneous_rescale_invariance(self):
        cam = simple_camera()
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = rng.uniform([-3, -1.5, 2], [3, 1.5, 30])
            u1, v1, d1 = project_oracle(p, cam.intrinsics, cam.extrinsics, w=1.0)
            u2, v2, d2 = project_oracle(p, cam.intrinsics, cam.extrinsics, w=2.0)
            assert max(abs(u1 - u2), abs(v1 - v2), abs(d1 - d2)) < 1e-9

    def test_vectorized_matches_scalar(self):
        cam = simple_camera()
        rng = np.random.default_rng(11)
        pts = rng.uniform([-5, -5, -2], [5, 5, 40], size=(200, 3))
        u, v, d, ok = geom.project_points(pts, cam)
        for i in range(200):
            su, sv, sd, sok = geom.project_point(pts[i], cam)
            assert sok == ok[i]
            if sok:
                assert max(abs(su - u[i]), abs(sv - v[i]), abs(sd - d[i])) < 1e-12


class TestUnprojectPixel:
    def test_principal_point_inverse(self):
        cam = simple_camera()
        p = geom.unproject_pixel(64, 32, 10, cam)
        assert np.allclose(p, [0, 0, 10], atol=1e-12)

    def test_oracle_case_inverse(self):
        cam = simple_camera()
        p = geom.unproject_pixel(74, 37, 10, cam)
        assert np.allclose(p, [1, 0.5, 10], atol=1e-12)

    def test_round_trip_1000_random(self):
        cam = simple_camera()
        rng = np.random.default_rng(7)
        for _ in range(1000):
            u = rng.uniform(0, 127.999)
            v = rng.uniform(0, 63.999)
            d = rng.uniform(0.1, 50)
            p = geom.unproject_pixel(u, v, d, cam)
            u2, v2, d2, valid = geom.project_point(p, cam)
            assert valid
            assert max(abs(u2 - u), abs(v2 - v), abs(d2 - d)) < 1e-9

    def test_nonpositive_depth_rejected(self):
        cam = simple_camera()
        with pytest.raises(ValidationError, match="non-positive depth"):
            geom.unproject_pixel(10, 10, 0.0, cam)

    def test_nontrivial_extrinsics_round_trip(self):
        r = np.array([[0, -1, 0], [0, 0, -1], [1, 0, 0.0]])
        ext = np.eye(4)
        ext[:3, :3] = r
        ext[:3, 3] = -r @ np.array([0, 0, 1.6])
        cam = geom.CameraModel(np.array([[88.0, 0, 88], [0, 88.0, 32], [0, 0, 1]]), ext, (64, 176))
        rng = np.random.default_rng(13)
        for _ in range(200):
            u, v = rng.uniform(0, 175.99), rng.uniform(0, 63.99)
            d = rng.uniform(0.5, 30)
            p = geom.unproject_pixel(u, v, d, cam)
            u2, v2, d2, valid = geom.project_point(p, cam)
            assert valid and max(abs(u2 - u), abs(v2 - v), abs(d2 - d)) < 1e-9


class TestCameraModelValidation:
    def test_rejects_bad_rotation(self):
        ext = np.eye(4)
        ext[0, 0] = 2.0
        with pytest.raises(ValidationError, match="orthonormal"):
            geom.CameraModel(np.eye(3) * 10 + np.diag([0, 0, -9]), ext, (4, 4))

    def test_rejects_reflection(self):
        ext = np.eye(4)
        ext[0, 0] = -1.0   # orthonormal but det -1
        intr = np.array([[10.0, 0, 2], [0, 10.0, 2], [0, 0, 1]])
        with pytest.raises(ValidationError, match="determinant"):
            geom.CameraModel(intr, ext, (4, 4))

    def test_rejects_nonpositive_focal(self):
        intr = np.array([[0.0, 0, 2], [0, 10.0, 2], [0, 0, 1]])
        with pytest.raises(ValidationError, match="focal"):
            geom.CameraModel(intr, np.eye(4), (4, 4))


class TestGridSpec:
    def test_paper_scale_dims(self):
        # full-scale grid: 0.075 m cells over [-54, 54] in x/y
        grid = geom.GridSpec((-54, -54, -5), (54, 54, 3), (0.075, 0.075, 0.2))
        assert grid.dims == (1440, 1440, 40)

    def test_center_of_x_axis(self):
        grid = geom.GridSpec((-54, -54, -5), (54, 54, 3), (0.075, 0.075, 0.2))
        (ix, _, _), valid = geom.voxel_index((0.0, 0.0, 0.0), grid)
        assert valid and ix == 720

    def test_lower_corner(self):
        grid = geom.GridSpec((-54, -54, -5), (54, 54, 3), (0.075, 0.075, 0.2))
        idx, valid = geom.voxel_index((-54, -54, -5), grid)
        assert valid and idx == (0, 0, 0)

    def test_range_max_is_excluded(self):
        grid = geom.GridSpec((0, 0, 0), (1, 1, 1), (0.5, 0.5, 0.5))
        _, valid = geom.voxel_index((1.0, 0.5, 0.5), grid)
        assert not valid

    def test_inexact_extent_rejected(self):
        with pytest.raises(ValidationError):
            geom.GridSpec((0, 0, 0), (1, 1, 1), (0.3, 0.5, 0.5))

    def test_nonpositive_size_rejected(self):
        with pytest.raises(ValidationError):
            geom.GridSpec((0, 0, 0), (1, 1, 1), (0.5, -0.5, 0.5))


class TestVoxelCenter:
    def test_lower_corner_center(self):
        grid = geom.GridSpec((-54, -54, -5), (54, 54, 3), (0.075, 0.075, 0.2))
        c = geom.voxel_center(0, 0, 0, grid)
        assert np.allclose(c, [-53.9625, -53.9625, -4.9], atol=1e-12)

    def test_single_voxel_grid(self):
        grid = geom.GridSpec((0, 0, 0), (1, 1, 1), (1, 1, 1))
        assert np.allclose(geom.voxel_center(0, 0, 0, grid), [0.5, 0.5, 0.5])

    def test_index_inverts_center_exhaustively(self):
        grid = geom.GridSpec((-2, -1, 0), (2, 1, 3), (0.5, 0.5, 1.0))
        for ix in range(grid.dims[0]):
            for iy in range(grid.dims[1]):
                for iz in range(grid.dims[2]):
                    c = geom.voxel_center(ix, iy, iz, grid)
                    idx, valid = geom.voxel_index(c, grid)
                    assert valid and idx == (ix, iy, iz)

    def test_out_of_range_index_rejected(self):
        grid = geom.GridSpec((0, 0, 0), (1, 1, 1), (0.5, 0.5, 0.5))
        with pytest.raises(ValidationError):
            geom.voxel_center(2, 0, 0, grid)
