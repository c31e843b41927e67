import numpy as np
import pytest

from lcfusion import geom, lidar, nncore, oracles
from lcfusion.errors import ValidationError


def small_grid():
    return geom.GridSpec((0, 0, 0), (4, 4, 2), (1, 1, 1))


def identity_embed(c3d=4):
    # linear map that passes the 4 base features straight through
    w = np.zeros((4, c3d))
    w[:4, :4] = np.eye(4)
    return nncore.Parameter("w", w), nncore.Parameter("b", np.zeros(c3d))


def camera_64x128():
    intr = np.array([[100.0, 0, 64], [0, 100.0, 32], [0, 0, 1]])
    return geom.CameraModel(intr, np.eye(4), (64, 128))


class TestVoxelize:
    def test_mean_intensity(self):
        pc = lidar.PointCloud([[0.4, 0.5, 0.5, 0.2], [0.6, 0.5, 0.5, 0.6]])
        w, b = identity_embed()
        svg = lidar.voxelize(pc, small_grid(), 4, w, b)
        assert len(svg) == 1
        assert abs(svg.feature((0, 0, 0))[3] - 0.4) < 1e-15

    def test_point_at_center_has_zero_offsets(self):
        pc = lidar.PointCloud([[1.5, 2.5, 0.5, 0.9]])
        w, b = identity_embed()
        svg = lidar.voxelize(pc, small_grid(), 4, w, b)
        feat = svg.feature((1, 2, 0))
        assert np.allclose(feat[:3], 0.0, atol=1e-12)
        assert feat[3] == 0.9

    def test_brute_force_recount_of_1000_points(self):
        rng = np.random.default_rng(42)
        pts = np.column_stack([rng.uniform(-1, 5, 1000), rng.uniform(-1, 5, 1000),
                               rng.uniform(-1, 3, 1000), rng.uniform(0, 1, 1000)])
        grid = small_grid()
        keys, base, counts = lidar.pool_points(lidar.PointCloud(pts), grid)
        # independent per-point scan
        want = {}
        in_range = 0
        for p in pts:
            idx, ok = geom.voxel_index(p[:3], grid)
            if ok:
                want[idx] = want.get(idx, 0) + 1
                in_range += 1
        assert dict(zip(keys, counts)) == want
        assert counts.sum() == in_range

    def test_partition_property(self):
        # every in-range point lands in exactly the voxel the scan says
        rng = np.random.default_rng(43)
        pts = np.column_stack([rng.uniform(0, 4, 500), rng.uniform(0, 4, 500),
                               rng.uniform(0, 2, 500), rng.uniform(0, 1, 500)])
        grid = small_grid()
        keys, _, counts = lidar.pool_points(lidar.PointCloud(pts), grid)
        assert counts.sum() == 500
        assert len(set(keys)) == len(keys)

    def test_empty_cloud(self):
        w, b = identity_embed()
        svg = lidar.voxelize(lidar.PointCloud(np.zeros((0, 4))), small_grid(), 4, w, b)
        assert len(svg) == 0

    def test_c3d_minimum(self):
        w, b = identity_embed()
        with pytest.raises(ValidationError):
            lidar.voxelize(lidar.PointCloud(np.zeros((0, 4))), small_grid(), 3, w, b)

    def test_keys_sorted(self):
        rng = np.random.default_rng(44)
        pts = np.column_stack([rng.uniform(0, 4, 200), rng.uniform(0, 4, 200),
                               rng.uniform(0, 2, 200), rng.uniform(0, 1, 200)])
        keys, _, _ = lidar.pool_points(lidar.PointCloud(pts), small_grid())
        assert keys == sorted(keys)


class TestSparseDepth:
    def test_single_point(self):
        d = lidar.sparse_depth(lidar.PointCloud([[0, 0, 10, 0.5]]), camera_64x128())
        assert d.mask.sum() == 1
        assert d.mask[32, 64]
        assert d.values[32, 64] == 10.0

    def test_min_depth_wins_on_collision(self):
        pc = lidar.PointCloud([[0, 0, 9, 0.5], [0, 0, 5, 0.5]])
        d = lidar.sparse_depth(pc, camera_64x128())
        assert d.values[32, 64] == 5.0

    def test_masked_count_matches_set_oracle(self):
        rng = np.random.default_rng(45)
        pts = np.column_stack([rng.uniform(-3, 3, 400), rng.uniform(-1.5, 1.5, 400),
                               rng.uniform(2, 30, 400), rng.uniform(0, 1, 400)])
        cam = camera_64x128()
        d = lidar.sparse_depth(lidar.PointCloud(pts), cam)
        pixels = set()
        for p in pts:
            u, v, depth, ok = geom.project_point(p[:3], cam)
            if ok:
                px, py = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
                if 0 <= px < 128 and 0 <= py < 64:
                    pixels.add((py, px))
        assert d.mask.sum() == len(pixels)

    def test_mask_value_never_above_any_projecting_depth(self):
        rng = np.random.default_rng(46)
        pts = np.column_stack([rng.uniform(-1, 1, 200), rng.uniform(-0.5, 0.5, 200),
                               rng.uniform(2, 20, 200), np.zeros(200)])
        cam = camera_64x128()
        d = lidar.sparse_depth(lidar.PointCloud(pts), cam)
        for p in pts:
            u, v, depth, ok = geom.project_point(p[:3], cam)
            if ok:
                px, py = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
                if 0 <= px < 128 and 0 <= py < 64:
                    assert d.values[py, px] <= depth + 1e-12

    def test_strided_projection(self):
        d = lidar.sparse_depth(lidar.PointCloud([[0, 0, 10, 0.5]]), camera_64x128(), stride=4)
        assert d.values.shape == (16, 32)
        assert d.mask[8, 16]


class TestCompleteDepth:
    def test_dense_input_is_identity(self):
        rng = np.random.default_rng(47)
        vals = rng.uniform(1, 5, (6, 6))
        d = lidar.complete_depth(lidar.DepthMap(vals, np.ones((6, 6), dtype=bool)))
        assert np.array_equal(d.values, vals)
        assert d.mask.all()

    def test_single_seed_fills_constant(self):
        vals = np.zeros((5, 7))
        mask = np.zeros((5, 7), dtype=bool)
        vals[2, 3] = 7.0
        mask[2, 3] = True
        d = lidar.complete_depth(lidar.DepthMap(vals, mask))
        assert (d.values == 7.0).all() and d.mask.all()

    def test_two_seeds_match_brute_force(self):
        vals = np.zeros((8, 8))
        mask = np.zeros((8, 8), dtype=bool)
        vals[1, 2], mask[1, 2] = 3.0, True
        vals[6, 5], mask[6, 5] = 9.0, True
        d = lidar.complete_depth(lidar.DepthMap(vals, mask))
        assert np.array_equal(d.values, oracles.nearest_seed_fill(vals, mask))

    def test_random_maps_match_brute_force(self):
        rng = np.random.default_rng(48)
        for _ in range(10):
            mask = rng.random((8, 8)) < 0.2
            if not mask.any():
                mask[3, 3] = True
            vals = np.where(mask, rng.uniform(1, 9, (8, 8)), 0.0)
            d = lidar.complete_depth(lidar.DepthMap(vals, mask))
            assert np.array_equal(d.values, oracles.nearest_seed_fill(vals, mask))

    def test_idempotent(self):
        rng = np.random.default_rng(49)
        mask = rng.random((10, 10)) < 0.1
        mask[0, 0] = True
        vals = np.where(mask, rng.uniform(1, 9, (10, 10)), 0.0)
        once = lidar.complete_depth(lidar.DepthMap(vals, mask))
        twice = lidar.complete_depth(once)
        assert np.array_equal(once.values, twice.values)

    def test_empty_map_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            lidar.complete_depth(lidar.DepthMap(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool)))


class TestDepthFeatures:
    @staticmethod
    def identity_params(c_depth=2):
        k1 = np.zeros((c_depth, 1, 3, 3))
        k1[:, 0, 1, 1] = 1.0                       # center tap
        k2 = np.zeros((c_depth, c_depth, 1, 1))
        for c in range(c_depth):
            k2[c, c, 0, 0] = 1.0
        return (nncore.Parameter("k1", k1), nncore.Parameter("b1", np.zeros(c_depth)),
                nncore.Parameter("k2", k2), nncore.Parameter("b2", np.zeros(c_depth)))

    def test_identity_kernels_give_log_depth(self):
        rng = np.random.default_rng(50)
        vals = rng.uniform(0.5, 20, (5, 6))
        d = lidar.DepthMap(vals, np.ones((5, 6), dtype=bool))
        k1, b1, k2, b2 = self.identity_params()
        out = lidar.depth_features(d, 2, k1, b1, k2, b2)
        assert np.allclose(out.data[0], np.log(vals), atol=1e-12)

    def test_constant_input_constant_output(self):
        d = lidar.DepthMap(np.full((6, 6), 4.0), np.ones((6, 6), dtype=bool))
        rng = np.random.default_rng(51)
        k1 = nncore.Parameter("k1", rng.standard_normal((2, 1, 3, 3)))
        b1 = nncore.Parameter("b1", rng.standard_normal(2))
        k2 = nncore.Parameter("k2", rng.standard_normal((2, 2, 1, 1)))
        b2 = nncore.Parameter("b2", rng.standard_normal(2))
        out = lidar.depth_features(d, 2, k1, b1, k2, b2).data
        interior = out[:, 1:-1, 1:-1]
        assert np.abs(interior - interior[:, :1, :1]).max() <= 1e-12

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(52)
        d = lidar.DepthMap(rng.uniform(1, 9, (4, 4)), np.ones((4, 4), dtype=bool))
        k1 = nncore.Parameter("k1", rng.standard_normal((2, 1, 3, 3)) * 0.5)
        b1 = nncore.Parameter("b1", rng.standard_normal(2) * 0.5)
        k2 = nncore.Parameter("k2", rng.standard_normal((2, 2, 1, 1)) * 0.5)
        b2 = nncore.Parameter("b2", rng.standard_normal(2) * 0.5)
        err = nncore.grad_check(lambda: nncore.sum_all(
            lidar.depth_features(d, 2, k1, b1, k2, b2)), [k1, b1, k2, b2])
        assert err <= 1e-5

    def test_sparse_input_rejected(self):
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        k1, b1, k2, b2 = self.identity_params()
        with pytest.raises(ValidationError, match="dense"):
            lidar.depth_features(lidar.DepthMap(np.ones((4, 4)), mask), 2, k1, b1, k2, b2)
