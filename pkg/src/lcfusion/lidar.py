"""Point-cloud voxelization, sparse depth projection and depth completion."""

from dataclasses import dataclass

import numpy as np

from . import geom, nncore
from .errors import ValidationError


@dataclass
class PointCloud:
    """Points as an [N, 4] float64 array of (x, y, z, intensity)."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValidationError("PointCloud: non-finite coordinates")

    def __len__(self):
        return self.points.shape[0]


class SparseVoxelGrid:
    """Non-empty voxels only: sorted integer keys plus a [Nvox, C] feature tensor."""

    def __init__(self, grid, keys, features):
        self.grid = grid
        self.keys = [tuple(int(v) for v in k) for k in keys]
        self.features = nncore.as_tensor(features)
        if self.features.data.ndim != 2 or self.features.data.shape[0] != len(self.keys):
            raise ValidationError("SparseVoxelGrid: features must be [len(keys), C]")
        if self.features.data.shape[1] == 0:
            raise ValidationError("SparseVoxelGrid: zero-length feature vectors")
        for k in self.keys:
            for ax in range(3):
                if not 0 <= k[ax] < grid.dims[ax]:
                    raise ValidationError(f"SparseVoxelGrid: key {k} outside dims {grid.dims}")
        self._key_to_row = {k: i for i, k in enumerate(self.keys)}

    @property
    def channels(self):
        return self.features.data.shape[1]

    def __len__(self):
        return len(self.keys)

    def feature(self, key):
        return self.features.data[self._key_to_row[tuple(key)]]

    def items(self):
        for k in self.keys:
            yield k, self.features.data[self._key_to_row[k]]


@dataclass
class DepthMap:
    """H x W depths in meters plus a validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValidationError("DepthMap: values and mask must be matching 2-d arrays")
        sel = self.values[self.mask]
        if sel.size and (not np.all(np.isfinite(sel)) or np.any(sel <= 0)):
            raise ValidationError("DepthMap: valid entries must be positive and finite")

    @property
    def dense(self):
        return bool(self.mask.all())


def pool_points(pc, grid):
    """Mean-pool points per voxel.

    Returns (keys sorted ascending, base [Nvox, 4] of mean offsets from the
    voxel center plus mean intensity, counts per voxel). Out-of-range points
    are dropped.
    """
    if len(pc) == 0:
        return [], np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    idx, valid = geom.voxel_indices(pc.points[:, :3], grid)
    idx = idx[valid]
    pts = pc.points[valid]
    if idx.shape[0] == 0:
        return [], np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    flat = (idx[:, 0] * grid.dims[1] + idx[:, 1]) * grid.dims[2] + idx[:, 2]
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    pts = pts[order]
    uniq, starts = np.unique(flat, return_index=True)
    counts = np.diff(np.append(starts, flat.size))
    sums = np.add.reduceat(pts, starts, axis=0)
    means = sums / counts[:, None]
    d2 = grid.dims[2]
    d1 = grid.dims[1]
    keys = np.stack([uniq // (d1 * d2), (uniq // d2) % d1, uniq % d2], axis=1)
    centers = np.array(grid.range_min) + (keys + 0.5) * np.array(grid.voxel_size)
    base = np.concatenate([means[:, :3] - centers, means[:, 3:4]], axis=1)
    return [tuple(map(int, k)) for k in keys], base, counts


def voxelize(pc, grid, c3d, weight, bias):
    """Voxelize a point cloud into a sparse feature grid.

    Per occupied voxel the base feature is (mean xyz offset from the voxel
    center, mean intensity), then a learnable linear map embeds it to c3d
    channels. Empty voxels are absent; an empty cloud gives an empty grid.
    """
    if c3d < 4:
        raise ValidationError("voxelize: c3d must be >= 4")
    if weight.data.shape != (4, c3d) or bias.data.shape != (c3d,):
        raise ValidationError("voxelize: embedding must be [4, c3d] with bias [c3d]")
    keys, base, _ = pool_points(pc, grid)
    if not keys:
        return SparseVoxelGrid(grid, [], nncore.Tensor(np.zeros((0, c3d))))
    feats = nncore.linear(nncore.Tensor(base), weight.tensor, bias.tensor)
    return SparseVoxelGrid(grid, keys, feats)


def sparse_depth(pc, cam, stride=1):
    """Project points to the (optionally strided) pixel grid, keeping min depth.

    Each valid-projecting point writes its camera depth at the rounded cell
    (u/stride, v/stride); collisions keep the closest surface. Returns a
    DepthMap of shape (H/stride, W/stride).
    """
    h, w = cam.image_size
    if h % stride or w % stride:
        raise ValidationError("sparse_depth: stride must divide the image size")
    hs, ws = h // stride, w // stride
    values = np.zeros((hs, ws), dtype=np.float64)
    mask = np.zeros((hs, ws), dtype=bool)
    if len(pc) == 0:
        return DepthMap(values, mask)
    u, v, depth, valid = geom.project_points(pc.points[:, :3], cam)
    # round half up so each cell owns [c-0.5, c+0.5)
    cu = np.floor(u[valid] / stride + 0.5).astype(np.int64)
    cv = np.floor(v[valid] / stride + 0.5).astype(np.int64)
    d = depth[valid]
    inb = (cu >= 0) & (cu < ws) & (cv >= 0) & (cv < hs)
    cu, cv, d = cu[inb], cv[inb], d[inb]
    for y, x, dd in zip(cv, cu, d):
        if not mask[y, x] or dd < values[y, x]:
            values[y, x] = dd
            mask[y, x] = True
    return DepthMap(values, mask)


def complete_depth(d):
    """Fill every pixel with the depth of its nearest valid pixel.

    Distance is Euclidean in pixel units; exact ties go to the seed earliest
    in row-major order. Valid pixels keep their values bit-exactly.
    """
    if not d.mask.any():
        raise ValidationError("complete_depth: empty depth map")
    if d.dense:
        return DepthMap(d.values.copy(), np.ones_like(d.mask))
    h, w = d.values.shape
    seeds_y, seeds_x = np.nonzero(d.mask)  # row-major order
    seed_vals = d.values[seeds_y, seeds_x]
    out = d.values.copy()
    ys, xs = np.nonzero(~d.mask)
    # integer squared distances are exact, argmin takes the first (row-major) seed
    chunk = max(1, 2_000_000 // max(1, seeds_y.size))
    for lo in range(0, ys.size, chunk):
        yy = ys[lo:lo + chunk, None].astype(np.int64)
        xx = xs[lo:lo + chunk, None].astype(np.int64)
        d2 = (yy - seeds_y[None, :]) ** 2 + (xx - seeds_x[None, :]) ** 2
        out[ys[lo:lo + chunk], xs[lo:lo + chunk]] = seed_vals[np.argmin(d2, axis=1)]
    return DepthMap(out, np.ones((h, w), dtype=bool))


def depth_features(d, c_depth, k1, b1, k2, b2):
    """Embed a dense depth map as [c_depth, H, W] features of log-depth.

    Two linear conv layers: 3x3 same-padding (1 -> c_depth) then pointwise
    (c_depth -> c_depth). Differentiable through both kernels.
    """
    if not d.dense:
        raise ValidationError("depth_features: input must be dense")
    x = nncore.Tensor(np.log(d.values)[None, :, :])
    hidden = nncore.conv2d(x, k1.tensor, b1.tensor, stride=1, padding=1)
    return nncore.conv2d(hidden, k2.tensor, b2.tensor, stride=1, padding=0)
