"""Pinhole camera model, rigid transforms and voxel-grid indexing.

All geometry is float64. Pixel coordinates are continuous with (0,0) at
the center of the top-left pixel. Voxel cells are half-open, so a point
exactly on range_max maps to no cell.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class CameraModel:
    """Pinhole camera: 3x3 intrinsics, 4x4 LiDAR-to-camera extrinsics, (H, W) image size."""

    def __init__(self, intrinsics, extrinsics, image_size):
        self.intrinsics = np.asarray(intrinsics, dtype=np.float64)
        self.extrinsics = np.asarray(extrinsics, dtype=np.float64)
        self.image_size = (int(image_size[0]), int(image_size[1]))
        if self.intrinsics.shape != (3, 3):
            raise ValidationError("CameraModel: intrinsics must be 3x3")
        if self.extrinsics.shape != (4, 4):
            raise ValidationError("CameraModel: extrinsics must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("CameraModel: focal lengths must be positive")
        r = self.extrinsics[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValidationError("CameraModel: rotation block is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise ValidationError("CameraModel: rotation determinant must be +1")
        self._inv_extrinsics = np.linalg.inv(self.extrinsics)

    @property
    def fx(self):
        return self.intrinsics[0, 0]

    @property
    def fy(self):
        return self.intrinsics[1, 1]

    @property
    def cx(self):
        return self.intrinsics[0, 2]

    @property
    def cy(self):
        return self.intrinsics[1, 2]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel grid: physical range plus cell size, dims derived."""

    range_min: tuple
    range_max: tuple
    voxel_size: tuple
    dims: tuple = field(init=False)

    def __post_init__(self):
        rmin = tuple(float(v) for v in self.range_min)
        rmax = tuple(float(v) for v in self.range_max)
        size = tuple(float(v) for v in self.voxel_size)
        if any(s <= 0 for s in size):
            raise ValidationError("GridSpec: voxel_size must be positive")
        dims = []
        for k in range(3):
            n = round((rmax[k] - rmin[k]) / size[k])
            if n < 1 or abs(n * size[k] - (rmax[k] - rmin[k])) > 1e-9:
                raise ValidationError(
                    f"GridSpec: axis {k} extent {rmax[k] - rmin[k]} is not an exact "
                    f"multiple of voxel size {size[k]}")
            dims.append(n)
        object.__setattr__(self, "range_min", rmin)
        object.__setattr__(self, "range_max", rmax)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", tuple(dims))

    @property
    def n_voxels(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    def flat_index(self, ix, iy, iz):
        return (ix * self.dims[1] + iy) * self.dims[2] + iz


def project_point(p, cam):
    """Project a LiDAR-frame point to pixels.

    Returns (u, v, depth, valid). Points at or behind the camera plane
    (depth <= 1e-9) give (0, 0, depth, False) instead of raising.
    """
    p = np.asarray(p, dtype=np.float64)
    q = cam.extrinsics @ np.array([p[0], p[1], p[2], 1.0])
    depth = q[2]
    if depth <= 1e-9:
        return 0.0, 0.0, float(depth), False
    u = cam.fx * q[0] / depth + cam.cx
    v = cam.fy * q[1] / depth + cam.cy
    h, w = cam.image_size
    valid = (0.0 <= u < w) and (0.0 <= v < h)
    return float(u), float(v), float(depth), valid


def project_points(pts, cam):
    """Vectorized project_point: pts [N,3] -> (u[N], v[N], depth[N], valid[N])."""
    pts = np.asarray(pts, dtype=np.float64)
    q = pts @ cam.extrinsics[:3, :3].T + cam.extrinsics[:3, 3]
    depth = q[:, 2]
    front = depth > 1e-9
    safe = np.where(front, depth, 1.0)
    u = np.where(front, cam.fx * q[:, 0] / safe + cam.cx, 0.0)
    v = np.where(front, cam.fy * q[:, 1] / safe + cam.cy, 0.0)
    h, w = cam.image_size
    valid = front & (u >= 0.0) & (u < w) & (v >= 0.0) & (v < h)
    return u, v, depth, valid


def unproject_pixel(u, v, depth, cam):
    """Invert project_point: pixel plus depth back to a LiDAR-frame point."""
    if depth <= 0:
        raise ValidationError("unproject_pixel: non-positive depth")
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    p = cam._inv_extrinsics @ np.array([x, y, depth, 1.0])
    return p[:3]


def voxel_index(p, grid):
    """Cell containing p: ((ix, iy, iz), valid). Out-of-range is valid=False."""
    p = np.asarray(p, dtype=np.float64)
    idx = np.floor((p - np.array(grid.range_min)) / np.array(grid.voxel_size)).astype(np.int64)
    valid = all(0 <= idx[k] < grid.dims[k] for k in range(3))
    return (int(idx[0]), int(idx[1]), int(idx[2])), valid


def voxel_indices(pts, grid):
    """Vectorized voxel_index: pts [N,3] -> (idx [N,3] int, valid [N])."""
    pts = np.asarray(pts, dtype=np.float64)
    idx = np.floor((pts - np.array(grid.range_min)) / np.array(grid.voxel_size)).astype(np.int64)
    dims = np.array(grid.dims)
    valid = np.all((idx >= 0) & (idx < dims), axis=1)
    return idx, valid


def voxel_center(ix, iy, iz, grid):
    """Physical center of cell (ix, iy, iz)."""
    idx = (ix, iy, iz)
    for k in range(3):
        if not 0 <= idx[k] < grid.dims[k]:
            raise ValidationError(f"voxel_center: index {idx} outside dims {grid.dims}")
    return np.array([grid.range_min[k] + (idx[k] + 0.5) * grid.voxel_size[k] for k in range(3)])
