"""Cross-modal fusion stages.

Voxel-side enhancement pulls distance-weighted camera features into each
non-empty voxel. Image-side enhancement concatenates completed-depth
features onto the camera features. The enhanced camera features are lifted
into the voxel grid along depth-distributed rays and fused with the voxel
features through a learned sigmoid gate, then the fused volume collapses
to BEV and runs through a small residual conv encoder.
"""

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import geom, lidar, nncore
from .errors import ValidationError


@dataclass
class CameraFeatures:
    """[C2D, Hf, Wf] feature tensor at 1/stride of image resolution."""

    features: nncore.Tensor
    stride: int

    def __post_init__(self):
        if self.features.data.ndim != 3:
            raise ValidationError("CameraFeatures: features must be [C, Hf, Wf]")

    @property
    def hf(self):
        return self.features.data.shape[1]

    @property
    def wf(self):
        return self.features.data.shape[2]


class FusionConfig(BaseModel):
    """Knobs for the fusion stages; every constant is overridable."""

    model_config = ConfigDict(extra="forbid")

    k_neighbors: int = 9
    distance_prior: bool = True
    adaptive_weighting: bool = True
    depth_bins: int = 16
    depth_min: float = 1.0
    depth_max: float = 30.0
    c2d: int = 32
    c3d: int = 32
    c_depth: int = 8
    distance_epsilon: float = 1e-3
    enable_vem: bool = True
    enable_iem: bool = True
    enable_unified: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.depth_bins < 1:
            raise ValueError("depth_bins must be >= 1")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError("need 0 < depth_min < depth_max")
        return self


def knn_pixels(u, v, k, hf, wf):
    """K nearest feature-cell centers to the continuous point (u, v).

    Cells sit at integer (col, row) coordinates. Returns (cells [k, 2] as
    (row, col), distances [k]) in ascending distance, exact ties resolved
    in row-major cell order.
    """
    if k > hf * wf:
        raise ValidationError(f"knn_pixels: k={k} exceeds cell count {hf * wf}")
    cols = np.arange(wf, dtype=np.float64)
    rows = np.arange(hf, dtype=np.float64)
    d2 = (v - rows[:, None]) ** 2 + (u - cols[None, :]) ** 2
    order = np.argsort(d2.reshape(-1), kind="stable")[:k]
    cells = np.stack([order // wf, order % wf], axis=1)
    return cells, np.sqrt(d2.reshape(-1)[order])


def knn_pixels_batch(us, vs, k, hf, wf):
    """Vectorized knn_pixels over many query points: returns flat cell indices [N, k] and distances."""
    if k > hf * wf:
        raise ValidationError(f"knn_pixels: k={k} exceeds cell count {hf * wf}")
    cols = np.arange(wf, dtype=np.float64)
    rows = np.arange(hf, dtype=np.float64)
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d2 = (vs[:, None, None] - rows[None, :, None]) ** 2 + (us[:, None, None] - cols[None, None, :]) ** 2
    d2 = d2.reshape(us.size, hf * wf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order, np.sqrt(np.take_along_axis(d2, order, axis=1))


def distance_prior_weights(distances, enabled=True, eps=1e-3):
    """Softmax over reciprocal distances, or uniform when the prior is off."""
    distances = np.asarray(distances, dtype=np.float64)
    if np.any(distances < 0):
        raise ValidationError("distance_prior_weights: negative distance")
    if not enabled:
        return np.full(distances.shape, 1.0 / distances.shape[-1])
    logits = 1.0 / (distances + eps)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class VoxelCameraAssignment:
    """Per-voxel camera lookup, cacheable for a fixed scene and config.

    camera_of[n] is the index of the first camera that sees voxel n's center
    (-1 if none); cell_idx/weights hold the K nearest feature cells and their
    pooling weights on that camera's feature grid.
    """

    camera_of: np.ndarray
    cell_idx: np.ndarray
    weights: np.ndarray


def assign_cameras(voxels, cameras, cfg):
    """Project voxel centers and pick, per voxel, the first camera that sees it."""
    n = len(voxels)
    camera_of = np.full(n, -1, dtype=np.int64)
    cell_idx = np.zeros((n, cfg.k_neighbors), dtype=np.int64)
    weights = np.zeros((n, cfg.k_neighbors), dtype=np.float64)
    if n == 0:
        return VoxelCameraAssignment(camera_of, cell_idx, weights)
    keys = np.array(voxels.keys, dtype=np.float64)
    centers = np.array(voxels.grid.range_min) + (keys + 0.5) * np.array(voxels.grid.voxel_size)
    for ci, (cam, camf) in enumerate(cameras):
        u, v, _, valid = geom.project_points(centers, cam)
        take = valid & (camera_of < 0)
        if not take.any():
            continue
        camera_of[take] = ci
        idx, dist = knn_pixels_batch(u[take] / camf.stride, v[take] / camf.stride,
                                     cfg.k_neighbors, camf.hf, camf.wf)
        cell_idx[take] = idx
        weights[take] = distance_prior_weights(dist, cfg.distance_prior, cfg.distance_epsilon)
    return VoxelCameraAssignment(camera_of, cell_idx, weights)


def vem_enhance(voxels, cameras, weight, bias, cfg, assignment=None):
    """Inject distance-weighted camera semantics into non-empty voxels.

    Per voxel: project its center, pool the K nearest camera features with
    distance-prior weights, map them through a shared linear+relu and add
    to the voxel feature. Voxels no camera sees pass through untouched;
    the sparsity pattern never changes.

    cameras: list of (CameraModel, CameraFeatures), checked in order.
    """
    if isinstance(cameras, tuple):
        cameras = [cameras]
    if voxels.channels != weight.data.shape[1] or weight.data.shape[0] != cameras[0][1].features.data.shape[0]:
        raise ValidationError("vem_enhance: linear map must be [c2d, c3d]")
    if assignment is None:
        assignment = assign_cameras(voxels, cameras, cfg)
    n = len(voxels)
    if n == 0:
        return voxels
    out = voxels.features
    for ci, (_, camf) in enumerate(cameras):
        sel = assignment.camera_of == ci
        if not sel.any():
            continue
        hw = camf.hf * camf.wf
        cells = nncore.reshape(nncore.permute(camf.features, (1, 2, 0)), (hw, -1))
        pooled = nncore.knn_weighted_pool(cells, assignment.cell_idx[sel], assignment.weights[sel])
        enhanced = nncore.relu(nncore.linear(pooled, weight.tensor, bias.tensor))
        out = nncore.add(out, nncore.scatter_rows(enhanced, np.nonzero(sel)[0], n))
    return lidar.SparseVoxelGrid(voxels.grid, voxels.keys, out)


@dataclass
class IemParams:
    """Depth embedding convs plus the fusing conv of the image enhancement."""

    depth_k1: nncore.Parameter
    depth_b1: nncore.Parameter
    depth_k2: nncore.Parameter
    depth_b2: nncore.Parameter
    fuse_k: nncore.Parameter
    fuse_b: nncore.Parameter


def iem_enhance(camf, dense_depth, params, cfg):
    """Make camera features spatial-aware by fusing in completed depth.

    dense_depth must already be at the feature-grid resolution. Depth is
    embedded to c_depth channels, concatenated onto the camera features and
    reduced back to c2d by one 3x3 conv.
    """
    if dense_depth.values.shape != (camf.hf, camf.wf):
        raise ValidationError(
            f"iem_enhance: depth {dense_depth.values.shape} is not at feature resolution "
            f"({camf.hf}, {camf.wf})")
    demb = lidar.depth_features(dense_depth, cfg.c_depth,
                                params.depth_k1, params.depth_b1,
                                params.depth_k2, params.depth_b2)
    stacked = nncore.concat([camf.features, demb], axis=0)
    fused = nncore.conv2d(stacked, params.fuse_k.tensor, params.fuse_b.tensor, stride=1, padding=1)
    return CameraFeatures(fused, camf.stride)


def depth_bin_centers(cfg):
    edges = np.linspace(cfg.depth_min, cfg.depth_max, cfg.depth_bins + 1)
    return (edges[:-1] + edges[1:]) / 2.0


def splat_targets(cam, grid, stride, hf, wf, cfg):
    """Flat voxel index for every (depth bin, feature cell) ray sample, -1 if outside the grid."""
    cols, rows = np.meshgrid(np.arange(wf), np.arange(hf), indexing="xy")
    u = cols.reshape(-1) * stride
    v = rows.reshape(-1) * stride
    dirs = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones(u.size)], axis=1)
    centers = depth_bin_centers(cfg)
    pts_cam = dirs[None, :, :] * centers[:, None, None]          # [D, Ncells, 3]
    flat_cam = pts_cam.reshape(-1, 3)
    pts = flat_cam @ cam._inv_extrinsics[:3, :3].T + cam._inv_extrinsics[:3, 3]
    idx, valid = geom.voxel_indices(pts, grid)
    flat = (idx[:, 0] * grid.dims[1] + idx[:, 1]) * grid.dims[2] + idx[:, 2]
    flat[~valid] = -1
    return flat.reshape(cfg.depth_bins, hf * wf)


def lift_splat(camf, cam, grid, depth_k, depth_b, cfg, targets=None):
    """Lift camera features into the voxel grid along depth-distributed rays.

    Per feature cell a pointwise conv predicts logits over depth_bins bins
    (softmaxed to a distribution); each (cell, bin) contribution is the cell
    feature scaled by its bin probability, scatter-added into the voxel that
    contains the unprojected ray sample. Returns (dense [c2d, Nx, Ny, Nz]
    tensor, dropped L1 mass of out-of-grid contributions).
    """
    if depth_k.data.shape != (cfg.depth_bins, camf.features.data.shape[0], 1, 1):
        raise ValidationError("lift_splat: depth head must be a pointwise conv to depth_bins")
    if targets is None:
        targets = splat_targets(cam, grid, camf.stride, camf.hf, camf.wf, cfg)
    logits = nncore.conv2d(camf.features, depth_k.tensor, depth_b.tensor)
    probs = nncore.softmax(logits, axis=0)
    c = camf.features.data.shape[0]
    flat_feats = nncore.reshape(camf.features, (c, camf.hf * camf.wf))
    flat_probs = nncore.reshape(probs, (cfg.depth_bins, camf.hf * camf.wf))
    voxels, dropped = nncore.splat_to_voxels(flat_feats, flat_probs, targets, grid.n_voxels)
    dense = nncore.reshape(nncore.permute(voxels, (1, 0)), (c,) + grid.dims)
    return dense, dropped


def densify(voxels):
    """Sparse voxel grid to a dense [C, Nx, Ny, Nz] tensor, zeros where empty."""
    grid = voxels.grid
    if voxels.keys:
        karr = np.asarray(voxels.keys, dtype=np.int64)
        flat = (karr[:, 0] * grid.dims[1] + karr[:, 1]) * grid.dims[2] + karr[:, 2]
    else:
        flat = np.zeros(0, dtype=np.int64)
    dense_rows = nncore.scatter_rows(voxels.features, flat, grid.n_voxels)
    return nncore.reshape(nncore.permute(dense_rows, (1, 0)), (voxels.channels,) + grid.dims)


@dataclass
class UFuseParams:
    """Projection, gate branches and fallback concat conv of unified fusion."""

    proj_k: nncore.Parameter
    proj_b: nncore.Parameter
    gate_a_k: nncore.Parameter
    gate_a_b: nncore.Parameter
    gate_b_k: nncore.Parameter
    gate_b_b: nncore.Parameter
    gate_c_k: nncore.Parameter
    gate_c_b: nncore.Parameter
    concat_k: nncore.Parameter
    concat_b: nncore.Parameter


def unified_fuse(f_lidar, f_camera, params, cfg):
    """Adaptively fuse voxelized LiDAR and lifted camera features.

    The camera volume is first projected to c3d channels. With adaptive
    weighting on, a single-channel gate alpha is predicted from both
    volumes and the output is the sigmoid-gated convex combination
    g*f_lidar + (1-g)*f_camera'. With it off, the volumes are concatenated
    and reduced by a pointwise conv instead.
    """
    if f_lidar.data.shape[1:] != f_camera.data.shape[1:]:
        raise ValidationError("unified_fuse: spatial dims differ")
    if f_lidar.data.shape[0] != cfg.c3d:
        raise ValidationError("unified_fuse: lidar volume must have c3d channels")
    cam_proj = nncore.conv3d(f_camera, params.proj_k.tensor, params.proj_b.tensor)
    if not cfg.adaptive_weighting:
        stacked = nncore.concat([f_lidar, cam_proj], axis=0)
        return nncore.conv3d(stacked, params.concat_k.tensor, params.concat_b.tensor)
    branch_a = nncore.conv3d(f_lidar, params.gate_a_k.tensor, params.gate_a_b.tensor)
    branch_b = nncore.conv3d(cam_proj, params.gate_b_k.tensor, params.gate_b_b.tensor)
    alpha = nncore.conv3d(nncore.concat([branch_a, branch_b], axis=0),
                          params.gate_c_k.tensor, params.gate_c_b.tensor)
    gate = nncore.sigmoid(alpha)
    return nncore.gated_blend(f_lidar, cam_proj, gate)


def bev_collapse(volume):
    """Fold the z axis into channels: [C,Nx,Ny,Nz] -> [Nz*C,Nx,Ny], channel z*C + c."""
    c, nx, ny, nz = volume.data.shape
    return nncore.reshape(nncore.permute(volume, (3, 0, 1, 2)), (nz * c, nx, ny))


def bev_uncollapse(bev, c):
    """Inverse of bev_collapse given the original channel count."""
    cb, nx, ny = bev.data.shape
    if cb % c:
        raise ValidationError("bev_uncollapse: channel count not divisible")
    return nncore.permute(nncore.reshape(bev, (cb // c, c, nx, ny)), (1, 2, 3, 0))


def bev_encode(bev, k1, b1, k2, b2):
    """Residual two-conv BEV encoder: x + conv2(relu(conv1(x))), 3x3 same padding."""
    hidden = nncore.relu(nncore.conv2d(bev, k1.tensor, b1.tensor, stride=1, padding=1))
    return nncore.add(bev, nncore.conv2d(hidden, k2.tensor, b2.tensor, stride=1, padding=1))
