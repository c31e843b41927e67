"""Synthetic scene generation and scene file I/O.

Scenes are cuboids of a few template classes on a ground plane, observed by
a spinning-LiDAR ray fan and a single forward pinhole camera. Everything is
deterministic given the seed. Scene files are self-describing JSON with raw
numeric arrays (images stored flat, no codecs).
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geom import CameraModel
from .head import Box3D
from .lidar import PointCloud

SCENE_FORMAT_VERSION = 1


@dataclass
class ClassTemplate:
    name: str
    size: tuple          # (w, l, h) meters
    color: tuple         # flat RGB in [0,1]
    intensity: float


DEFAULT_CLASSES = [
    ClassTemplate("box_large", (1.9, 4.2, 1.6), (0.85, 0.25, 0.2), 0.8),
    ClassTemplate("box_tall", (0.7, 0.7, 1.8), (0.2, 0.45, 0.85), 0.6),
    ClassTemplate("box_low", (0.8, 2.2, 1.0), (0.95, 0.75, 0.15), 0.4),
]

GROUND_COLOR = (0.25, 0.25, 0.25)
SKY_COLOR = (0.55, 0.7, 0.9)
GROUND_INTENSITY = 0.15


@dataclass
class Scene:
    point_cloud: PointCloud
    camera: CameraModel
    image: np.ndarray        # [3, H, W] floats in [0, 1]
    boxes: list
    scene_id: int
    seed: int


@dataclass
class SceneSpec:
    """Generator knobs; defaults match the desk-scale run config."""

    image_h: int = 64
    image_w: int = 176
    focal: float = 88.0
    camera_height: float = 1.6
    min_objects: int = 1
    max_objects: int = 3
    region_x: tuple = (3.0, 13.0)
    region_y: tuple = (-10.0, 10.0)
    azimuth_range: tuple = (-60.0, 60.0)    # degrees
    elevation_range: tuple = (-30.0, 5.0)
    n_azimuth: int = 260
    n_elevation: int = 36
    range_noise: float = 0.02
    classes: tuple = tuple(DEFAULT_CLASSES)
    min_points_per_box: int = 20


def default_camera(spec):
    h, w = spec.image_h, spec.image_w
    intr = np.array([[spec.focal, 0.0, w / 2.0],
                     [0.0, spec.focal, h / 2.0],
                     [0.0, 0.0, 1.0]])
    # LiDAR frame: x forward, y left, z up. Camera: x right, y down, z forward.
    r = np.array([[0.0, -1.0, 0.0],
                  [0.0, 0.0, -1.0],
                  [1.0, 0.0, 0.0]])
    c = np.array([0.0, 0.0, spec.camera_height])
    ext = np.eye(4)
    ext[:3, :3] = r
    ext[:3, 3] = -r @ c
    return CameraModel(intr, ext, (h, w))


def _box_frame(box):
    cy, sy = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[cy, sy], [-sy, cy]])      # world -> box, BEV
    half = np.array([box.size[1] / 2.0, box.size[0] / 2.0, box.size[2] / 2.0])  # (l/2, w/2, h/2)
    return rot, half


def points_in_box(points, box, margin=0.0):
    """Boolean mask of points inside an oriented box (optionally dilated)."""
    rot, half = _box_frame(box)
    rel = points[:, :3] - np.array(box.center)
    bev = rel[:, :2] @ rot.T
    return (np.abs(bev[:, 0]) <= half[0] + margin) & \
           (np.abs(bev[:, 1]) <= half[1] + margin) & \
           (np.abs(rel[:, 2]) <= half[2] + margin)


def _ray_box_t(origins, dirs, box):
    """Slab-test entry distance of rays against an oriented box; inf if missed."""
    rot, half = _box_frame(box)
    rel = origins - np.array(box.center)
    o = np.column_stack([rel[:, :2] @ rot.T, rel[:, 2]])
    d = np.column_stack([dirs[:, :2] @ rot.T, dirs[:, 2]])
    t_lo = np.full(origins.shape[0], -np.inf)
    t_hi = np.full(origins.shape[0], np.inf)
    for ax in range(3):
        da = d[:, ax]
        oa = o[:, ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[ax] - oa) / da
            t2 = (half[ax] - oa) / da
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        parallel = np.abs(da) < 1e-12
        inside = np.abs(oa) <= half[ax]
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    hit = (t_hi >= t_lo) & (t_hi > 0)
    t = np.where(t_lo > 0, t_lo, t_hi)      # origin inside the box hits the exit face
    return np.where(hit, t, np.inf)


def _cast_rays(origins, dirs, boxes):
    """Nearest hit over boxes and the z=0 ground plane.

    Returns (t, hit_index) with hit_index -1 for ground, -2 for no hit.
    """
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -2, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -origins[:, 2] / dirs[:, 2]
    ground = (dirs[:, 2] < -1e-12) & (tg > 0)
    best_t = np.where(ground, tg, best_t)
    best_i = np.where(ground, -1, best_i)
    for bi, box in enumerate(boxes):
        t = _ray_box_t(origins, dirs, box)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, bi, best_i)
    return best_t, best_i


def _lidar_scan(spec, boxes, rng):
    """Azimuth/elevation ray fan from the sensor with Gaussian range noise."""
    az = np.radians(np.linspace(spec.azimuth_range[0], spec.azimuth_range[1], spec.n_azimuth))
    el = np.radians(np.linspace(spec.elevation_range[0], spec.elevation_range[1], spec.n_elevation))
    aa, ee = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(ee) * np.cos(aa),
                     np.cos(ee) * np.sin(aa),
                     np.sin(ee)], axis=-1).reshape(-1, 3)
    origin = np.array([0.0, 0.0, spec.camera_height])
    origins = np.broadcast_to(origin, dirs.shape)
    t, hit = _cast_rays(origins, dirs, boxes)
    sel = hit > -2
    t = t[sel]
    hit = hit[sel]
    dirs = dirs[sel]
    noise = rng.normal(0.0, spec.range_noise, size=t.shape)
    pts = origin + dirs * (t + noise)[:, None]
    intens = np.full(t.shape, GROUND_INTENSITY)
    for bi, box in enumerate(boxes):
        intens[hit == bi] = spec.classes[box.class_id].intensity
    return np.column_stack([pts, intens])


def _render_image(spec, cam, boxes):
    h, w = spec.image_h, spec.image_w
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64), indexing="xy")
    d_cam = np.stack([(us - cam.cx) / cam.fx,
                      (vs - cam.cy) / cam.fy,
                      np.ones_like(us)], axis=-1).reshape(-1, 3)
    rinv = cam._inv_extrinsics[:3, :3]
    origin = cam._inv_extrinsics[:3, 3]
    dirs = d_cam @ rinv.T
    origins = np.broadcast_to(origin, dirs.shape)
    _, hit = _cast_rays(origins, dirs, boxes)
    img = np.empty((h * w, 3))
    img[:] = SKY_COLOR
    img[hit == -1] = GROUND_COLOR
    for bi, box in enumerate(boxes):
        img[hit == bi] = spec.classes[box.class_id].color
    return img.reshape(h, w, 3).transpose(2, 0, 1).copy()


def _place_boxes(spec, grid, rng, n_boxes):
    boxes = []
    for _ in range(n_boxes):
        template_id = int(rng.integers(0, len(spec.classes)))
        tpl = spec.classes[template_id]
        placed = None
        for _ in range(100):
            x = rng.uniform(*spec.region_x)
            y = rng.uniform(*spec.region_y)
            yaw = rng.uniform(-math.pi, math.pi)
            cand = Box3D((x, y, tpl.size[2] / 2.0), tpl.size, yaw, template_id)
            if grid is not None:
                inside = all(grid.range_min[k] < cand.center[k] < grid.range_max[k] for k in range(3))
                if not inside:
                    continue
            # conservative circle test guarantees no overlap
            rad = math.hypot(tpl.size[0], tpl.size[1]) / 2.0
            ok = True
            for other in boxes:
                orad = math.hypot(other.size[0], other.size[1]) / 2.0
                if math.hypot(other.center[0] - x, other.center[1] - y) < rad + orad:
                    ok = False
                    break
            if ok:
                placed = cand
                break
        if placed is None:
            raise ValidationError("gen_scene: could not place boxes without overlap in 100 attempts")
        boxes.append(placed)
    return boxes


def gen_scene(seed, spec=None, grid=None, scene_id=0):
    """Generate one deterministic scene.

    Box placements that leave any box with fewer than min_points_per_box
    interior LiDAR points (e.g. full occlusion) are redrawn, sharing the
    100-attempt budget with overlap rejection.
    """
    spec = spec or SceneSpec()
    if not 1 <= len(spec.classes):
        raise ValidationError("gen_scene: need at least one class template")
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id]))
    cam = default_camera(spec)
    n_boxes = int(rng.integers(spec.min_objects, spec.max_objects + 1)) if spec.max_objects else 0
    for _ in range(100):
        boxes = _place_boxes(spec, grid, rng, n_boxes)
        points = _lidar_scan(spec, boxes, rng)
        if all(points_in_box(points, b).sum() >= spec.min_points_per_box for b in boxes):
            break
    else:
        raise ValidationError("gen_scene: no placement met the per-box point minimum in 100 attempts")
    image = _render_image(spec, cam, boxes)
    return Scene(PointCloud(points), cam, image, boxes, scene_id, seed)


# ---------------------------------------------------------------------------
# scene files


def scene_to_doc(scene):
    return {
        "format": "scene",
        "version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "camera": {
            "intrinsics": scene.camera.intrinsics.reshape(-1).tolist(),
            "extrinsics": scene.camera.extrinsics.reshape(-1).tolist(),
            "image_size": list(scene.camera.image_size),
        },
        "image": {
            "shape": list(scene.image.shape),
            "data": scene.image.reshape(-1).tolist(),
        },
        "points": scene.point_cloud.points.reshape(-1).tolist(),
        "boxes": [
            {
                "center": list(b.center),
                "size": list(b.size),
                "yaw": b.yaw,
                "class_id": b.class_id,
            }
            for b in scene.boxes
        ],
    }


def scene_from_doc(doc):
    if doc.get("format") != "scene" or doc.get("version") != SCENE_FORMAT_VERSION:
        raise ValidationError("scene file: unrecognized format or version")
    cam = CameraModel(np.array(doc["camera"]["intrinsics"]).reshape(3, 3),
                      np.array(doc["camera"]["extrinsics"]).reshape(4, 4),
                      tuple(doc["camera"]["image_size"]))
    image = np.array(doc["image"]["data"]).reshape(doc["image"]["shape"])
    points = np.array(doc["points"]).reshape(-1, 4)
    boxes = [Box3D(tuple(b["center"]), tuple(b["size"]), b["yaw"], int(b["class_id"]))
             for b in doc["boxes"]]
    return Scene(PointCloud(points), cam, image, boxes, int(doc["scene_id"]), int(doc["seed"]))


def dumps_scene(scene):
    """Canonical (byte-deterministic) JSON for a scene."""
    return json.dumps(scene_to_doc(scene), sort_keys=True, separators=(",", ":"))


def save_scene(path, scene):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_scene(scene))


def load_scene(path):
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_doc(json.load(f))
