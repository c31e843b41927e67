"""Run configuration: a single JSON document validated by pydantic.

Unknown keys are rejected everywhere. Every tunable constant used by the
pipeline appears here under its own key with its default, so a config file
fully pins an experiment.
"""

import json

import pydantic
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import ValidationError
from .fusion import FusionConfig
from .geom import GridSpec


class GridSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    range_min: tuple[float, float, float] = (-16.0, -16.0, -1.0)
    range_max: tuple[float, float, float] = (16.0, 16.0, 3.0)
    voxel_size: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def to_grid(self):
        return GridSpec(self.range_min, self.range_max, self.voxel_size)


class CameraSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image_h: int = 64
    image_w: int = 176
    focal: float = 88.0
    height: float = 1.6
    stride: int = 4

    @model_validator(mode="after")
    def _check(self):
        if self.image_h % self.stride or self.image_w % self.stride:
            raise ValueError("stride must divide the image size")
        return self


class HeadSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_queries: int = 20
    model_dim: int = 64
    num_classes: int = 3
    ffn_hidden: int = 64
    cost_class_weight: float = 1.0
    cost_box_weight: float = 0.25
    loss_box_weight: float = 0.25
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    @model_validator(mode="after")
    def _check(self):
        if self.model_dim % 4:
            raise ValueError("model_dim must be divisible by 4 for positional encodings")
        return self


class BevSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden: int = 32


class StemSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden: int = 32


class TrainSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = 500
    lr: float = 3e-3
    batch_size: int = 1
    seed: int = 0


class DatasetSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_scenes: int = 8
    min_objects: int = 1
    max_objects: int = 3
    seed: int = 0
    region_x: tuple[float, float] = (3.0, 13.0)
    region_y: tuple[float, float] = (-10.0, 10.0)
    lidar_azimuth: tuple[float, float] = (-60.0, 60.0)
    lidar_elevation: tuple[float, float] = (-30.0, 5.0)
    lidar_n_azimuth: int = 260
    lidar_n_elevation: int = 36
    range_noise: float = 0.02
    min_points_per_box: int = 20


class AblationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k_values: tuple[int, ...] = (1, 3, 6, 9, 10)
    distance_prior: bool = True
    adaptive_weighting: bool = True
    module_rows: bool = True     # baseline / vem / iem+unified / vem+unified / all


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: GridSettings = GridSettings()
    camera: CameraSettings = CameraSettings()
    fusion: FusionConfig = FusionConfig()
    head: HeadSettings = HeadSettings()
    bev: BevSettings = BevSettings()
    stem: StemSettings = StemSettings()
    training: TrainSettings = TrainSettings()
    dataset: DatasetSettings = DatasetSettings()
    ablation: AblationSettings = AblationSettings()
    model_seed: int = 0


def parse_config(text):
    """Parse and validate a JSON config document."""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ValidationError(f"config: invalid JSON: {e}") from e
    try:
        return RunConfig.model_validate(data)
    except pydantic.ValidationError as e:
        raise ValidationError(f"config: {e}") from e


def serialize_config(cfg):
    """Canonical JSON for a RunConfig; parse(serialize(c)) == c."""
    return json.dumps(cfg.model_dump(), sort_keys=True, indent=2) + "\n"


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def scene_spec(cfg):
    """SceneSpec for the generator, derived from the run config."""
    from .scenes import SceneSpec

    ds = cfg.dataset
    cam = cfg.camera
    return SceneSpec(
        image_h=cam.image_h,
        image_w=cam.image_w,
        focal=cam.focal,
        camera_height=cam.height,
        min_objects=ds.min_objects,
        max_objects=ds.max_objects,
        region_x=ds.region_x,
        region_y=ds.region_y,
        azimuth_range=ds.lidar_azimuth,
        elevation_range=ds.lidar_elevation,
        n_azimuth=ds.lidar_n_azimuth,
        n_elevation=ds.lidar_n_elevation,
        range_noise=ds.range_noise,
        min_points_per_box=ds.min_points_per_box,
    )
