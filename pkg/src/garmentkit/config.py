"""Run configuration: pydantic models plus the packaged YAML defaults."""

from __future__ import annotations

import functools
from importlib import resources

import yaml
from pydantic import BaseModel, Field, field_validator

SUPPORTED_CONFIG_VERSION = 1

Range = tuple[float, float]


class _RangeModel(BaseModel):
    """Base for models whose tuple fields are (lo, hi) bounds."""

    @field_validator("*")
    @classmethod
    def _check_ranges(cls, v):
        if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            if v[0] > v[1]:
                raise ValueError(f"range lo > hi: {v}")
        return v


class TowelRanges(_RangeModel):
    width: Range
    height: Range
    edge_bow: Range
    corner_radius: Range


class ShortsRanges(_RangeModel):
    waist_width: Range
    crotch_depth: Range
    leg_length: Range
    leg_opening_frac: Range
    edge_bow: Range
    corner_radius: Range
    crotch_radius: Range


class TshirtRanges(_RangeModel):
    chest_width: Range
    torso_length: Range
    sleeve_length: Range
    sleeve_width: Range
    neck_width_frac: Range
    neck_depth: Range
    edge_bow: Range
    corner_radius: Range
    armpit_radius: Range


class TemplateRanges(BaseModel):
    towel: TowelRanges
    shorts: ShortsRanges
    tshirt: TshirtRanges

    def __getitem__(self, kind: str):
        return getattr(self, kind)


class MeshSettings(BaseModel):
    target_edge: float = 0.01
    curve_tolerance: float = 0.002


class PhysicsRanges(_RangeModel):
    """Per-sample material draws."""

    stretch_stiffness: Range = (1.0, 1.0)
    bend_stiffness: Range = (0.25, 0.45)
    friction: Range = (0.3, 0.7)
    drag: Range = (0.05, 0.25)


class SimSettings(BaseModel):
    dt: float = 1.0 / 240.0
    solver_iterations: int = 20
    damping: float = 0.02
    thickness: float = 0.003
    gravity: float = 9.81
    max_settle_steps: int = 600
    velocity_epsilon: float = 0.01
    keyframe_interval: int = 60


class DropSettings(_RangeModel):
    height: Range = (0.0, 0.08)
    yaw_deg: Range = (0.0, 360.0)
    tilt_deg: Range = (0.0, 12.0)


class ActionSettings(BaseModel):
    arc_height: float = 0.18
    duration: float = 1.0


class CameraRanges(_RangeModel):
    width: int = 640
    height: int = 480
    fov_deg: Range = (45.0, 70.0)
    radius: Range = (0.75, 1.4)
    elevation_deg: Range = (40.0, 89.0)
    look_jitter: float = 0.04
    margin: float = 0.05
    max_attempts: int = 64


class SceneSettings(_RangeModel):
    surface_textures: list[str]
    environment_textures: list[str]
    distractor_assets: list[str]
    distractor_count: tuple[int, int] = (0, 3)
    light_count: tuple[int, int] = (1, 3)
    light_intensity: Range = (0.6, 1.5)
    light_height: Range = (0.8, 1.6)
    light_radius: Range = (0.4, 1.2)


class DatasetSettings(BaseModel):
    stage: int = Field(default=1, ge=1, le=2)
    kp_ratio: float = Field(default=0.3, ge=0.0, le=1.0)


class ToolkitConfig(BaseModel):
    config_version: int
    seed: int = 0
    counts: dict[str, int] = Field(default_factory=lambda: {"towel": 1, "shorts": 1, "tshirt": 1})
    fold_stages: int = Field(default=2, ge=1)
    previews: bool = True
    workers: int | None = None
    mesh: MeshSettings = Field(default_factory=MeshSettings)
    templates: TemplateRanges
    physics: PhysicsRanges = Field(default_factory=PhysicsRanges)
    sim: SimSettings = Field(default_factory=SimSettings)
    drop: DropSettings = Field(default_factory=DropSettings)
    actions: ActionSettings = Field(default_factory=ActionSettings)
    camera: CameraRanges = Field(default_factory=CameraRanges)
    scene: SceneSettings
    dataset: DatasetSettings = Field(default_factory=DatasetSettings)

    @field_validator("config_version")
    @classmethod
    def _version_supported(cls, v: int) -> int:
        if v != SUPPORTED_CONFIG_VERSION:
            raise ValueError(
                f"config_version {v} unsupported (this build reads version {SUPPORTED_CONFIG_VERSION})"
            )
        return v

    @field_validator("counts")
    @classmethod
    def _known_kinds(cls, v: dict[str, int]) -> dict[str, int]:
        from .templates import GARMENT_KINDS

        for kind, count in v.items():
            if kind not in GARMENT_KINDS:
                raise ValueError(f"unknown garment kind {kind!r} in counts")
            if count < 0:
                raise ValueError("counts must be non-negative")
        return v


def _default_yaml_text() -> str:
    return resources.files("garmentkit.resources").joinpath("default_config.yaml").read_text()


@functools.lru_cache(maxsize=1)
def default_config() -> ToolkitConfig:
    """Packaged defaults; cached, treat as read-only."""
    return ToolkitConfig(**yaml.safe_load(_default_yaml_text()))


def load_config(path: str | None = None) -> ToolkitConfig:
    """Load a YAML config file, or the packaged defaults when path is None.

    User files may be partial: they are deep-merged over the defaults, so a
    config containing only `seed: 7` is valid.
    """
    if path is None:
        return default_config().model_copy(deep=True)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    base = yaml.safe_load(_default_yaml_text())
    merged = _deep_merge(base, data)
    return ToolkitConfig(**merged)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out
