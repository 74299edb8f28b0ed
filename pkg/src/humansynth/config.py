"""Run configuration, loaded from a versioned TOML file.

Sections map onto flat :class:`RunConfig` fields::

    format_version = 1
    seed = 0
    samples = 10

    [image]     width, height
    [camera]    scale = [lo, hi], shift, fov_deg = [lo, hi]
    [body]      model (path or "toy"), motion ("procedural",
                "procedural:asymmetric" or a JSONL path)
    [scene]     path (OBJ with .labels/.names sidecars), leaf_size,
                background_normals (scene normals in the condition image)
    [services]  generator, segmenter, text (endpoint strings), steps,
                control_scale, negative_extra, retries, timeout, max_in_flight
    [filter]    threshold, erosion_radius
    [run]       output, workers, allow_deviation
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .camera import DEFAULT_RANGES, CameraRanges
from .dataset import config_hash

CONFIG_VERSION = 1

SECTIONS = {
    "image": ("width", "height"),
    "camera": ("scale", "shift", "fov_deg"),
    "body": ("model", "motion"),
    "scene": ("scene", "leaf_size", "background_normals"),
    "services": ("generator", "segmenter", "text", "steps", "control_scale",
                 "negative_extra", "retries", "timeout", "max_in_flight"),
    "filter": ("threshold", "erosion_radius"),
    "run": ("output", "workers", "allow_deviation"),
}
# keys that never change the produced data, so they stay out of the config hash
_RUNTIME_ONLY = ("output", "workers", "timeout", "max_in_flight")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    samples: int = 10
    width: int = 768
    height: int = 768
    scale: tuple = DEFAULT_RANGES.scale
    shift: float = DEFAULT_RANGES.shift
    fov_deg: tuple = DEFAULT_RANGES.fov_deg
    model: str = "toy"
    motion: str = "procedural"
    scene: str | None = None
    leaf_size: float = 0.25
    background_normals: bool = False
    generator: str = "mock:echo+silhouette"
    segmenter: str = "mock:echo+silhouette"
    text: str | None = None
    steps: int = 40
    control_scale: float = 1.0
    negative_extra: list = field(default_factory=list)
    retries: int = 2
    timeout: float = 60.0
    max_in_flight: int = 4
    threshold: float = 0.8
    erosion_radius: int = 2
    output: str = "out"
    workers: int = 1
    allow_deviation: bool = False

    @property
    def ranges(self) -> CameraRanges:
        return CameraRanges(tuple(self.scale), float(self.shift), tuple(self.fov_deg))

    def validate(self) -> "RunConfig":
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"resolution must be positive, got {self.width}x{self.height}")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"filter threshold must lie in (0, 1], got {self.threshold}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.control_scale <= 1.0:
            raise ConfigError(f"control_scale must lie in [0, 1], got {self.control_scale}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.erosion_radius < 0:
            raise ConfigError("erosion_radius must be >= 0")
        if self.leaf_size <= 0:
            raise ConfigError("leaf_size must be positive")
        lo, hi = self.scale
        flo, fhi = self.fov_deg
        if not (0 < lo <= hi) or not (0 < flo <= fhi < 180) or self.shift < 0:
            raise ConfigError("camera ranges are malformed")
        p = DEFAULT_RANGES
        inside = (p.scale[0] <= lo and hi <= p.scale[1] and self.shift <= p.shift
                  and p.fov_deg[0] <= flo and fhi <= p.fov_deg[1])
        if not inside and not self.allow_deviation:
            raise ConfigError("camera ranges exceed the default bounds; set allow_deviation = true "
                              "to acknowledge the deviation")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale"] = list(self.scale)
        d["fov_deg"] = list(self.fov_deg)
        return d

    def content_hash(self) -> str:
        d = self.to_dict()
        for k in _RUNTIME_ONLY:
            d.pop(k)
        return config_hash(d)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def from_mapping(data: dict) -> RunConfig:
    data = dict(data)
    version = data.pop("format_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config format_version {version}")
    flat = {}
    known = {f.name for f in fields(RunConfig)}
    for key, value in data.items():
        if key in SECTIONS and isinstance(value, dict):
            for sub, v in value.items():
                name = "scene" if (key, sub) == ("scene", "path") else sub
                if name not in SECTIONS[key]:
                    raise ConfigError(f"unknown key [{key}].{sub}")
                flat[name] = v
        elif key in known:
            flat[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for k in ("scale", "fov_deg"):
        if k in flat:
            if len(flat[k]) != 2:
                raise ConfigError(f"{k} must be a [lo, hi] pair")
            flat[k] = tuple(float(v) for v in flat[k])
    try:
        return RunConfig(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(data)


def default_config_text() -> str:
    return resources.files("humansynth").joinpath("data", "default.toml").read_text(encoding="utf-8")


def default_config() -> RunConfig:
    return from_mapping(tomllib.loads(default_config_text()))
