"""Experiment configuration: TOML schema, validation and resolution.

A config file names the sensor, mask, textures, paths, height randomisation
and the decoder/odometry settings. ``resolve`` fills in every default and
checks every field before any computation starts; the resolved form is what
gets written back next to the outputs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli_w

from .decoder import ConditioningConfig, DecoderConfig
from .mask import FIXED_GABOR, GaborParams, MaskRaster, rasterize
from .odometry import OdometryConfig
from .sensor_sim import HeightProfile, SensorConfig
from .texture import TextureSpec
from .trajectory import GyroModel, PathSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = "gabor-odo/1"
EXPERIMENT_KINDS = ("standard", "height_sweep", "mask_comparison")
STRIDES_MS = (1, 10, 33)


class ConfigError(ValueError):
    """Schema violation; ``parameter`` is the dotted path of the offending key."""

    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


@dataclass(frozen=True)
class OptimizerSection:
    enabled: bool = False
    n_scenario_seeds: int = 10
    windows_per_scenario: int = 8
    metric: str = "rmse"
    max_evals: int = 200
    fatol: float = 1e-4
    starts: tuple = ()
    view_px: int = 64
    noise: bool = True


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = "standard"
    height_ranges_pct: tuple = (0.0, 10.0, 25.0, 50.0)
    noise: bool = True
    plots: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    stride_ms: int = 10
    sensor: SensorConfig = field(default_factory=SensorConfig)
    mask: GaborParams = FIXED_GABOR
    mask_file: str | None = None
    textures: tuple = ()
    paths: tuple = ()
    heights: HeightProfile = field(default_factory=HeightProfile)
    gyro: GyroModel = field(default_factory=GyroModel)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def masks(self) -> MaskRaster:
        if self.mask_file:
            raster = MaskRaster.from_json(Path(self.mask_file).read_text(encoding="utf-8"))
            if raster.resolution_px != self.sensor.view_px:
                raise ConfigError(f"mask file resolution {raster.resolution_px} != sensor.view_px "
                                  f"{self.sensor.view_px}", "mask_file")
            return raster
        return rasterize(self.mask, self.sensor.view_px)

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "seed": int(self.seed),
            "output_dir": str(self.output_dir),
            "stride_ms": int(self.stride_ms),
            "sensor": self.sensor.to_dict(),
            "mask": self.mask.to_dict(),
            "textures": [t.to_dict() for t in self.textures],
            "paths": [p.to_dict() for p in self.paths],
            "heights": self.heights.to_dict(),
            "gyro": {"noise_std": self.gyro.noise_std, "bias": self.gyro.bias,
                     "bias_walk_std": self.gyro.bias_walk_std},
            "decoder": self.decoder.to_dict(),
            "conditioning": self.conditioning.to_dict(),
            "odometry": self.odometry.to_dict(),
            "optimizer": _section_dict(self.optimizer),
            "experiment": _section_dict(self.experiment),
        }
        if self.mask_file:
            d["mask_file"] = str(self.mask_file)
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _section_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v
    return out


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table", where)
    known = {f.name: f for f in fields(cls)}
    for k in data:
        if k not in known:
            raise ConfigError(f"unknown key {where}.{k}", f"{where}.{k}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k) if _default_constructible(cls) else None
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{where}.{k} must be a boolean", f"{where}.{k}")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where}.{k} must be a number", f"{where}.{k}")
            v = type(default)(v) if isinstance(default, float) or float(v).is_integer() else v
        if isinstance(default, tuple):
            if not isinstance(v, list):
                raise ConfigError(f"{where}.{k} must be an array", f"{where}.{k}")
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}", where) from None


def _default_constructible(cls) -> bool:
    try:
        cls()
        return True
    except TypeError:
        return False


TOP_KEYS = {"schema", "seed", "output_dir", "stride_ms", "sensor", "mask", "mask_file", "textures", "paths",
            "heights", "gyro", "decoder", "conditioning", "odometry", "optimizer", "experiment"}


def resolve(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document and materialise every default."""
    base_dir = Path(base_dir or ".")
    if raw.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"unsupported schema {raw.get('schema')!r}; expected {SCHEMA!r}", "schema")
    for k in raw:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown top-level key {k!r}", k)

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)", "seed")
    stride = raw.get("stride_ms", 10)
    if stride not in STRIDES_MS:
        raise ConfigError(f"stride_ms must be one of {STRIDES_MS}", "stride_ms")

    sensor = _build(SensorConfig, raw.get("sensor", {}), "sensor")
    mask = _build(GaborParams, raw.get("mask", {}), "mask")
    mask_file = raw.get("mask_file")
    if mask_file is not None:
        mask_file = str((base_dir / mask_file).resolve())
        if not Path(mask_file).is_file():
            raise ConfigError(f"mask_file {mask_file} does not exist", "mask_file")

    textures = []
    for i, t in enumerate(raw.get("textures", [])):
        where = f"textures[{i}]"
        if not isinstance(t, dict) or "kind" not in t:
            raise ConfigError(f"{where} needs a kind", where)
        unknown = set(t) - {"kind", "params", "resolution_px", "extent_m", "wrap_mode"}
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}", where)
        spec = TextureSpec.from_dict(t)
        if spec.kind == "image_file":
            p = base_dir / str(spec.params.get("path", ""))
            if not p.is_file():
                raise ConfigError(f"{where}: image {p} does not exist", f"{where}.params.path")
            spec = TextureSpec(spec.kind, {**spec.params, "path": str(p.resolve())}, spec.resolution_px,
                               spec.extent_m, spec.wrap_mode)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}", where) from None
        textures.append(spec)

    paths = []
    for i, p in enumerate(raw.get("paths", [])):
        where = f"paths[{i}]"
        if not isinstance(p, dict):
            raise ConfigError(f"{where} must be a table", where)
        unknown = set(p) - {"profile", "params", "duration_s", "csv"}
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}", where)
        spec = PathSpec.from_dict(p)
        if spec.csv:
            c = base_dir / spec.csv
            if not c.is_file():
                raise ConfigError(f"{where}: csv {c} does not exist", f"{where}.csv")
            spec = PathSpec(spec.profile, spec.params, spec.duration_s, str(c.resolve()))
        elif not spec.duration_s > 0:
            raise ConfigError(f"{where}: duration_s must be positive", f"{where}.duration_s")
        paths.append(spec)

    heights = _build(HeightProfile, raw.get("heights", {}), "heights")
    gyro = _build(GyroModel, raw.get("gyro", {}), "gyro")
    decoder = _build(DecoderConfig, raw.get("decoder", {}), "decoder")
    conditioning = _build(ConditioningConfig, raw.get("conditioning", {}), "conditioning")
    odometry = _build(OdometryConfig, raw.get("odometry", {}), "odometry")
    optimizer = _build(OptimizerSection, raw.get("optimizer", {}), "optimizer")
    experiment = _build(ExperimentSection, raw.get("experiment", {}), "experiment")
    if experiment.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment.kind must be one of {EXPERIMENT_KINDS}", "experiment.kind")
    for i, s in enumerate(optimizer.starts):
        try:
            GaborParams(*s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"optimizer.starts[{i}]: {exc}", f"optimizer.starts[{i}]") from None
    if optimizer.metric not in ("rmse", "mae"):
        raise ConfigError("optimizer.metric must be 'rmse' or 'mae'", "optimizer.metric")
    if decoder.rate_hz != sensor.rate_hz:
        raise ConfigError("decoder.rate_hz must equal sensor.rate_hz", "decoder.rate_hz")

    return ExperimentConfig(int(seed), str(raw.get("output_dir", "out")), int(stride), sensor, mask, mask_file,
                            tuple(textures), tuple(paths), heights, gyro, decoder, conditioning, odometry,
                            optimizer, experiment)


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", "--config")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})", "--config") from None
    return resolve(raw, path.parent)
