from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from django.conf import settings
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .exceptions import ConfigError
from .models import Geometry


class ConfigSchema(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


def _strictly_increasing(value):
    depths = np.asarray(value, dtype=float)
    if depths.size < 1:
        raise ValueError("at least one depth plane is required")
    if not np.all(np.isfinite(depths)) or np.any(depths <= 0):
        raise ValueError("depths must be finite and > 0")
    if np.any(np.diff(depths) <= 0):
        raise ValueError("depths must be strictly increasing")
    return tuple(float(d) for d in depths)


# Solver

class SolverConfig(ConfigSchema):
    lambda_spatial: float = settings.LAMBDA_SPATIAL
    lambda_temporal: float = 0.0
    lambda_mode: Literal['relative', 'absolute'] = 'relative'
    max_iters: int = 200
    tol: float = 1e-6
    twist_alpha: Optional[float] = None
    twist_beta: Optional[float] = None
    eig_min: float = settings.TWIST_EIG_MIN
    eig_max: float = settings.TWIST_EIG_MAX
    tv_inner_iters: int = settings.TV_INNER_ITERS
    enforce_monotone: bool = True
    real_only: bool = False
    norm_iterations: int = settings.NORM_ITERATIONS
    norm_seed: int = settings.NORM_SEED

    @field_validator('lambda_spatial', 'lambda_temporal')
    @classmethod
    def validate_lambda(cls, value):
        if not np.isfinite(value) or value < 0:
            raise ValueError("regularization weights must be finite and >= 0")
        return value

    @field_validator('max_iters', 'tv_inner_iters', 'norm_iterations')
    @classmethod
    def validate_iterations(cls, value):
        if value < 1:
            raise ValueError("iteration counts must be >= 1")
        return value

    @field_validator('tol')
    @classmethod
    def validate_tol(cls, value):
        if not value > 0:
            raise ValueError("tol must be > 0")
        return value

    @model_validator(mode='after')
    def validate_twist(self):
        if (self.twist_alpha is None) != (self.twist_beta is None):
            raise ValueError("twist_alpha and twist_beta must be given together")
        if not 0 < self.eig_min < self.eig_max:
            raise ValueError("need 0 < eig_min < eig_max")
        return self

    @property
    def tv_enabled(self):
        return self.lambda_spatial > 0 or self.lambda_temporal > 0

    def twist_coefficients(self):
        """(alpha, beta) of the two-step recursion for the assumed spectrum [eig_min, eig_max]."""
        if self.twist_alpha is not None:
            return self.twist_alpha, self.twist_beta
        kappa = self.eig_min / self.eig_max
        rho = (1 - kappa) / (1 + kappa)
        alpha = 2 / (1 + np.sqrt(1 - rho ** 2))
        beta = 2 * alpha / (self.eig_min + self.eig_max)
        return float(alpha), float(beta)


# Scenes

class ObjectShape(str, Enum):
    POINT = 'point'
    DISK = 'disk'
    BAR = 'bar'
    FIBER = 'fiber'
    RASTER = 'raster'


class SceneKind(str, Enum):
    TWO_PLANE = 'two_plane'
    MOVING_PARTICLES = 'moving_particles'
    STATIC_FIBERS = 'static_fibers'
    VIBRATING_FIBERS = 'vibrating_fibers'


class ObjectSpec(ConfigSchema):
    """One object in a synthetic scene; positions are meters from the centre of pixel (0, 0)."""
    shape: ObjectShape
    depth_index: int = 0
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    amplitude: float = 1.0
    size: float = 0.0
    width: Optional[float] = None
    angle: float = 0.0
    curvature: float = 0.0
    oscillation_amplitude: float = 0.0
    oscillation_frequency: float = 0.0
    path: Optional[str] = None

    @field_validator('amplitude')
    @classmethod
    def validate_amplitude(cls, value):
        if not 0 < value <= 1:
            raise ValueError("amplitude must be in (0, 1]")
        return value

    @field_validator('size', 'oscillation_amplitude', 'oscillation_frequency')
    @classmethod
    def validate_non_negative(cls, value):
        if not np.isfinite(value) or value < 0:
            raise ValueError("must be finite and >= 0")
        return value

    @field_validator('depth_index')
    @classmethod
    def validate_depth_index(cls, value):
        if value < 0:
            raise ValueError("depth_index must be >= 0")
        return value

    @model_validator(mode='after')
    def validate_shape(self):
        if self.shape in (ObjectShape.DISK, ObjectShape.BAR, ObjectShape.FIBER) and self.size <= 0:
            raise ValueError(f"{self.shape.value} objects need a size > 0")
        if self.shape is ObjectShape.RASTER and not self.path:
            raise ValueError("raster objects need a path")
        if self.width is not None and self.width <= 0:
            raise ValueError("width must be > 0")
        return self

    def position_at(self, frame, frame_interval):
        t = frame * frame_interval
        wobble = self.oscillation_amplitude * np.sin(2 * np.pi * self.oscillation_frequency * t)
        return (self.position[0] + self.velocity[0] * t + wobble,
                self.position[1] + self.velocity[1] * t)


class SceneSpec(ConfigSchema):
    kind: SceneKind = SceneKind.TWO_PLANE
    nx: int = 64
    ny: int = 64
    pitch: float = settings.SIMULATION_PITCH
    depths: Tuple[float, ...]
    frame_count: int = 1
    frame_interval: float = settings.FRAME_INTERVAL
    objects: List[ObjectSpec] = []

    @field_validator('nx', 'ny', 'frame_count')
    @classmethod
    def validate_counts(cls, value):
        if value < 1:
            raise ValueError("counts must be >= 1")
        return value

    @field_validator('pitch', 'frame_interval')
    @classmethod
    def validate_positive(cls, value):
        if not np.isfinite(value) or value <= 0:
            raise ValueError("must be positive and finite")
        return value

    @field_validator('depths')
    @classmethod
    def validate_depths(cls, value):
        return _strictly_increasing(value)

    @model_validator(mode='after')
    def validate_objects(self):
        width = (self.nx - 1) * self.pitch
        height = (self.ny - 1) * self.pitch
        for index, obj in enumerate(self.objects):
            if obj.depth_index >= len(self.depths):
                raise ValueError(f"object {index} uses depth_index {obj.depth_index} "
                                 f"but the scene has {len(self.depths)} planes")
            for t in range(self.frame_count):
                x, y = obj.position_at(t, self.frame_interval)
                if not (0 <= x <= width and 0 <= y <= height):
                    raise ValueError(f"object {index} leaves the grid in frame {t} at ({x:.6g}, {y:.6g}) m")
        return self


class NoiseSpec(ConfigSchema):
    model: Literal['none', 'gaussian'] = 'none'
    sigma: float = 0.0
    seed: Optional[int] = None

    @field_validator('sigma')
    @classmethod
    def validate_sigma(cls, value):
        if not np.isfinite(value) or value < 0:
            raise ValueError("sigma must be finite and >= 0")
        return value


# Experiment sections

class GeometryConfig(ConfigSchema):
    """Geometry overrides; unset fields are filled from the scene or the input rasters."""
    nx: Optional[int] = None
    ny: Optional[int] = None
    pitch: Optional[float] = None
    wavelength: float = settings.WAVELENGTH
    depths: Optional[Tuple[float, ...]] = None
    depth_range: Optional[Tuple[float, float, int]] = None
    mask_to_sensor_distance: float = 0.0
    observation_to_mask_distance: float = 0.0
    frame_count: Optional[int] = None
    frame_interval: Optional[float] = None
    pad_factor: int = settings.PAD_FACTOR
    band_limited: bool = settings.BAND_LIMITED

    @field_validator('depths')
    @classmethod
    def validate_depths(cls, value):
        return None if value is None else _strictly_increasing(value)

    @field_validator('depth_range')
    @classmethod
    def validate_depth_range(cls, value):
        if value is not None:
            start, stop, count = value
            if count < 1 or not 0 < start <= stop:
                raise ValueError("depth_range must be (start, stop, count) with 0 < start <= stop and count >= 1")
            if count > 1 and start == stop:
                raise ValueError("depth_range with several planes needs start < stop")
        return value

    @model_validator(mode='after')
    def validate_exclusive(self):
        if self.depths is not None and self.depth_range is not None:
            raise ValueError("give either depths or depth_range, not both")
        return self

    def resolved_depths(self):
        if self.depth_range is not None:
            start, stop, count = self.depth_range
            return tuple(float(d) for d in np.linspace(start, stop, count))
        return self.depths

    def build(self, **fallbacks):
        """Geometry from the set fields, falling back to ``fallbacks`` (scene or raster values)."""
        values = {
            'wavelength': self.wavelength,
            'mask_to_sensor_distance': self.mask_to_sensor_distance,
            'observation_to_mask_distance': self.observation_to_mask_distance,
            'pad_factor': self.pad_factor,
            'band_limited': self.band_limited,
        }
        own = {
            'nx': self.nx,
            'ny': self.ny,
            'pitch': self.pitch,
            'depths': self.resolved_depths(),
            'frame_count': self.frame_count,
            'frame_interval': self.frame_interval,
        }
        for name, value in own.items():
            chosen = value if value is not None else fallbacks.get(name)
            if chosen is not None:
                values[name] = chosen
        missing = [name for name in ('nx', 'ny', 'depths') if name not in values]
        if missing:
            raise ConfigError(f"geometry is missing {', '.join(missing)}")
        try:
            return Geometry(**values)
        except PydanticValidationError as exc:
            raise ConfigError(f"invalid geometry: {exc}") from exc


class MaskConfig(ConfigSchema):
    kind: Literal['partition', 'bernoulli', 'calibrated', 'file'] = 'partition'
    frame_count: int = 1
    superpixel: int = settings.SUPERPIXEL
    density: Optional[float] = None
    seed: Optional[int] = None
    path: Optional[str] = None
    captured: List[str] = []
    background: Optional[str] = None
    threshold: float = 0.5

    @field_validator('frame_count', 'superpixel')
    @classmethod
    def validate_counts(cls, value):
        if value < 1:
            raise ValueError("counts must be >= 1")
        return value

    @field_validator('threshold')
    @classmethod
    def validate_threshold(cls, value):
        if not 0 < value < 1:
            raise ValueError("threshold must be in (0, 1)")
        return value

    @model_validator(mode='after')
    def validate_sources(self):
        if self.kind == 'file' and not self.path:
            raise ValueError("file masks need a path")
        if self.kind == 'calibrated' and not (self.captured and self.background):
            raise ValueError("calibrated masks need captured images and a background")
        return self


class ReconstructConfig(ConfigSchema):
    method: Literal['bp', 'cs', 'both'] = 'both'
    hologram: Optional[str] = None
    raw: Optional[str] = None
    background: Optional[str] = None
    roi: Optional[Tuple[int, int]] = None
    downsample: int = 1
    previews: bool = True

    @field_validator('downsample')
    @classmethod
    def validate_downsample(cls, value):
        if value < 1:
            raise ValueError("downsample must be >= 1")
        return value

    @model_validator(mode='after')
    def validate_inputs(self):
        if self.hologram and (self.raw or self.background):
            raise ValueError("give either a subtracted hologram or raw + background, not both")
        if bool(self.raw) != bool(self.background):
            raise ValueError("raw and background must be given together")
        return self


class AnalysisConfig(ConfigSchema):
    volume: Optional[str] = None
    window: int = settings.BLOCK_WINDOW
    reject_threshold: float = settings.REJECT_THRESHOLD
    correlation: float = settings.PROFILE_CORRELATION
    min_peak_fraction: float = settings.MIN_PEAK_FRACTION
    max_jump: float = settings.MAX_JUMP
    pixels: List[Tuple[int, int]] = []
    frame: int = 0
    detect: bool = True

    @field_validator('window')
    @classmethod
    def validate_window(cls, value):
        if value < 3 or value % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        return value

    @field_validator('reject_threshold', 'correlation')
    @classmethod
    def validate_fraction(cls, value):
        if not 0 < value < 1:
            raise ValueError("must be in (0, 1)")
        return value

    @field_validator('min_peak_fraction')
    @classmethod
    def validate_peak_fraction(cls, value):
        if not 0 <= value <= 1:
            raise ValueError("min_peak_fraction must be in [0, 1]")
        return value

    @field_validator('max_jump')
    @classmethod
    def validate_max_jump(cls, value):
        if not value > 0:
            raise ValueError("max_jump must be > 0")
        return value


class BenchmarkConfig(ConfigSchema):
    fractions: List[float] = [1.0, 0.5, 0.2, 0.1]
    dz: List[float] = [5e-3, 15e-3, 30e-3]
    nx: int = 64
    ny: int = 64
    first_plane: float = settings.SIMULATION_FIRST_PLANE
    intermediate_planes: int = 4
    cell: Optional[Tuple[float, float]] = None

    @field_validator('fractions')
    @classmethod
    def validate_fractions(cls, value):
        for fraction in value:
            if not 0 < fraction <= 1:
                raise ValueError("fractions must be in (0, 1]")
            if abs(1 / fraction - round(1 / fraction)) > 1e-9:
                raise ValueError(f"fraction {fraction} is not 1/T for an integer T")
        return value

    @field_validator('dz')
    @classmethod
    def validate_dz(cls, value):
        if any(d <= 0 for d in value):
            raise ValueError("dz values must be > 0")
        return value

    def cells(self):
        """(index, fraction, dz) for every sweep cell in row-major order."""
        if self.cell is not None:
            return [(0, self.cell[0], self.cell[1])]
        return [(i * len(self.dz) + j, fraction, dz)
                for i, fraction in enumerate(self.fractions)
                for j, dz in enumerate(self.dz)]


class ExperimentConfig(ConfigSchema):
    geometry: GeometryConfig = GeometryConfig()
    scene: Optional[SceneSpec] = None
    noise: NoiseSpec = NoiseSpec()
    masks: MaskConfig = MaskConfig()
    solver: SolverConfig = SolverConfig()
    reconstruct: ReconstructConfig = ReconstructConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    dz_sweep: List[float] = []
    output_dir: Optional[str] = None
    seed: int = 0
    base_dir: Optional[str] = None

    def resolve_path(self, path):
        """Paths in a config are relative to the config file's directory."""
        path = Path(path)
        if path.is_absolute() or self.base_dir is None:
            return path
        return Path(self.base_dir) / path

    def resolved_scene(self):
        """The scene with raster object paths resolved against the config directory."""
        if self.scene is None:
            return None
        objects = [obj.model_copy(update={'path': str(self.resolve_path(obj.path))}) if obj.path else obj
                   for obj in self.scene.objects]
        return self.scene.model_copy(update={'objects': objects})


def load_config(path):
    path = Path(path)
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    data.setdefault('base_dir', str(path.resolve().parent))
    try:
        return ExperimentConfig(**data)
    except PydanticValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
