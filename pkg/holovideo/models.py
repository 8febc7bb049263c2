from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

from django.conf import settings
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import ValidationError


def _frozen(array):
    array.setflags(write=False)
    return array


def _require_finite(array, what):
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{what} contains non-finite samples")


@dataclass(frozen=True, eq=False)
class ComplexField:
    """A 2D complex optical field sampled on a square grid of the given pitch."""
    data: np.ndarray
    pitch: float

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValidationError(f"ComplexField needs a non-empty 2D array, got shape {data.shape}")
        if not np.isfinite(self.pitch) or self.pitch <= 0:
            raise ValidationError(f"pitch must be positive and finite, got {self.pitch}")
        _require_finite(data, "ComplexField")
        object.__setattr__(self, 'data', _frozen(data))
        object.__setattr__(self, 'pitch', float(self.pitch))

    @property
    def ny(self):
        return self.data.shape[0]

    @property
    def nx(self):
        return self.data.shape[1]

    def energy(self):
        return float(np.sum(np.abs(self.data) ** 2))


class HologramKind(str, Enum):
    RAW = 'raw'
    BACKGROUND = 'background'
    SUBTRACTED = 'subtracted'


@dataclass(frozen=True, eq=False)
class Hologram:
    """A real-valued intensity image on the sensor grid."""
    data: np.ndarray
    kind: HologramKind = HologramKind.SUBTRACTED

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        kind = HologramKind(self.kind)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValidationError(f"Hologram needs a non-empty 2D array, got shape {data.shape}")
        _require_finite(data, "Hologram")
        if kind is not HologramKind.SUBTRACTED and np.any(data < 0):
            raise ValidationError(f"{kind.value} holograms must be non-negative")
        object.__setattr__(self, 'data', _frozen(data))
        object.__setattr__(self, 'kind', kind)

    @property
    def shape(self):
        return self.data.shape

    @classmethod
    def zeros(cls, ny, nx, kind=HologramKind.SUBTRACTED):
        return cls(np.zeros((ny, nx)), kind)


@dataclass(frozen=True, eq=False)
class Object4D:
    """Complex object field indexed (frame, depth, y, x)."""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.ndim != 4 or min(data.shape) < 1:
            raise ValidationError(f"Object4D needs a non-empty 4D array, got shape {data.shape}")
        _require_finite(data, "Object4D")
        object.__setattr__(self, 'data', _frozen(data))

    @property
    def shape(self):
        return self.data.shape

    @property
    def frame_count(self):
        return self.data.shape[0]

    @property
    def depth_count(self):
        return self.data.shape[1]

    @classmethod
    def zeros(cls, frame_count, depth_count, ny, nx):
        return cls(np.zeros((frame_count, depth_count, ny, nx), dtype=np.complex128))

    @classmethod
    def for_geometry(cls, geom):
        return cls.zeros(geom.frame_count, len(geom.depths), geom.ny, geom.nx)

    def magnitude(self):
        return np.abs(self.data)

    def check_geometry(self, geom):
        expected = (geom.frame_count, len(geom.depths), geom.ny, geom.nx)
        if self.shape != expected:
            raise ValidationError(f"Object4D shape {self.shape} does not match geometry {expected}")


@dataclass(frozen=True, eq=False)
class MaskStack:
    """T binary modulation masks, one per sub-frame of the exposure."""
    frames: np.ndarray
    superpixel: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 2:
            frames = frames[np.newaxis]
        if frames.ndim != 3 or min(frames.shape) < 1:
            raise ValidationError(f"MaskStack needs a (T, ny, nx) array, got shape {frames.shape}")
        if not np.all((frames == 0) | (frames == 1)):
            raise ValidationError("mask values must be exactly 0 or 1")
        if self.superpixel < 1:
            raise ValidationError(f"superpixel must be >= 1, got {self.superpixel}")
        object.__setattr__(self, 'frames', _frozen(frames.astype(np.uint8)))

    @property
    def frame_count(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def densities(self):
        return self.frames.reshape(self.frame_count, -1).mean(axis=1)

    def check_geometry(self, geom):
        if self.frame_count != geom.frame_count:
            raise ValidationError(
                f"mask stack has {self.frame_count} frames but geometry expects {geom.frame_count}")
        if self.shape != (geom.ny, geom.nx):
            raise ValidationError(f"mask shape {self.shape} does not match geometry {(geom.ny, geom.nx)}")

    @classmethod
    def open(cls, ny, nx):
        return cls(np.ones((1, ny, nx), dtype=np.uint8))


class Geometry(BaseModel):
    """Everything that defines the sensing operator: grid, optics, depths and timing."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    nx: int
    ny: int
    pitch: float = settings.PIXEL_PITCH
    wavelength: float = settings.WAVELENGTH
    depths: Tuple[float, ...]
    mask_to_sensor_distance: float = 0.0
    observation_to_mask_distance: float = 0.0
    frame_count: int = 1
    frame_interval: float = settings.FRAME_INTERVAL
    pad_factor: int = settings.PAD_FACTOR
    band_limited: bool = settings.BAND_LIMITED

    @field_validator('nx', 'ny', 'frame_count', 'pad_factor')
    @classmethod
    def validate_counts(cls, value):
        if value < 1:
            raise ValueError("counts must be >= 1")
        return value

    @field_validator('pitch', 'wavelength', 'frame_interval')
    @classmethod
    def validate_positive(cls, value):
        if not np.isfinite(value) or value <= 0:
            raise ValueError("must be positive and finite")
        return value

    @field_validator('mask_to_sensor_distance', 'observation_to_mask_distance')
    @classmethod
    def validate_distance(cls, value):
        if not np.isfinite(value) or value < 0:
            raise ValueError("distances must be finite and non-negative")
        return value

    @field_validator('depths')
    @classmethod
    def validate_depths(cls, value):
        depths = np.asarray(value, dtype=float)
        if depths.size < 1:
            raise ValueError("at least one depth plane is required")
        if not np.all(np.isfinite(depths)) or np.any(depths <= 0):
            raise ValueError("depths must be finite and > 0")
        if np.any(np.diff(depths) <= 0):
            raise ValueError("depths must be strictly increasing")
        return tuple(float(d) for d in depths)

    @property
    def depth_count(self):
        return len(self.depths)

    @property
    def depth_spacing(self):
        if self.depth_count < 2:
            return 0.0
        return float(np.min(np.diff(self.depths)))

    @property
    def exposure(self):
        return self.frame_count * self.frame_interval


@dataclass
class FocusProfile:
    """Max-normalized block variance at one pixel across the depth planes."""
    depths: np.ndarray
    variance: np.ndarray
    window: int
    in_focus: bool = True

    @property
    def peak_index(self):
        return int(np.argmax(self.variance))

    @property
    def peak_depth(self):
        return float(self.depths[self.peak_index])


@dataclass(frozen=True)
class Detection:
    frame: int
    x_px: float
    y_px: float
    x_m: float
    y_m: float
    depth_index: int
    z_m: float
    peak: float
    pixel_count: int

    @property
    def position(self):
        return np.array([self.x_m, self.y_m, self.z_m])


@dataclass
class Track:
    """Per-frame 3D positions of one particle; absent frames hold NaN."""
    track_id: int
    positions: np.ndarray
    present: np.ndarray
    velocities: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.present = np.asarray(self.present, dtype=bool)
        if self.velocities is None:
            self.velocities = np.full_like(self.positions, np.nan)

    @property
    def frame_count(self):
        return len(self.present)

    @property
    def length(self):
        return int(np.count_nonzero(self.present))

    @property
    def frames(self):
        return np.flatnonzero(self.present)

    def speeds(self):
        return np.linalg.norm(self.velocities, axis=1)

    def reversed(self):
        """The same track traversed backwards in time."""
        return Track(self.track_id, self.positions[::-1].copy(), self.present[::-1].copy())
