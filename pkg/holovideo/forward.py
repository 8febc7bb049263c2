"""
The coded-exposure holographic sensing operator and hologram preprocessing.

For an object volume O (frame t, depth n) the linearized measurement is

    g = sum_t 2 tau Re{ P_h2( M_t * P_h1( sum_n P_dn O[t, n] ) ) }

with a unit-amplitude reference wave. The Toeplitz factors are never built;
each one is applied as an FFT convolution, a sample-wise mask or a sum.
"""
import logging
from functools import lru_cache

import numpy as np

from .exceptions import ValidationError
from .models import Hologram, HologramKind, Object4D
from .optics import crop_to, fft2, ifft2, make_transfer, pad_to, propagate_array

logger = logging.getLogger(__name__)


class SensingOperator:
    """Matrix-free forward model A and its exact adjoint for one (masks, geometry) pair."""

    def __init__(self, masks, geom):
        masks.check_geometry(geom)
        self.masks = masks
        self.geom = geom
        self.scale = 2.0 * geom.frame_interval
        self._mask = masks.frames.astype(np.float64)
        # one propagation per depth plane covers depth plus observation-to-mask distance
        self._depth_transfers = [
            make_transfer(geom.nx, geom.ny, geom.pitch, geom.wavelength,
                          depth + geom.observation_to_mask_distance,
                          geom.pad_factor, geom.band_limited)
            for depth in geom.depths
        ]
        self._sensor_transfer = None
        if geom.mask_to_sensor_distance > 0:
            self._sensor_transfer = make_transfer(geom.nx, geom.ny, geom.pitch, geom.wavelength,
                                                  geom.mask_to_sensor_distance,
                                                  geom.pad_factor, geom.band_limited)
        self.padded_shape = self._depth_transfers[0].padded_shape
        self.object_shape = (geom.frame_count, geom.depth_count, geom.ny, geom.nx)

    def field_at_mask(self, data):
        """Sum over depth of every plane propagated to the mask, per frame: (T, ny, nx)."""
        spectrum = np.zeros((data.shape[0],) + self.padded_shape, dtype=np.complex128)
        for n, tf in enumerate(self._depth_transfers):
            spectrum += fft2(pad_to(data[:, n], self.padded_shape)) * tf.spectrum
        return crop_to(ifft2(spectrum), (self.geom.ny, self.geom.nx))

    def sensor_field(self, data):
        """Object contribution O_c at the sensor for every frame, before taking Re{}."""
        field = self._mask * self.field_at_mask(data)
        if self._sensor_transfer is not None:
            field = propagate_array(field, self._sensor_transfer)
        return field

    def reference_field(self):
        """Unit-amplitude reference after each frame's mask, at the sensor: (T, ny, nx)."""
        field = self._mask.astype(np.complex128)
        if self._sensor_transfer is not None:
            field = propagate_array(field, self._sensor_transfer)
        return field

    def apply(self, data):
        if data.shape != self.object_shape:
            raise ValidationError(f"object of shape {data.shape} does not match operator {self.object_shape}")
        # frames are summed in index order
        return self.scale * np.real(self.sensor_field(data)).sum(axis=0)

    def apply_adjoint(self, g):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.geom.ny, self.geom.nx):
            raise ValidationError(f"hologram of shape {g.shape} does not match grid {(self.geom.ny, self.geom.nx)}")
        field = g.astype(np.complex128)
        if self._sensor_transfer is not None:
            field = propagate_array(field, self._sensor_transfer.conjugate())
        spectrum = fft2(pad_to(self._mask * field[np.newaxis], self.padded_shape))
        out = np.empty(self.object_shape, dtype=np.complex128)
        for n, tf in enumerate(self._depth_transfers):
            out[:, n] = crop_to(ifft2(spectrum * np.conj(tf.spectrum)), (self.geom.ny, self.geom.nx))
        return self.scale * out

    def normal(self, data):
        return self.apply_adjoint(self.apply(data))

    def forward(self, obj):
        obj.check_geometry(self.geom)
        return Hologram(self.apply(obj.data), HologramKind.SUBTRACTED)

    def adjoint(self, holo):
        data = holo.data if isinstance(holo, Hologram) else holo
        return Object4D(self.apply_adjoint(data))


@lru_cache(maxsize=8)
def sensing_operator(masks, geom):
    return SensingOperator(masks, geom)


def forward(obj, masks, geom):
    return sensing_operator(masks, geom).forward(obj)


def adjoint(holo, masks, geom):
    return sensing_operator(masks, geom).adjoint(holo)


def operator_norm_estimate(masks, geom, iterations=50, seed=0):
    """Power iteration on A^T A; returns an estimate of the spectral norm of A."""
    if iterations < 1:
        raise ValidationError(f"iterations must be >= 1, got {iterations}")
    op = sensing_operator(masks, geom)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.object_shape) + 1j * rng.standard_normal(op.object_shape)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = op.normal(x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        estimate = max(estimate, float(np.sqrt(norm)))
        x = y / norm
    logger.debug("operator norm estimate %.6g after %d iterations", estimate, iterations)
    return estimate


def subtract_background(raw, background):
    if raw.kind is not HologramKind.RAW:
        raise ValidationError(f"expected a raw hologram, got {raw.kind.value}")
    if background.kind is not HologramKind.BACKGROUND:
        raise ValidationError(f"expected a background hologram, got {background.kind.value}")
    if raw.shape != background.shape:
        raise ValidationError(f"raw {raw.shape} and background {background.shape} differ in size")
    return Hologram(raw.data - background.data, HologramKind.SUBTRACTED)


def divide_background(image, background, floor=1e-12):
    """Flat-field an image by the background; pixels with no illumination map to 0."""
    image = np.asarray(image, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if image.shape[-2:] != background.shape:
        raise ValidationError(f"image {image.shape} and background {background.shape} differ in size")
    lit = background > floor
    return np.where(lit, image / np.where(lit, background, 1.0), 0.0)


def crop_roi(holo, nx, ny):
    """Central nx x ny region of interest."""
    height, width = holo.shape
    if not (1 <= nx <= width and 1 <= ny <= height):
        raise ValidationError(f"ROI {nx}x{ny} does not fit in a {width}x{height} hologram")
    return Hologram(crop_to(holo.data, (ny, nx)), holo.kind)


def downsample(holo, factor):
    """Block-mean downsampling; trailing rows/columns that do not fill a block are dropped."""
    if factor < 1:
        raise ValidationError(f"downsampling factor must be >= 1, got {factor}")
    height, width = (s // factor for s in holo.shape)
    if height < 1 or width < 1:
        raise ValidationError(f"factor {factor} is larger than the hologram {holo.shape}")
    blocks = holo.data[:height * factor, :width * factor].reshape(height, factor, width, factor)
    return Hologram(blocks.mean(axis=(1, 3)), holo.kind)
