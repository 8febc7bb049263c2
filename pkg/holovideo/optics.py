"""
Scalar free-space propagation of sampled complex fields.

The diffraction integral is evaluated as a convolution with the free-space
kernel, computed in the frequency domain with the analytic angular-spectrum
transfer function on a zero-padded grid. The transfer function is pure
phase: global scale factors of the kernel are left to the sensing operator.
"""
import logging
from dataclasses import dataclass

from django.conf import settings
import numpy as np
from scipy import fft as sp_fft

from .exceptions import ValidationError
from .models import ComplexField

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Frequency response of propagation over ``z`` on a padded grid (unshifted FFT layout)."""
    spectrum: np.ndarray
    band: np.ndarray
    z: float
    wavelength: float
    pitch: float
    nx: int
    ny: int
    band_limited: bool

    @property
    def padded_shape(self):
        return self.spectrum.shape

    @property
    def pad_factor(self):
        return self.spectrum.shape[1] // self.nx

    def conjugate(self):
        """Transfer for -z: the exact adjoint of this propagation."""
        spectrum = np.conj(self.spectrum)
        spectrum.setflags(write=False)
        return TransferFunction(spectrum, self.band, -self.z, self.wavelength, self.pitch,
                                self.nx, self.ny, self.band_limited)


def _check_physical(name, value):
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value}")


def band_limit(extent, wavelength, z):
    """Highest frequency whose transfer phase is not aliased on a window of the given extent."""
    return 1.0 / (wavelength * np.sqrt((2.0 * z / extent) ** 2 + 1.0))


def make_transfer(nx, ny, pitch, wavelength, z, pad_factor=settings.PAD_FACTOR,
                  band_limited=settings.BAND_LIMITED):
    if nx < 1 or ny < 1:
        raise ValidationError(f"grid must be at least 1x1, got {nx}x{ny}")
    if pad_factor < 1 or int(pad_factor) != pad_factor:
        raise ValidationError(f"pad_factor must be an integer >= 1, got {pad_factor}")
    _check_physical('pitch', pitch)
    _check_physical('wavelength', wavelength)
    if not np.isfinite(z):
        raise ValidationError(f"propagation distance must be finite, got {z}")

    pnx, pny = int(pad_factor) * nx, int(pad_factor) * ny
    fx = sp_fft.fftfreq(pnx, d=pitch)[np.newaxis, :]
    fy = sp_fft.fftfreq(pny, d=pitch)[:, np.newaxis]
    argument = 1.0 - (wavelength * fx) ** 2 - (wavelength * fy) ** 2

    # evanescent components are dropped
    band = argument > 0
    if band_limited and z != 0:
        band &= np.abs(fx) <= band_limit(pnx * pitch, wavelength, z)
        band &= np.abs(fy) <= band_limit(pny * pitch, wavelength, z)

    kz = (2 * np.pi / wavelength) * np.sqrt(np.where(band, argument, 0.0))
    spectrum = np.where(band, np.exp(1j * z * kz), 0.0).astype(np.complex128)
    spectrum.setflags(write=False)
    band.setflags(write=False)
    logger.debug("transfer z=%.6g m on %dx%d padded grid, %.1f%% of band kept",
                 z, pnx, pny, 100.0 * band.mean())
    return TransferFunction(spectrum, band, float(z), float(wavelength), float(pitch),
                            int(nx), int(ny), bool(band_limited))


def _offsets(shape, padded_shape):
    return ((padded_shape[0] - shape[0]) // 2, (padded_shape[1] - shape[1]) // 2)


def pad_to(data, padded_shape):
    """Zero-pad the trailing two axes, centering the original samples."""
    oy, ox = _offsets(data.shape[-2:], padded_shape)
    out = np.zeros(data.shape[:-2] + tuple(padded_shape), dtype=np.complex128)
    out[..., oy:oy + data.shape[-2], ox:ox + data.shape[-1]] = data
    return out


def crop_to(data, shape):
    """Inverse selection of :func:`pad_to` (its exact transpose)."""
    oy, ox = _offsets(shape, data.shape[-2:])
    return data[..., oy:oy + shape[0], ox:ox + shape[1]]


def fft2(data):
    return sp_fft.fft2(data, axes=(-2, -1), workers=settings.FFT_WORKERS)


def ifft2(data):
    return sp_fft.ifft2(data, axes=(-2, -1), workers=settings.FFT_WORKERS)


def propagate_padded(data, tf):
    """Apply ``tf`` to arrays already living on the padded grid (no cropping)."""
    data = np.asarray(data)
    if data.shape[-2:] != tf.padded_shape:
        raise ValidationError(f"array of shape {data.shape[-2:]} is not on the padded grid {tf.padded_shape}")
    return ifft2(fft2(data) * tf.spectrum)


def propagate_array(data, tf):
    """Propagate the trailing two axes of ``data`` (any leading batch axes) by ``tf``."""
    data = np.asarray(data)
    if data.shape[-2:] != (tf.ny, tf.nx):
        raise ValidationError(f"array of shape {data.shape[-2:]} does not match transfer grid {(tf.ny, tf.nx)}")
    return crop_to(propagate_padded(pad_to(data, tf.padded_shape), tf), (tf.ny, tf.nx))


def propagate(field, tf):
    if (field.ny, field.nx) != (tf.ny, tf.nx):
        raise ValidationError(f"field is {field.ny}x{field.nx} but transfer was built for {tf.ny}x{tf.nx}")
    if not np.isclose(field.pitch, tf.pitch, rtol=1e-9, atol=0):
        raise ValidationError(f"field pitch {field.pitch} does not match transfer pitch {tf.pitch}")
    return ComplexField(propagate_array(field.data, tf), field.pitch)


def direct_propagation(field, wavelength, z, rows, cols):
    """
    Brute-force quadrature of the Fresnel-Kirchhoff integral at the given output pixels.

    Uses the kernel -ik/(2 pi z) exp(ik r) with r exact in the exponent and the
    pixel area as quadrature weight. A pure-phase transfer applied to the same
    samples approximates exactly this sum, so the two are directly comparable.
    """
    k = 2 * np.pi / wavelength
    ys, xs = np.nonzero(field.data)
    sources = field.data[ys, xs]
    dy = (np.asarray(rows)[:, np.newaxis] - ys[np.newaxis, :]) * field.pitch
    dx = (np.asarray(cols)[:, np.newaxis] - xs[np.newaxis, :]) * field.pitch
    r = np.sqrt(dx ** 2 + dy ** 2 + z ** 2)
    kernel = (-1j * k / (2 * np.pi * z)) * np.exp(1j * k * r)
    return kernel @ sources * field.pitch ** 2
