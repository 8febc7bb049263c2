"""
File formats shared by the library and the command line.

Raster layout: a little-endian u32 header length, a UTF-8 JSON header
(magic, dtype, shape, pitch_m, wavelength_m, kind) and the packed
little-endian payload, row-major with x fastest. Complex samples are
stored as interleaved (re, im) f32 pairs.
"""
import csv
import json
import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import CorruptRasterError, ValidationError
from .models import ComplexField, Geometry, Hologram, HologramKind, MaskStack, Object4D

logger = logging.getLogger(__name__)

MAGIC = 'CHV1'
DTYPES = {'f32': np.dtype('<f4'), 'c64': np.dtype('<c8')}
HOLOGRAM_KINDS = {kind.value for kind in HologramKind}
NDIM = {'field': 2, 'volume': 4}


def _header_bytes(header):
    return json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _describe(obj, kind, pitch):
    if isinstance(obj, Hologram):
        return obj.data, 'f32', kind or obj.kind.value, pitch
    if isinstance(obj, ComplexField):
        return obj.data, 'c64', kind or 'field', pitch if pitch is not None else obj.pitch
    if isinstance(obj, Object4D):
        return obj.data, 'c64', kind or 'volume', pitch
    if isinstance(obj, MaskStack):
        return obj.frames, 'f32', kind or 'mask', pitch
    data = np.asarray(obj)
    if np.iscomplexobj(data):
        return data, 'c64', kind or 'array', pitch
    if data.dtype.kind not in 'biuf':
        raise ValidationError(f"unsupported dtype {data.dtype} for a raster")
    return data, 'f32', kind or 'array', pitch


def write_raster(path, obj, kind=None, pitch=None, wavelength=None):
    data, dtype, kind, pitch = _describe(obj, kind, pitch)
    if not 1 <= data.ndim <= 4:
        raise ValidationError(f"rasters hold 1 to 4 dimensions, got {data.ndim}")
    header = _header_bytes({
        'magic': MAGIC,
        'dtype': dtype,
        'shape': list(data.shape),
        'pitch_m': None if pitch is None else float(pitch),
        'wavelength_m': None if wavelength is None else float(wavelength),
        'kind': kind,
    })
    payload = np.ascontiguousarray(data, dtype=DTYPES[dtype]).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(struct.pack('<I', len(header)))
        handle.write(header)
        handle.write(payload)
    logger.debug("wrote %s raster %s %s to %s", kind, dtype, data.shape, path)
    return path


def read_raster_header(path):
    """Header dict and payload bytes of a raster file, with size checks."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4:
        raise CorruptRasterError(f"{path}: file too short for a header length ({len(blob)} bytes)")
    (length,) = struct.unpack('<I', blob[:4])
    if len(blob) < 4 + length:
        raise CorruptRasterError(f"{path}: header needs {length} bytes, only {len(blob) - 4} present")
    try:
        header = json.loads(blob[4:4 + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptRasterError(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(header, dict) or header.get('magic') != MAGIC:
        raise CorruptRasterError(f"{path}: bad magic {header.get('magic') if isinstance(header, dict) else None!r}")
    if header.get('dtype') not in DTYPES:
        raise CorruptRasterError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = header.get('shape')
    if (not isinstance(shape, list) or not 1 <= len(shape) <= 4
            or not all(isinstance(s, int) and s >= 1 for s in shape)):
        raise CorruptRasterError(f"{path}: invalid shape {shape!r}")
    payload = blob[4 + length:]
    expected = int(np.prod(shape)) * DTYPES[header['dtype']].itemsize
    if len(payload) != expected:
        raise CorruptRasterError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return header, payload


def read_array(path):
    header, payload = read_raster_header(path)
    data = np.frombuffer(payload, dtype=DTYPES[header['dtype']]).reshape(header['shape'])
    return header, data


def read_raster(path):
    """Typed object from a raster: Hologram, ComplexField, Object4D, MaskStack or ndarray."""
    header, data = read_array(path)
    kind = header.get('kind')
    expected = 2 if kind in HOLOGRAM_KINDS else NDIM.get(kind)
    if expected is not None and data.ndim != expected:
        raise CorruptRasterError(f"{path}: kind {kind!r} needs {expected} dimensions, got {data.ndim}")
    try:
        if kind in HOLOGRAM_KINDS:
            return Hologram(data.astype(np.float64), HologramKind(kind))
        if kind == 'field':
            if not header.get('pitch_m'):
                raise CorruptRasterError(f"{path}: field rasters need a pitch_m")
            return ComplexField(data.astype(np.complex128), header['pitch_m'])
        if kind == 'volume':
            return Object4D(data.astype(np.complex128))
        if kind == 'mask':
            return MaskStack(data)
    except ValidationError as exc:
        raise CorruptRasterError(f"{path}: {exc}") from exc
    return np.array(data)


def load_image(path):
    """8-bit grayscale image (PNG, PGM, ...) as float32 in [0, 1]."""
    with Image.open(path) as image:
        pixels = np.asarray(image.convert('L'), dtype=np.float32)
    return pixels / np.float32(255.0)


def load_hologram(path, kind=HologramKind.SUBTRACTED):
    """A hologram from a raster or from an 8-bit image."""
    path = Path(path)
    if path.suffix.lower() in ('.png', '.pgm', '.bmp', '.tif', '.tiff', '.jpg', '.jpeg'):
        return Hologram(load_image(path).astype(np.float64), kind)
    obj = read_raster(path)
    if isinstance(obj, Hologram):
        return obj
    if isinstance(obj, np.ndarray) and obj.ndim == 2 and not np.iscomplexobj(obj):
        return Hologram(obj.astype(np.float64), kind)
    raise ValidationError(f"{path} does not hold a hologram")


def save_preview(path, values):
    """|values| scaled to [0, 255] as an 8-bit PNG."""
    magnitude = np.abs(np.asarray(values))
    peak = magnitude.max() if magnitude.size else 0.0
    scaled = np.zeros(magnitude.shape) if peak == 0 else magnitude / peak * 255.0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(scaled).astype(np.uint8)).save(path)
    return path


def write_mask_stack(directory, stack):
    """One raster per frame plus ``index.json``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    written = []
    for t, frame in enumerate(stack.frames):
        name = f'frame_{t:03d}.chv'
        written.append(write_raster(directory / name, frame.astype(np.float32), kind='mask'))
        names.append(name)
    index = {
        'frames': names,
        'frame_count': stack.frame_count,
        'shape': list(stack.shape),
        'superpixel': stack.superpixel,
        'seed': stack.seed,
    }
    index_path = directory / 'index.json'
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + '\n')
    written.append(index_path)
    return written


def read_mask_stack(directory, threshold=None):
    """
    Mask stack from a directory written by :func:`write_mask_stack`.

    Real-valued frames (calibrated captures) are binarized at ``threshold``.
    """
    directory = Path(directory)
    try:
        index = json.loads((directory / 'index.json').read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptRasterError(f"{directory}: unreadable mask index ({exc})") from exc
    frames = np.stack([read_array(directory / name)[1] for name in index['frames']])
    if threshold is not None:
        frames = frames >= threshold
    elif not np.all((frames == 0) | (frames == 1)):
        raise CorruptRasterError(f"{directory}: mask frames are not binary; give a threshold")
    return MaskStack(frames.astype(np.uint8), index.get('superpixel', 1), index.get('seed'))


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return '' if np.isnan(value) else repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    return path


def write_profile_csv(path, profile):
    return write_csv(path, ('depth_m', 'variance'), zip(profile.depths, profile.variance))


DETECTION_COLUMNS = ('frame', 'x_px', 'y_px', 'x_m', 'y_m', 'depth_index', 'z_m', 'peak', 'pixel_count')
TRACK_COLUMNS = ('frame', 'id', 'x_m', 'y_m', 'z_m', 'vx', 'vy', 'vz', 'speed')


def write_detections_csv(path, detections):
    rows = [(d.frame, d.x_px, d.y_px, d.x_m, d.y_m, d.depth_index, d.z_m, d.peak, d.pixel_count)
            for frame in detections for d in frame]
    return write_csv(path, DETECTION_COLUMNS, rows)


def write_tracks_csv(path, tracks):
    rows = []
    for track in tracks:
        speeds = track.speeds()
        for t in track.frames:
            x, y, z = track.positions[t]
            vx, vy, vz = track.velocities[t]
            rows.append((int(t), track.track_id, x, y, z, vx, vy, vz, speeds[t]))
    rows.sort(key=lambda row: (row[0], row[1]))
    return write_csv(path, TRACK_COLUMNS, rows)


def write_geometry(path, geom):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(geom.model_dump(mode='json'), indent=2, sort_keys=True) + '\n')
    return path


def read_geometry(path):
    try:
        return Geometry(**json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ValidationError(f"cannot read geometry from {path}: {exc}") from exc
