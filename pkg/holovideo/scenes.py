"""
Synthetic scenes and simulated coded-exposure captures.

Objects are rasterized on the scene grid at their per-frame position
rounded to the nearest pixel. Captures use the full intensity model
|O_c + R_c|^2, including the quadratic object term the linear sensing
model leaves out.
"""
import logging

from django.conf import settings
import numpy as np

from .analysis import velocities
from .exceptions import ValidationError
from .formats import load_image
from .forward import sensing_operator
from .models import Geometry, Hologram, HologramKind, Object4D, Track
from .schemas import NoiseSpec, ObjectShape, ObjectSpec, SceneKind, SceneSpec

logger = logging.getLogger(__name__)


def _grid(spec):
    ys, xs = np.mgrid[0:spec.ny, 0:spec.nx]
    return xs.astype(float), ys.astype(float)


def _rasterize(obj, spec, frame, xs, ys):
    """Pixel mask (float weights) of ``obj`` in ``frame``."""
    x, y = obj.position_at(frame, spec.frame_interval)
    cx, cy = int(np.rint(x / spec.pitch)), int(np.rint(y / spec.pitch))
    dx, dy = xs - cx, ys - cy
    out = np.zeros((spec.ny, spec.nx))
    if obj.shape is ObjectShape.POINT:
        out[cy, cx] = 1.0
        return out
    if obj.shape is ObjectShape.DISK:
        radius = max(obj.size / (2 * spec.pitch), 0.5)
        return (dx ** 2 + dy ** 2 <= radius ** 2).astype(float)
    if obj.shape is ObjectShape.RASTER:
        image = load_image(obj.path).astype(float)
        h, w = image.shape
        top, left = cy - h // 2, cx - w // 2
        y0, x0 = max(top, 0), max(left, 0)
        y1, x1 = min(top + h, spec.ny), min(left + w, spec.nx)
        out[y0:y1, x0:x1] = image[y0 - top:y1 - top, x0 - left:x1 - left]
        return out
    # bar and fiber live in a frame rotated by ``angle``
    half_width = max((obj.width if obj.width is not None else spec.pitch) / (2 * spec.pitch), 0.5)
    half_length = obj.size / (2 * spec.pitch)
    u = dx * np.cos(obj.angle) + dy * np.sin(obj.angle)
    v = -dx * np.sin(obj.angle) + dy * np.cos(obj.angle)
    if obj.shape is ObjectShape.FIBER:
        v = v - obj.curvature * spec.pitch * u ** 2
    return ((np.abs(u) <= half_length) & (np.abs(v) <= half_width)).astype(float)


def build_scene(spec):
    """Rasterize every object of ``spec`` into a (T, N_d, ny, nx) volume."""
    data = np.zeros((spec.frame_count, len(spec.depths), spec.ny, spec.nx), dtype=np.complex128)
    xs, ys = _grid(spec)
    for obj in spec.objects:
        for t in range(spec.frame_count):
            footprint = _rasterize(obj, spec, t, xs, ys)
            # overlapping objects keep the stronger amplitude
            data[t, obj.depth_index] = np.maximum(data[t, obj.depth_index].real, obj.amplitude * footprint)
    logger.debug("built %s scene with %d objects on %s", spec.kind.value, len(spec.objects), data.shape)
    return Object4D(data)


def scene_geometry(spec, **overrides):
    values = {
        'nx': spec.nx,
        'ny': spec.ny,
        'pitch': spec.pitch,
        'depths': spec.depths,
        'frame_count': spec.frame_count,
        'frame_interval': spec.frame_interval,
    }
    values.update(overrides)
    return Geometry(**values)


def capture_terms(obj, masks, geom):
    """
    The three intensity terms of a capture, each summed over frames with weight tau.

    Returns ``(linear, quadratic, background)`` where linear = 2 tau Re{O_c R_c*},
    quadratic = tau |O_c|^2 and background = tau |R_c|^2, with R_c the unit
    reference passed through each frame's mask.
    """
    obj.check_geometry(geom)
    op = sensing_operator(masks, geom)
    tau = geom.frame_interval
    object_field = op.sensor_field(obj.data)
    reference = op.reference_field()
    linear = 2 * tau * np.real(object_field * np.conj(reference)).sum(axis=0)
    quadratic = tau * (np.abs(object_field) ** 2).sum(axis=0)
    background = tau * (np.abs(reference) ** 2).sum(axis=0)
    return linear, quadratic, background


def simulate_capture(obj, masks, geom, noise=None):
    """Raw and background holograms of one coded exposure of ``obj``."""
    noise = noise or NoiseSpec()
    linear, quadratic, background = capture_terms(obj, masks, geom)
    raw = background + linear + quadratic
    if noise.model == 'gaussian' and noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        raw = raw + rng.normal(0.0, noise.sigma * background.mean(), raw.shape)
    raw = np.maximum(raw, 0.0)
    return Hologram(raw, HologramKind.RAW), Hologram(background, HologramKind.BACKGROUND)


def psnr(recon, truth, cap=settings.PSNR_CAP_DB):
    """PSNR in dB of |recon| against |truth| over the whole volume, peak = max |truth|."""
    if recon.shape != truth.shape:
        raise ValidationError(f"shapes differ: {recon.shape} vs {truth.shape}")
    estimate, reference = np.abs(recon.data), np.abs(truth.data)
    mse = float(np.mean((estimate - reference) ** 2))
    if mse == 0:
        return float(cap)
    peak = float(reference.max())
    if peak == 0:
        return float('-inf')
    return float(min(cap, 10 * np.log10(peak ** 2 / mse)))


def ground_truth_tracks(spec):
    """True trajectories of every object, one Track per object, velocities filled."""
    tracks = []
    for index, obj in enumerate(spec.objects):
        positions = np.array([
            (*obj.position_at(t, spec.frame_interval), spec.depths[obj.depth_index])
            for t in range(spec.frame_count)
        ])
        track = Track(index, positions, np.ones(spec.frame_count, dtype=bool))
        tracks.append(velocities(track, spec.frame_interval))
    return tracks


def two_plane_depths(first_plane, dz, intermediate_planes=4):
    return tuple(float(d) for d in np.linspace(first_plane, first_plane + dz, intermediate_planes + 2))


def two_plane_spec(dz, nx=64, ny=64, frame_count=1, pitch=settings.SIMULATION_PITCH,
                   first_plane=settings.SIMULATION_FIRST_PLANE, intermediate_planes=4,
                   frame_interval=settings.FRAME_INTERVAL):
    """
    Two layers of procedural objects, the second ``dz`` behind the first.

    The near layer holds a large disk and a bar, the far layer a curved fiber
    and a small disk; empty planes sit in between. Objects are static over
    the ``frame_count`` frames.
    """
    extent_x, extent_y = (nx - 1) * pitch, (ny - 1) * pitch
    far = intermediate_planes + 1
    objects = [
        ObjectSpec(shape=ObjectShape.DISK, depth_index=0, position=(0.3 * extent_x, 0.35 * extent_y),
                   size=0.18 * extent_x, amplitude=0.8),
        ObjectSpec(shape=ObjectShape.BAR, depth_index=0, position=(0.65 * extent_x, 0.3 * extent_y),
                   size=0.4 * extent_x, width=0.06 * extent_x, angle=np.pi / 5, amplitude=0.6),
        ObjectSpec(shape=ObjectShape.FIBER, depth_index=far, position=(0.5 * extent_x, 0.7 * extent_y),
                   size=0.5 * extent_x, width=0.04 * extent_x, curvature=2.0 / extent_x, amplitude=0.7),
        ObjectSpec(shape=ObjectShape.DISK, depth_index=far, position=(0.75 * extent_x, 0.65 * extent_y),
                   size=0.1 * extent_x, amplitude=1.0),
    ]
    return SceneSpec(kind=SceneKind.TWO_PLANE, nx=nx, ny=ny, pitch=pitch, frame_count=frame_count,
                     frame_interval=frame_interval,
                     depths=two_plane_depths(first_plane, dz, intermediate_planes), objects=objects)


def _fiber_spec(kind, depths, nx, ny, pitch, frame_count, frame_interval, oscillation, frequency):
    extent_x, extent_y = (nx - 1) * pitch, (ny - 1) * pitch
    # the near fiber is the thicker one
    objects = [
        ObjectSpec(shape=ObjectShape.FIBER, depth_index=0, position=(0.35 * extent_x, 0.5 * extent_y),
                   size=0.7 * extent_y, width=4 * pitch, angle=np.pi / 2 - 0.2, curvature=0.5 / extent_y,
                   amplitude=0.6, oscillation_amplitude=oscillation, oscillation_frequency=frequency),
        ObjectSpec(shape=ObjectShape.FIBER, depth_index=len(depths) - 1,
                   position=(0.65 * extent_x, 0.5 * extent_y),
                   size=0.7 * extent_y, width=2 * pitch, angle=np.pi / 2 + 0.3, curvature=-0.5 / extent_y,
                   amplitude=0.6, oscillation_amplitude=oscillation, oscillation_frequency=frequency),
    ]
    return SceneSpec(kind=kind, nx=nx, ny=ny, pitch=pitch, depths=depths, frame_count=frame_count,
                     frame_interval=frame_interval, objects=objects)


def static_fibers_spec(depths=(71e-3, 101e-3), nx=128, ny=128, pitch=settings.PIXEL_PITCH * 4):
    return _fiber_spec(SceneKind.STATIC_FIBERS, depths, nx, ny, pitch, 1, settings.FRAME_INTERVAL, 0.0, 0.0)


def vibrating_fibers_spec(depths=(73e-3, 111e-3), nx=64, ny=64, pitch=settings.PIXEL_PITCH * 4,
                          frame_count=10, frame_interval=settings.FRAME_INTERVAL,
                          oscillation=None, frequency=200.0):
    oscillation = 2 * pitch if oscillation is None else oscillation
    return _fiber_spec(SceneKind.VIBRATING_FIBERS, depths, nx, ny, pitch, frame_count, frame_interval,
                       oscillation, frequency)


def random_glitter_spec(depths, nx=128, ny=128, pitch=settings.PIXEL_PITCH * 4, frame_count=10,
                        frame_interval=20e-6, count=7, size=0.25e-3,
                        speed_range=(0.7, 5.5), min_separation=None, seed=0, attempts=5000):
    """
    Moving-particle scene: ``count`` disks, each on a random depth plane,
    moving at a constant velocity with speed drawn from ``speed_range``.

    Particles are kept at least ``min_separation`` apart in every frame and
    their trajectories stay a particle size away from the grid border.
    """
    rng = np.random.default_rng(seed)
    extent_x, extent_y = (nx - 1) * pitch, (ny - 1) * pitch
    margin = size
    duration = (frame_count - 1) * frame_interval
    min_separation = 2 * size if min_separation is None else min_separation
    objects, paths = [], []
    for _ in range(attempts):
        if len(objects) == count:
            break
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0, 2 * np.pi)
        velocity = (speed * np.cos(heading), speed * np.sin(heading))
        travel_x, travel_y = velocity[0] * duration, velocity[1] * duration
        lo_x, hi_x = margin - min(travel_x, 0), extent_x - margin - max(travel_x, 0)
        lo_y, hi_y = margin - min(travel_y, 0), extent_y - margin - max(travel_y, 0)
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        start = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
        path = start + np.outer(np.arange(frame_count) * frame_interval, velocity)
        if any(np.min(np.linalg.norm(path - other, axis=1)) < min_separation for other in paths):
            continue
        paths.append(path)
        objects.append(ObjectSpec(shape=ObjectShape.DISK, depth_index=int(rng.integers(len(depths))),
                                  position=(float(start[0]), float(start[1])),
                                  velocity=(float(velocity[0]), float(velocity[1])), size=size))
    if len(objects) < count:
        raise ValidationError(f"could only place {len(objects)} of {count} particles on a "
                              f"{nx}x{ny} grid; use a larger grid or fewer particles")
    return SceneSpec(kind=SceneKind.MOVING_PARTICLES, nx=nx, ny=ny, pitch=pitch, depths=tuple(depths),
                     frame_count=frame_count, frame_interval=frame_interval, objects=objects)


def populate_scene(spec, seed=0):
    """Fill a scene given without objects with the default layout for its kind."""
    if spec.objects or spec.kind is SceneKind.TWO_PLANE:
        return spec
    if spec.kind is SceneKind.MOVING_PARTICLES:
        return random_glitter_spec(spec.depths, nx=spec.nx, ny=spec.ny, pitch=spec.pitch,
                                   frame_count=spec.frame_count, frame_interval=spec.frame_interval,
                                   seed=seed)
    vibrating = spec.kind is SceneKind.VIBRATING_FIBERS
    return _fiber_spec(spec.kind, spec.depths, spec.nx, spec.ny, spec.pitch, spec.frame_count,
                       spec.frame_interval, 2 * spec.pitch if vibrating else 0.0, 200.0 if vibrating else 0.0)
