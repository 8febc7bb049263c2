"""
Focus metrics, particle detection and tracking over reconstructed volumes.
"""
import logging

from django.conf import settings
import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .exceptions import ValidationError
from .models import Detection, FocusProfile, Track

logger = logging.getLogger(__name__)


def _check_window(window, shape):
    if window < 3 or window % 2 == 0:
        raise ValidationError(f"window must be odd and >= 3, got {window}")
    if window > min(shape):
        raise ValidationError(f"window {window} is larger than the slice {shape}")


def _window_bounds(size, half):
    centers = np.arange(size)
    return np.clip(centers - half, 0, size), np.clip(centers + half + 1, 0, size)


def _box_sum(table, rows, cols):
    (r0, r1), (c0, c1) = rows, cols
    return (table[np.ix_(r1, c1)] - table[np.ix_(r0, c1)]
            - table[np.ix_(r1, c0)] + table[np.ix_(r0, c0)])


def block_variance_map(values, window=settings.BLOCK_WINDOW):
    """
    Variance of |values| in a window x window neighbourhood of every pixel.

    Windows are clamped at the borders, so edge pixels use fewer samples.
    """
    magnitude = np.abs(np.asarray(values)).astype(np.float64)
    if magnitude.ndim != 2:
        raise ValidationError(f"block variance needs a 2D slice, got shape {magnitude.shape}")
    _check_window(window, magnitude.shape)
    centered = magnitude - magnitude.mean()
    half = window // 2
    rows = _window_bounds(magnitude.shape[0], half)
    cols = _window_bounds(magnitude.shape[1], half)

    def integral(a):
        return np.pad(a.cumsum(axis=0).cumsum(axis=1), ((1, 0), (1, 0)))

    count = np.outer(rows[1] - rows[0], cols[1] - cols[0])
    mean = _box_sum(integral(centered), rows, cols) / count
    mean_square = _box_sum(integral(centered ** 2), rows, cols) / count
    return np.maximum(mean_square - mean ** 2, 0.0)


def focus_profile(vol, frame, pixel, window, geom):
    """Max-normalized block variance at ``pixel`` = (x, y) across every depth of ``frame``."""
    vol.check_geometry(geom)
    x, y = pixel
    if not 0 <= frame < vol.frame_count:
        raise ValidationError(f"frame {frame} out of range [0, {vol.frame_count})")
    if not (0 <= x < geom.nx and 0 <= y < geom.ny):
        raise ValidationError(f"pixel ({x}, {y}) outside the {geom.nx}x{geom.ny} grid")
    _check_window(window, (geom.ny, geom.nx))
    half = window // 2
    rows = slice(max(y - half, 0), y + half + 1)
    cols = slice(max(x - half, 0), x + half + 1)
    variance = np.array([np.var(np.abs(vol.data[frame, n, rows, cols])) for n in range(vol.depth_count)])
    peak = variance.max()
    if peak <= 0:
        return FocusProfile(np.array(geom.depths), np.zeros_like(variance), window, in_focus=False)
    return FocusProfile(np.array(geom.depths), variance / peak, window)


def peak_contrast(profile):
    """Peak-to-mean ratio of a focus profile (0 for a degenerate profile)."""
    mean = float(np.mean(profile.variance))
    return 0.0 if mean == 0 else float(np.max(profile.variance)) / mean


def _pixel_graph(keep, profiles, correlation):
    """Adjacency of 4-connected kept pixels whose profiles have cosine similarity >= ``correlation``."""
    ny, nx = keep.shape
    index = np.arange(ny * nx).reshape(ny, nx)
    norms = np.linalg.norm(profiles, axis=0)
    unit = np.divide(profiles, norms, out=np.zeros_like(profiles), where=norms > 0)
    rows, cols = [], []
    for a, b in (((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
                 ((slice(None, -1), slice(None)), (slice(1, None), slice(None)))):
        similar = np.sum(unit[(slice(None),) + a] * unit[(slice(None),) + b], axis=0)
        linked = keep[a] & keep[b] & (similar >= correlation)
        rows.append(index[a][linked])
        cols.append(index[b][linked])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(ny * nx, ny * nx))


def detect_frame(stack, frame, window, reject_threshold, geom, correlation=settings.PROFILE_CORRELATION,
                 min_peak_fraction=settings.MIN_PEAK_FRACTION):
    """Detections in one (N_d, ny, nx) depth stack."""
    variance = np.stack([block_variance_map(plane, window) for plane in stack])
    peak = variance.max(axis=0)
    if peak.max() <= 0:
        return []
    normalized = np.divide(variance, peak, out=np.zeros_like(variance), where=peak > 0)
    peak_index = variance.argmax(axis=0)
    off_peak = normalized.copy()
    np.put_along_axis(off_peak, peak_index[np.newaxis], 0.0, axis=0)
    keep = (peak > 0) & (peak >= min_peak_fraction * peak.max()) & np.all(off_peak < reject_threshold, axis=0)
    if not keep.any():
        return []

    graph = _pixel_graph(keep, normalized, correlation)
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(keep.shape)
    detections = []
    for label in np.unique(labels[keep]):
        member = keep & (labels == label)
        depth = int(np.argmax(variance[:, member].sum(axis=1)))
        weights = np.abs(stack[depth]) * member
        if weights.sum() <= 0:
            weights = peak * member
        y_px, x_px = ndimage.center_of_mass(weights)
        detections.append(Detection(
            frame=frame, x_px=float(x_px), y_px=float(y_px),
            x_m=float(x_px * geom.pitch), y_m=float(y_px * geom.pitch),
            depth_index=depth, z_m=float(geom.depths[depth]),
            peak=float(peak[member].max()), pixel_count=int(member.sum()),
        ))
    detections.sort(key=lambda d: (d.y_px, d.x_px))
    return detections


def detect_particles(vol, window=settings.BLOCK_WINDOW, reject_threshold=settings.REJECT_THRESHOLD,
                     geom=None, correlation=settings.PROFILE_CORRELATION,
                     min_peak_fraction=settings.MIN_PEAK_FRACTION):
    """
    Per-frame particle detections from the block-variance depth profiles.

    A pixel is kept when its profile has a dominant peak (every off-peak
    normalized variance below ``reject_threshold``) that reaches
    ``min_peak_fraction`` of the frame's strongest response. Adjacent kept
    pixels with similar profiles form one particle.
    """
    if geom is None:
        raise ValidationError("detect_particles needs the reconstruction geometry")
    vol.check_geometry(geom)
    if not 0 < reject_threshold < 1:
        raise ValidationError(f"reject_threshold must be in (0, 1), got {reject_threshold}")
    detections = [detect_frame(vol.data[t], t, window, reject_threshold, geom, correlation, min_peak_fraction)
                  for t in range(vol.frame_count)]
    logger.info("detected %s particles per frame", [len(frame) for frame in detections])
    return detections


def track_particles(detections, max_jump=settings.MAX_JUMP):
    """Greedy gated nearest-neighbour linking of per-frame detections into tracks."""
    if not max_jump > 0:
        raise ValidationError(f"max_jump must be > 0, got {max_jump}")
    frame_count = len(detections)
    tracks = []
    active = []
    for t, frame in enumerate(detections):
        points = np.array([d.position for d in frame]).reshape(-1, 3)
        matched = {}
        if active and len(frame):
            previous = np.array([track.positions[t - 1] for track in active])
            distances = cdist(previous, points)
            pairs = sorted(zip(distances.ravel(), *np.unravel_index(np.arange(distances.size), distances.shape)))
            used_tracks, used_points = set(), set()
            for distance, i, j in pairs:
                if distance > max_jump:
                    break
                if i in used_tracks or j in used_points:
                    continue
                used_tracks.add(i)
                used_points.add(j)
                matched[j] = active[i]
        next_active = []
        for j, point in enumerate(points):
            track = matched.get(j)
            if track is None:
                track = Track(len(tracks), np.full((frame_count, 3), np.nan), np.zeros(frame_count, dtype=bool))
                tracks.append(track)
            track.positions[t] = point
            track.present[t] = True
            next_active.append(track)
        active = next_active
    logger.info("linked %d tracks over %d frames", len(tracks), frame_count)
    return tracks


def velocities(track, tau):
    """Central-difference velocities over 2 tau for frames whose neighbours are both present."""
    if not tau > 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    out = np.full_like(track.positions, np.nan)
    present = track.present
    interior = np.zeros_like(present)
    interior[1:-1] = present[:-2] & present[1:-1] & present[2:]
    for t in np.flatnonzero(interior):
        out[t] = (track.positions[t + 1] - track.positions[t - 1]) / (2 * tau)
    return Track(track.track_id, track.positions.copy(), present.copy(), out)
