"""
Per-frame binary modulation masks.

Masks live on the sensor's square grid and are constant on aligned
superpixel blocks. Partition stacks expose every pixel in exactly one
sub-frame, so the sum of all frames is the full-resolution open mask.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ValidationError
from .forward import divide_background
from .models import MaskStack

logger = logging.getLogger(__name__)


def _superpixel_grid(nx, ny, superpixel):
    if superpixel < 1:
        raise ValidationError(f"superpixel must be >= 1, got {superpixel}")
    if nx % superpixel or ny % superpixel:
        raise ValidationError(f"grid {nx}x{ny} is not divisible by superpixel {superpixel}")
    return ny // superpixel, nx // superpixel


def _expand(blocks, superpixel):
    ones = np.ones((superpixel, superpixel), dtype=np.uint8)
    return np.stack([np.kron(frame, ones) for frame in blocks]).astype(np.uint8)


def generate_partition_masks(nx, ny, frame_count, superpixel, seed):
    """Split the superpixel grid at random into ``frame_count`` disjoint classes of near-equal size."""
    rows, cols = _superpixel_grid(nx, ny, superpixel)
    count = rows * cols
    if frame_count < 1:
        raise ValidationError(f"frame count must be >= 1, got {frame_count}")
    if frame_count > count:
        raise ValidationError(f"{frame_count} frames exceed the {count} available superpixels")
    rng = np.random.default_rng(seed)
    labels = np.empty(count, dtype=np.int64)
    labels[rng.permutation(count)] = np.arange(count) % frame_count
    labels = labels.reshape(rows, cols)
    blocks = np.stack([(labels == t).astype(np.uint8) for t in range(frame_count)])
    return MaskStack(_expand(blocks, superpixel), superpixel, seed)


def generate_bernoulli_masks(nx, ny, frame_count, superpixel, seed, density=None):
    """Independent per-frame masks; each superpixel opens with probability ``density`` (default 1/T)."""
    rows, cols = _superpixel_grid(nx, ny, superpixel)
    if frame_count < 1:
        raise ValidationError(f"frame count must be >= 1, got {frame_count}")
    density = 1.0 / frame_count if density is None else density
    if not 0 < density <= 1:
        raise ValidationError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    blocks = (rng.random((frame_count, rows, cols)) < density).astype(np.uint8)
    return MaskStack(_expand(blocks, superpixel), superpixel, seed)


def calibrate_masks(captured, background, threshold=0.5, superpixel=1):
    """Binarize captured mask images after dividing out the beam profile."""
    captured = np.asarray(captured, dtype=np.float64)
    if captured.ndim == 2:
        captured = captured[np.newaxis]
    normalized = divide_background(captured, background)
    return MaskStack((normalized >= threshold).astype(np.uint8), superpixel)


@dataclass
class MaskReport:
    densities: List[float]
    disjoint: bool
    complete: bool
    block_constant: bool
    coverage_gap: float
    overlap: Optional[Tuple[int, int, int, int]] = None
    non_constant_frames: List[int] = field(default_factory=list)

    @property
    def passed(self):
        return self.disjoint and self.complete and self.block_constant

    def failures(self):
        failed = []
        if not self.disjoint:
            t1, t2, y, x = self.overlap
            failed.append(f"frames {t1} and {t2} overlap at pixel (y={y}, x={x})")
        if not self.complete:
            failed.append(f"{self.coverage_gap:.2%} of pixels are never exposed")
        if not self.block_constant:
            failed.append(f"frames {self.non_constant_frames} are not constant on superpixels")
        return failed

    def as_dict(self):
        return {
            'passed': self.passed,
            'densities': [float(d) for d in self.densities],
            'disjoint': self.disjoint,
            'complete': self.complete,
            'block_constant': self.block_constant,
            'coverage_gap': float(self.coverage_gap),
            'overlap': list(self.overlap) if self.overlap else None,
            'non_constant_frames': self.non_constant_frames,
            'failures': self.failures(),
        }


def _first_overlap(frames):
    coverage = frames.sum(axis=0, dtype=np.int64)
    hits = np.argwhere(coverage > 1)
    if hits.size == 0:
        return None
    y, x = (int(v) for v in hits[0])
    t1, t2 = (int(t) for t in np.flatnonzero(frames[:, y, x])[:2])
    return t1, t2, y, x


def _is_block_constant(frame, superpixel):
    ny, nx = frame.shape
    if ny % superpixel or nx % superpixel:
        return False
    blocks = frame.reshape(ny // superpixel, superpixel, nx // superpixel, superpixel)
    return bool(np.all(blocks == blocks[:, :1, :, :1]))


def validate_masks(stack):
    frames = stack.frames
    coverage = frames.sum(axis=0, dtype=np.int64)
    overlap = _first_overlap(frames)
    non_constant = [t for t, frame in enumerate(frames)
                    if not _is_block_constant(frame, stack.superpixel)]
    report = MaskReport(
        densities=list(stack.densities()),
        disjoint=overlap is None,
        complete=bool(np.all(coverage >= 1)),
        block_constant=not non_constant,
        coverage_gap=float(np.mean(coverage == 0)),
        overlap=overlap,
        non_constant_frames=non_constant,
    )
    logger.debug("mask report: %s", report.failures() or "all checks pass")
    return report
