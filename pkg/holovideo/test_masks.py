import unittest

import numpy as np
from hypothesis import given, settings as hyp_settings, strategies as st

from .exceptions import MaskValidationError, ValidationError
from .masks import calibrate_masks, generate_bernoulli_masks, generate_partition_masks, validate_masks
from .models import MaskStack


class PartitionMaskTests(unittest.TestCase):
    """Disjoint per-frame masks that together expose every pixel once"""

    @hyp_settings(max_examples=20, deadline=None)
    @given(frame_count=st.sampled_from([2, 5, 10]), superpixel=st.sampled_from([1, 2, 4]),
           seed=st.integers(0, 2 ** 31))
    def test_partition_invariants(self, frame_count, superpixel, seed):
        masks = generate_partition_masks(40, 24, frame_count, superpixel, seed)
        self.assertEqual(masks.frames.shape, (frame_count, 24, 40))
        self.assertTrue(np.all(masks.frames.sum(axis=0) == 1))
        tolerance = superpixel ** 2 / (40 * 24)
        for density in masks.densities():
            self.assertLessEqual(abs(density - 1.0 / frame_count), tolerance + 1e-12)
        report = validate_masks(masks)
        self.assertTrue(report.passed, report.failures())

    def test_single_frame_is_fully_open(self):
        masks = generate_partition_masks(16, 8, 1, 2, seed=0)
        self.assertTrue(np.all(masks.frames == 1))

    def test_prototype_sensor_layout(self):
        """960x600 sensor with 4x4 superpixels and ten sub-frames"""
        masks = generate_partition_masks(960, 600, 10, 4, seed=0)
        counts = masks.frames.reshape(10, -1).sum(axis=1)
        self.assertTrue(np.all(counts == 3600 * 16))
        self.assertTrue(validate_masks(masks).block_constant)

    def test_seed_controls_layout(self):
        first = generate_partition_masks(32, 32, 4, 2, seed=5)
        again = generate_partition_masks(32, 32, 4, 2, seed=5)
        other = generate_partition_masks(32, 32, 4, 2, seed=6)
        self.assertTrue(np.array_equal(first.frames, again.frames))
        self.assertFalse(np.array_equal(first.frames, other.frames))
        self.assertEqual(first.seed, 5)

    def test_rejects_bad_layouts(self):
        with self.assertRaises(ValidationError):
            generate_partition_masks(30, 32, 4, 4, seed=0)
        with self.assertRaises(ValidationError):
            generate_partition_masks(8, 8, 5, 4, seed=0)
        with self.assertRaises(ValidationError):
            generate_partition_masks(8, 8, 0, 1, seed=0)


class BernoulliMaskTests(unittest.TestCase):

    def test_coverage_gap_matches_probability(self):
        masks = generate_bernoulli_masks(256, 256, 5, 1, seed=1)
        report = validate_masks(masks)
        self.assertFalse(report.passed)
        self.assertFalse(report.complete)
        self.assertFalse(report.disjoint)
        self.assertAlmostEqual(report.coverage_gap, 0.8 ** 5, delta=0.01)

    def test_density_defaults_to_one_over_frames(self):
        masks = generate_bernoulli_masks(128, 128, 4, 2, seed=3)
        self.assertAlmostEqual(float(np.mean(masks.frames)), 0.25, delta=0.02)
        self.assertTrue(validate_masks(masks).block_constant)

    def test_rejects_bad_density(self):
        with self.assertRaises(ValidationError):
            generate_bernoulli_masks(8, 8, 2, 1, seed=0, density=0.0)
        with self.assertRaises(ValidationError):
            generate_bernoulli_masks(8, 8, 2, 1, seed=0, density=1.5)


class ValidateMasksTests(unittest.TestCase):
    """Reports name the first violated property"""

    def test_overlap_names_frames_and_pixel(self):
        frames = generate_partition_masks(16, 16, 3, 1, seed=2).frames.copy()
        y, x = (int(v) for v in np.argwhere(frames[0])[0])
        frames[1, y, x] = 1
        report = validate_masks(MaskStack(frames))
        self.assertFalse(report.disjoint)
        self.assertEqual(report.overlap, (0, 1, y, x))
        self.assertIn(f"frames 0 and 1 overlap at pixel (y={y}, x={x})", report.failures())

    def test_non_constant_superpixel(self):
        frames = generate_partition_masks(16, 16, 2, 4, seed=0).frames.copy()
        frames[:, 0, 0] = 1 - frames[:, 0, 0]
        report = validate_masks(MaskStack(frames, superpixel=4))
        self.assertFalse(report.block_constant)
        self.assertEqual(report.non_constant_frames, [0, 1])

    def test_error_carries_report(self):
        report = validate_masks(MaskStack(np.zeros((2, 4, 4), dtype=np.uint8)))
        error = MaskValidationError(report)
        self.assertIs(error.report, report)
        self.assertIn("never exposed", str(error))
        self.assertEqual(report.as_dict()['coverage_gap'], 1.0)

    def test_mask_values_must_be_binary(self):
        with self.assertRaises(ValidationError):
            MaskStack(np.full((1, 4, 4), 2, dtype=np.uint8))


class CalibrateMasksTests(unittest.TestCase):

    def test_recovers_mask_under_beam_profile(self):
        truth = generate_partition_masks(32, 32, 2, 2, seed=4).frames
        y, x = np.mgrid[0:32, 0:32] - 16
        beam = 0.2 + np.exp(-(x ** 2 + y ** 2) / 200.0)
        captured = truth * beam * 0.9 + 0.02 * beam
        masks = calibrate_masks(captured, beam, threshold=0.5, superpixel=2)
        self.assertTrue(np.array_equal(masks.frames, truth))
        self.assertEqual(masks.superpixel, 2)

    def test_dark_background_pixels_stay_closed(self):
        background = np.ones((4, 4))
        background[0, 0] = 0.0
        masks = calibrate_masks(np.ones((4, 4)), background)
        self.assertEqual(masks.frames.shape, (1, 4, 4))
        self.assertEqual(masks.frames[0, 0, 0], 0)
        self.assertEqual(int(masks.frames.sum()), 15)
