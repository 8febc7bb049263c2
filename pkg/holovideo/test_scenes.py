import unittest

import numpy as np
from numpy.testing import assert_allclose
from pydantic import ValidationError as PydanticValidationError
from scipy import ndimage

from .exceptions import ValidationError
from .forward import forward
from .masks import generate_partition_masks
from .models import Object4D
from .schemas import NoiseSpec, ObjectShape, ObjectSpec, SceneKind, SceneSpec
from .scenes import (build_scene, capture_terms, ground_truth_tracks, populate_scene, psnr, random_glitter_spec,
                     scene_geometry, simulate_capture, static_fibers_spec, two_plane_spec, vibrating_fibers_spec)

PITCH = 40e-6
TAU = 500e-6


def moving_disk_scene(velocity=(0.4, -0.2), frame_count=5):
    disk = ObjectSpec(shape=ObjectShape.DISK, depth_index=1, position=(20 * PITCH, 30 * PITCH),
                      velocity=velocity, size=5 * PITCH)
    return SceneSpec(kind=SceneKind.MOVING_PARTICLES, nx=64, ny=64, pitch=PITCH, depths=(0.05, 0.06),
                     frame_count=frame_count, frame_interval=TAU, objects=[disk])


class BuildSceneTests(unittest.TestCase):
    """Rasterized object volumes"""

    def test_empty_scene_is_zero(self):
        spec = SceneSpec(nx=16, ny=8, depths=(0.05, 0.06), frame_count=3)
        obj = build_scene(spec)
        self.assertEqual(obj.shape, (3, 2, 8, 16))
        self.assertTrue(np.all(obj.data == 0))

    def test_moving_disk_centroid_follows_velocity(self):
        spec = moving_disk_scene()
        obj = build_scene(spec)
        for t in range(spec.frame_count):
            x, y = spec.objects[0].position_at(t, TAU)
            cy, cx = ndimage.center_of_mass(np.abs(obj.data[t, 1]))
            self.assertAlmostEqual(cx, np.rint(x / PITCH), places=9)
            self.assertAlmostEqual(cy, np.rint(y / PITCH), places=9)
            self.assertTrue(np.all(obj.data[t, 0] == 0))

    def test_amplitudes_stay_in_unit_range(self):
        obj = build_scene(two_plane_spec(0.015))
        magnitude = obj.magnitude()
        self.assertLessEqual(magnitude.max(), 1.0)
        self.assertGreater(magnitude.max(), 0.0)
        self.assertTrue(np.all(np.imag(obj.data) == 0))

    def test_object_leaving_grid_is_rejected(self):
        with self.assertRaises(PydanticValidationError):
            moving_disk_scene(velocity=(10.0, 0.0))

    def test_depth_index_must_exist(self):
        disk = ObjectSpec(shape=ObjectShape.DISK, depth_index=2, position=(PITCH, PITCH), size=PITCH)
        with self.assertRaises(PydanticValidationError):
            SceneSpec(nx=8, ny=8, pitch=PITCH, depths=(0.05, 0.06), objects=[disk])

    def test_amplitude_must_be_in_unit_interval(self):
        with self.assertRaises(PydanticValidationError):
            ObjectSpec(shape=ObjectShape.POINT, position=(0.0, 0.0), amplitude=1.5)


class PresetSceneTests(unittest.TestCase):

    def test_two_plane_layout(self):
        spec = two_plane_spec(0.015, nx=256, ny=256)
        self.assertEqual(len(spec.depths), 6)
        self.assertAlmostEqual(spec.depths[0], 0.070)
        self.assertAlmostEqual(spec.depths[-1], 0.085)
        self.assertAlmostEqual(spec.pitch * 256, 9.85e-3)
        planes = {obj.depth_index for obj in spec.objects}
        self.assertEqual(planes, {0, 5})

    def test_fiber_scenes(self):
        static = build_scene(static_fibers_spec())
        self.assertEqual(static.shape, (1, 2, 128, 128))
        self.assertTrue(np.any(static.data[0, 0]) and np.any(static.data[0, 1]))
        vibrating = build_scene(vibrating_fibers_spec())
        self.assertEqual(vibrating.frame_count, 10)
        self.assertFalse(np.array_equal(vibrating.data[0], vibrating.data[1]))

    def test_random_glitter(self):
        depths = (0.06, 0.07, 0.08)
        spec = random_glitter_spec(depths, seed=4)
        self.assertEqual(len(spec.objects), 7)
        for obj in spec.objects:
            self.assertGreaterEqual(np.hypot(*obj.velocity), 0.7)
            self.assertLessEqual(np.hypot(*obj.velocity), 5.5)
        again = random_glitter_spec(depths, seed=4)
        self.assertEqual(spec.model_dump(), again.model_dump())

    def test_glitter_that_cannot_fit(self):
        with self.assertRaises(ValidationError):
            random_glitter_spec((0.06,), nx=16, ny=16, count=20, attempts=200)

    def test_populate_fills_empty_scenes_only(self):
        empty = SceneSpec(kind=SceneKind.MOVING_PARTICLES, nx=128, ny=128, pitch=23.44e-6,
                          depths=(0.06, 0.07), frame_count=10, frame_interval=20e-6)
        self.assertEqual(len(populate_scene(empty, seed=1).objects), 7)
        full = moving_disk_scene()
        self.assertIs(populate_scene(full), full)


class SimulateCaptureTests(unittest.TestCase):
    """Full intensity captures through coded masks"""

    @classmethod
    def setUpClass(cls):
        cls.spec = moving_disk_scene()
        cls.geom = scene_geometry(cls.spec)
        cls.masks = generate_partition_masks(64, 64, 5, 4, seed=0)

    def test_empty_scene_gives_background(self):
        raw, background = simulate_capture(Object4D.for_geometry(self.geom), self.masks, self.geom)
        self.assertTrue(np.array_equal(raw.data, background.data))
        # partition masks expose every pixel for exactly one frame
        assert_allclose(background.data, TAU)

    def test_subtracted_is_linear_plus_quadratic(self):
        truth = build_scene(self.spec)
        raw, background = simulate_capture(truth, self.masks, self.geom)
        linear, quadratic, _ = capture_terms(truth, self.masks, self.geom)
        subtracted = raw.data - background.data
        assert_allclose(subtracted, linear + quadratic, rtol=0, atol=1e-12 * np.abs(subtracted).max())
        assert_allclose(linear, forward(truth, self.masks, self.geom).data, rtol=0,
                        atol=1e-12 * np.abs(linear).max())

    def test_weak_object_is_nearly_linear(self):
        data = np.zeros(self.geom_shape())
        data[:, 0, 32, 32] = 0.05
        linear, quadratic, _ = capture_terms(Object4D(data), self.masks, self.geom)
        self.assertLess(np.sum(quadratic ** 2) / np.sum(linear ** 2), 0.005)

    def test_noise_is_seeded(self):
        truth = build_scene(self.spec)
        noise = NoiseSpec(model='gaussian', sigma=0.05, seed=3)
        first, _ = simulate_capture(truth, self.masks, self.geom, noise)
        second, _ = simulate_capture(truth, self.masks, self.geom, noise)
        clean, _ = simulate_capture(truth, self.masks, self.geom)
        self.assertTrue(np.array_equal(first.data, second.data))
        self.assertFalse(np.array_equal(first.data, clean.data))
        self.assertGreaterEqual(first.data.min(), 0.0)

    def geom_shape(self):
        return (self.geom.frame_count, self.geom.depth_count, self.geom.ny, self.geom.nx)


class PSNRTests(unittest.TestCase):

    def setUp(self):
        self.truth = Object4D(np.full((1, 1, 4, 4), 0.5))

    def test_identical_volumes_hit_the_cap(self):
        self.assertEqual(psnr(self.truth, self.truth), 300.0)

    def test_zero_estimate_scores_zero_db(self):
        truth = Object4D(np.ones((1, 1, 4, 4)))
        self.assertAlmostEqual(psnr(Object4D.zeros(1, 1, 4, 4), truth), 0.0)

    def test_known_error(self):
        truth = Object4D(np.ones((1, 1, 4, 4)))
        estimate = Object4D(np.full((1, 1, 4, 4), 0.95))
        self.assertAlmostEqual(psnr(estimate, truth), 26.0206, places=4)

    def test_uses_magnitudes(self):
        flipped = Object4D(-self.truth.data)
        self.assertEqual(psnr(flipped, self.truth), 300.0)

    def test_scale_invariant(self):
        estimate = Object4D(self.truth.data * 0.9)
        scaled = psnr(Object4D(estimate.data * 7), Object4D(self.truth.data * 7))
        self.assertAlmostEqual(scaled, psnr(estimate, self.truth), places=9)

    def test_all_zero_truth(self):
        self.assertEqual(psnr(self.truth, Object4D.zeros(1, 1, 4, 4)), float('-inf'))

    def test_shape_mismatch(self):
        with self.assertRaises(ValidationError):
            psnr(self.truth, Object4D.zeros(1, 2, 4, 4))


class GroundTruthTracksTests(unittest.TestCase):

    def test_constant_velocity(self):
        spec = moving_disk_scene(velocity=(0.4, -0.2))
        tracks = ground_truth_tracks(spec)
        self.assertEqual(len(tracks), 1)
        track = tracks[0]
        self.assertEqual(track.length, 5)
        assert_allclose(track.velocities[1:-1, :2], np.tile([0.4, -0.2], (3, 1)), atol=1e-9)
        assert_allclose(track.velocities[1:-1, 2], 0.0)
        self.assertTrue(np.all(np.isnan(track.velocities[[0, -1]])))
        assert_allclose(track.positions[:, 2], 0.06)
