import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from hypothesis import given, settings as hyp_settings, strategies as st
from pydantic import ValidationError as PydanticValidationError

from .exceptions import NumericalAbort, ValidationError
from .forward import forward, sensing_operator
from .masks import generate_partition_masks
from .models import Geometry, Hologram, HologramKind, MaskStack, Object4D
from .schemas import SolverConfig
from .solver import backpropagate, tv_denoise, tv_norm, tv_weights, twist_reconstruct

WAVELENGTH = 532e-9
TAU = 500e-6


def point_object(shape, points, amplitude=1.0):
    data = np.zeros(shape, dtype=np.complex128)
    for t, n, y, x in points:
        data[t, n, y, x] = amplitude
    return Object4D(data)


def brute_force_tv(u, weights):
    total = 0.0
    for part in (np.real(u), np.imag(u)):
        for index in np.ndindex(part.shape):
            squared = 0.0
            for axis, w in enumerate(weights):
                step = list(index)
                step[axis] += 1
                if step[axis] < part.shape[axis]:
                    squared += (w * (part[tuple(step)] - part[index])) ** 2
            total += np.sqrt(squared)
    return total


class TVNormTests(unittest.TestCase):
    """Weighted isotropic total variation over (frame, depth, y, x)"""

    def test_constant_volume_has_zero_tv(self):
        self.assertEqual(tv_norm(np.full((2, 3, 4, 5), 2.5 - 1j)), 0.0)

    def test_temporal_step(self):
        cfg = SolverConfig(lambda_spatial=1.0, lambda_temporal=1.0)
        self.assertAlmostEqual(tv_norm(np.array([0.0, 3.0]).reshape(2, 1, 1, 1), cfg), 3.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((4, 4, 2, 3)) + 1j * rng.standard_normal((4, 4, 2, 3))
        cfg = SolverConfig(lambda_spatial=2.0, lambda_temporal=1.0)
        _, weights = tv_weights(cfg)
        self.assertEqual(weights, (0.5, 1.0, 1.0, 1.0))
        self.assertAlmostEqual(tv_norm(u, cfg), brute_force_tv(u, weights), delta=1e-12 * brute_force_tv(u, weights))

    def test_temporal_only_weights(self):
        cfg = SolverConfig(lambda_spatial=0.0, lambda_temporal=0.3)
        self.assertEqual(tv_weights(cfg), (0.3, (1.0, 0.0, 0.0, 0.0)))
        u = np.zeros((2, 1, 2, 2))
        u[:, 0, 0, 0] = [1.0, 1.0]
        self.assertEqual(tv_norm(u, cfg), 0.0)

    @hyp_settings(max_examples=30, deadline=None)
    @given(scale=st.floats(-50, 50, allow_nan=False), seed=st.integers(0, 2 ** 16))
    def test_absolutely_homogeneous(self, scale, seed):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((2, 2, 3, 3)) + 1j * rng.standard_normal((2, 2, 3, 3))
        self.assertAlmostEqual(tv_norm(scale * u), abs(scale) * tv_norm(u), delta=1e-9 * (1 + abs(scale)))


class TVDenoiseTests(unittest.TestCase):
    """Proximal operator of the weighted TV norm"""

    def test_zero_weight_is_identity(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((2, 2, 4, 4))
        self.assertTrue(np.array_equal(tv_denoise(u, 0.0), u))
        obj = Object4D(u + 1j)
        self.assertIsInstance(tv_denoise(obj, 0.0), Object4D)

    def test_step_edge_has_closed_form(self):
        """A 1D step keeps its jump; both sides move towards each other by weight / width"""
        signal = np.r_[np.zeros(8), np.ones(8)].reshape(1, 1, 1, 16)
        out = tv_denoise(signal, 0.5, SolverConfig(tv_inner_iters=3000))
        expected = np.r_[np.full(8, 0.0625), np.full(8, 0.9375)]
        np.testing.assert_allclose(out.ravel(), expected, atol=1e-4)

    @hyp_settings(max_examples=25, deadline=None)
    @given(weight=st.floats(0.01, 2.0), seed=st.integers(0, 2 ** 16))
    def test_never_increases_prox_objective(self, weight, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((2, 2, 4, 4)) + 1j * rng.standard_normal((2, 2, 4, 4))
        cfg = SolverConfig(lambda_spatial=1.0, lambda_temporal=0.5)
        u = tv_denoise(f, weight, cfg)

        def objective(v):
            return 0.5 * np.sum(np.abs(v - f) ** 2) + weight * tv_norm(v, cfg)

        self.assertLessEqual(objective(u), objective(f) * (1 + 1e-10))
        self.assertAlmostEqual(complex(np.mean(u)), complex(np.mean(f)), delta=1e-8)

    def test_rejects_negative_weight(self):
        with self.assertRaises(ValidationError):
            tv_denoise(np.zeros((1, 1, 2, 2)), -1.0)


def single_plane_geometry(n=32, depth=50 * WAVELENGTH):
    return Geometry(nx=n, ny=n, depths=(depth,), frame_interval=TAU)


class TwISTTests(unittest.TestCase):
    """TV-regularized two-step reconstruction"""

    def test_zero_hologram(self):
        geom = single_plane_geometry(16)
        obj, trace = twist_reconstruct(Hologram.zeros(16, 16), MaskStack.open(16, 16), geom)
        self.assertTrue(np.all(obj.data == 0))
        self.assertEqual(len(trace), 1)
        self.assertEqual(trace.stop_reason, 'zero_objective')

    def test_zero_masks(self):
        geom = single_plane_geometry(16)
        holo = Hologram(np.ones((16, 16)))
        obj, trace = twist_reconstruct(holo, MaskStack(np.zeros((1, 16, 16), dtype=np.uint8)), geom)
        self.assertEqual(trace.stop_reason, 'zero_operator')
        self.assertTrue(np.all(obj.data == 0))

    def test_rejects_raw_hologram(self):
        geom = single_plane_geometry(16)
        with self.assertRaises(ValidationError):
            twist_reconstruct(Hologram.zeros(16, 16, HologramKind.RAW), MaskStack.open(16, 16), geom)

    def test_objective_is_monotone(self):
        geom = Geometry(nx=16, ny=16, depths=(0.01, 0.012), frame_count=2, frame_interval=TAU)
        masks = generate_partition_masks(16, 16, 2, 1, seed=0)
        truth = point_object((2, 2, 16, 16), [(0, 0, 5, 5), (1, 1, 10, 9)])
        g = forward(truth, masks, geom).data
        g = g + 0.05 * np.abs(g).max() * np.random.default_rng(0).standard_normal(g.shape)
        _, trace = twist_reconstruct(Hologram(g), masks, geom, SolverConfig(max_iters=30))
        objectives = trace.objectives()
        self.assertTrue(np.all(np.diff(objectives) <= 1e-12 * objectives[0]))
        self.assertEqual(trace.records[0].iteration, 0)

    def test_recovers_real_points(self):
        geom = single_plane_geometry(32)
        truth = point_object((1, 1, 32, 32), [(0, 0, 10, 12), (0, 0, 20, 18)])
        g = forward(truth, MaskStack.open(32, 32), geom)
        cfg = SolverConfig(real_only=True, lambda_spatial=1e-3, max_iters=200, tol=1e-10)
        obj, trace = twist_reconstruct(g, MaskStack.open(32, 32), geom, cfg)
        error = np.linalg.norm(obj.data - truth.data) / np.linalg.norm(truth.data)
        self.assertLess(error, 0.05)
        self.assertTrue(np.all(np.imag(obj.data) == 0))
        self.assertGreater(trace.lambda_spatial, 0)

    def test_unregularized_solve_reduces_gradient(self):
        geom = single_plane_geometry(32)
        rng = np.random.default_rng(4)
        truth = Object4D(rng.standard_normal((1, 1, 32, 32)) + 1j * rng.standard_normal((1, 1, 32, 32)))
        masks = MaskStack.open(32, 32)
        g = forward(truth, masks, geom)
        cfg = SolverConfig(lambda_spatial=0.0, max_iters=300, tol=1e-14)
        obj, _ = twist_reconstruct(g, masks, geom, cfg)
        op = sensing_operator(masks, geom)
        before = np.linalg.norm(op.apply_adjoint(g.data))
        after = np.linalg.norm(op.apply_adjoint(g.data - op.apply(obj.data)))
        self.assertLess(after, before / 100)

    def test_non_finite_iterate_aborts_with_trace(self):
        geom = single_plane_geometry(16)
        g = forward(point_object((1, 1, 16, 16), [(0, 0, 8, 8)]), MaskStack.open(16, 16), geom)
        poisoned = np.full((1, 1, 16, 16), np.nan, dtype=np.complex128)
        with mock.patch('holovideo.solver.tv_denoise', return_value=poisoned):
            with self.assertRaises(NumericalAbort) as ctx:
                twist_reconstruct(g, MaskStack.open(16, 16), geom)
        self.assertEqual(ctx.exception.trace.stop_reason, 'numerical_abort')
        self.assertEqual(len(ctx.exception.trace), 1)

    def test_trace_csv(self):
        geom = single_plane_geometry(16)
        g = forward(point_object((1, 1, 16, 16), [(0, 0, 8, 8)]), MaskStack.open(16, 16), geom)
        _, trace = twist_reconstruct(g, MaskStack.open(16, 16), geom, SolverConfig(max_iters=3))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trace.csv'
            trace.to_csv(path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'iteration,data_fit,tv,objective,time_ms')
        self.assertEqual(len(lines), len(trace) + 1)


class SolverConfigTests(unittest.TestCase):

    def test_default_twist_coefficients(self):
        alpha, beta = SolverConfig().twist_coefficients()
        rho = (1 - 1e-3) / (1 + 1e-3)
        self.assertAlmostEqual(alpha, 2 / (1 + np.sqrt(1 - rho ** 2)))
        self.assertAlmostEqual(beta, 2 * alpha / (1e-3 + 1.0))

    def test_explicit_coefficients_need_both(self):
        self.assertEqual(SolverConfig(twist_alpha=1.5, twist_beta=1.0).twist_coefficients(), (1.5, 1.0))
        with self.assertRaises(PydanticValidationError):
            SolverConfig(twist_alpha=1.5)

    def test_rejects_negative_lambda(self):
        with self.assertRaises(PydanticValidationError):
            SolverConfig(lambda_spatial=-1.0)


class BackpropagateTests(unittest.TestCase):

    def test_refocuses_point_with_unit_amplitude(self):
        geom = Geometry(nx=64, ny=64, depths=(1e-3,), frame_interval=TAU)
        truth = point_object((1, 1, 64, 64), [(0, 0, 30, 25)])
        g = forward(truth, MaskStack.open(64, 64), geom)
        volume = backpropagate(g, geom)
        magnitude = volume.magnitude()[0, 0]
        self.assertEqual(np.unravel_index(np.argmax(magnitude), magnitude.shape), (30, 25))
        self.assertAlmostEqual(float(np.real(volume.data[0, 0, 30, 25])), 1.0, delta=0.1)

    def test_masked_frames(self):
        geom = Geometry(nx=32, ny=32, depths=(0.01, 0.02), frame_count=2, frame_interval=TAU)
        masks = generate_partition_masks(32, 32, 2, 2, seed=0)
        volume = backpropagate(Hologram.zeros(32, 32), geom, masks)
        self.assertEqual(volume.shape, (2, 2, 32, 32))
        self.assertTrue(np.all(volume.data == 0))

    def test_rejects_raw_hologram(self):
        geom = single_plane_geometry(16)
        with self.assertRaises(ValidationError):
            backpropagate(Hologram.zeros(16, 16, HologramKind.BACKGROUND), geom)
