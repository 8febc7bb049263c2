"""
TV-regularized inversion of the coded-exposure sensing model.

Minimizes 1/2 ||g - A o||^2 + lambda * TV(o) with the two-step iterative
shrinkage/thresholding recursion, using a dual-projection TV denoiser as
the proximal step. Axis order of every volume is (frame, depth, y, x).
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .exceptions import NumericalAbort, ValidationError
from .forward import operator_norm_estimate, sensing_operator
from .formats import write_csv
from .models import HologramKind, MaskStack, Object4D
from .schemas import SolverConfig

logger = logging.getLogger(__name__)

AXES = (0, 1, 2, 3)
TRACE_COLUMNS = ('iteration', 'data_fit', 'tv', 'objective', 'time_ms')


def tv_weights(cfg):
    """Overall TV weight and per-axis weights (frame, depth, y, x) for ``cfg``."""
    if cfg.lambda_spatial > 0:
        return cfg.lambda_spatial, (cfg.lambda_temporal / cfg.lambda_spatial, 1.0, 1.0, 1.0)
    return cfg.lambda_temporal, (1.0, 0.0, 0.0, 0.0)


def _grad(u, axis):
    # forward difference, zero at the last index
    return np.diff(u, axis=axis, append=np.take(u, [-1], axis=axis))


def _grad_adjoint(p, axis):
    q = p.copy()
    last = [slice(None)] * p.ndim
    last[axis] = -1
    q[tuple(last)] = 0
    return -np.diff(q, axis=axis, prepend=0)


def _tv_real(u, weights):
    squared = np.zeros_like(u)
    for axis, w in zip(AXES, weights):
        if w and u.shape[axis] > 1:
            squared += (w * _grad(u, axis)) ** 2
    return float(np.sqrt(squared).sum())


def _data(obj):
    return obj.data if isinstance(obj, Object4D) else np.asarray(obj)


def tv_norm(obj, cfg=None):
    """Weighted isotropic 4D TV; real and imaginary parts contribute separately."""
    cfg = cfg or SolverConfig()
    _, weights = tv_weights(cfg)
    data = _data(obj)
    total = _tv_real(np.real(data).astype(np.float64), weights)
    if np.iscomplexobj(data):
        total += _tv_real(np.imag(data).astype(np.float64), weights)
    return total


def _denoise_real(f, weight, weights, iterations):
    active = [(axis, w) for axis, w in zip(AXES, weights) if w and f.shape[axis] > 1]
    if not active:
        return f
    step = 1.0 / (4.0 * sum(w ** 2 for _, w in active))
    p = [np.zeros_like(f) for _ in active]
    scaled = f / weight

    def divergence():
        out = np.zeros_like(f)
        for (axis, w), component in zip(active, p):
            out += w * _grad_adjoint(component, axis)
        return out

    for _ in range(iterations):
        residual = scaled - divergence()
        p = [component + step * w * _grad(residual, axis)
             for (axis, w), component in zip(active, p)]
        norm = np.sqrt(sum(component ** 2 for component in p))
        shrink = np.maximum(norm, 1.0)
        p = [component / shrink for component in p]
    u = f - weight * divergence()

    def objective(v):
        return 0.5 * np.sum((v - f) ** 2) + weight * _tv_real(v, weights)

    if objective(u) > objective(f):
        return f
    return u


def tv_denoise(obj, weight, cfg=None):
    """
    Approximate prox of ``weight * TV``: argmin_u 1/2 ||u - obj||^2 + weight TV(u).

    Dual projected-gradient iteration (``cfg.tv_inner_iters`` steps) on the
    weighted 4D difference operator. The output never has a larger prox
    objective than the input, and the volume mean is preserved.
    """
    cfg = cfg or SolverConfig()
    if weight < 0:
        raise ValidationError(f"denoising weight must be >= 0, got {weight}")
    data = _data(obj)
    if weight == 0:
        return Object4D(data) if isinstance(obj, Object4D) else data
    _, weights = tv_weights(cfg)
    real = _denoise_real(np.real(data).astype(np.float64), weight, weights, cfg.tv_inner_iters)
    if np.iscomplexobj(data):
        out = real + 1j * _denoise_real(np.imag(data).astype(np.float64), weight, weights,
                                        cfg.tv_inner_iters)
    else:
        out = real
    return Object4D(out) if isinstance(obj, Object4D) else out


@dataclass
class TraceRecord:
    iteration: int
    data_fit: float
    tv: float
    objective: float
    step_norm: float
    time_ms: float


@dataclass
class SolveTrace:
    records: List[TraceRecord] = field(default_factory=list)
    lambda_spatial: float = 0.0
    lambda_temporal: float = 0.0
    norm: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    stop_reason: str = 'max_iters'

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        return self.records[-1].iteration if self.records else 0

    def objectives(self):
        return np.array([r.objective for r in self.records])

    def record(self, iteration, data_fit, tv, objective, step_norm, started):
        entry = TraceRecord(iteration, float(data_fit), float(tv), float(objective),
                            float(step_norm), 1000.0 * (time.perf_counter() - started))
        self.records.append(entry)
        logger.debug("iter %d: data_fit=%.6g tv=%.6g objective=%.6g step=%.3g",
                     iteration, data_fit, tv, objective, step_norm)
        return entry

    def to_csv(self, path):
        rows = [(r.iteration, r.data_fit, r.tv, r.objective, r.time_ms) for r in self.records]
        return write_csv(path, TRACE_COLUMNS, rows)


def resolve_lambdas(op, g, cfg):
    """Absolute (lambda_spatial, lambda_temporal) for the data ``g``."""
    if cfg.lambda_mode == 'absolute':
        return cfg.lambda_spatial, cfg.lambda_temporal
    scale = float(np.max(np.abs(op.apply_adjoint(g)))) if g.size else 0.0
    return cfg.lambda_spatial * scale, cfg.lambda_temporal * scale


def _check_finite(name, value, trace):
    if not np.all(np.isfinite(value)):
        trace.stop_reason = 'numerical_abort'
        raise NumericalAbort(f"non-finite {name} after {trace.iterations} iterations", trace)


def twist_reconstruct(g, masks, geom, cfg=None, init=None):
    """
    Two-step IST reconstruction of an Object4D from a subtracted hologram.

    Returns ``(Object4D, SolveTrace)``; the trace holds one record per
    iteration, starting with the initial point as iteration 0.
    """
    cfg = cfg or SolverConfig()
    if g.kind is not HologramKind.SUBTRACTED:
        raise ValidationError(f"reconstruction needs a subtracted hologram, got {g.kind.value}")
    op = sensing_operator(masks, geom)
    data = g.data
    if data.shape != (geom.ny, geom.nx):
        raise ValidationError(f"hologram {data.shape} does not match geometry {(geom.ny, geom.nx)}")
    if init is not None:
        init.check_geometry(geom)
        x = np.array(init.data)
    else:
        x = np.zeros(op.object_shape, dtype=np.complex128)
    if cfg.real_only:
        x = np.real(x).astype(np.complex128)

    started = time.perf_counter()
    norm = operator_norm_estimate(masks, geom, cfg.norm_iterations, cfg.norm_seed)
    lam_s, lam_t = resolve_lambdas(op, data, cfg)
    alpha, beta = cfg.twist_coefficients()
    trace = SolveTrace(lambda_spatial=lam_s, lambda_temporal=lam_t, norm=norm, alpha=alpha, beta=beta)
    tv_cfg = cfg.model_copy(update={'lambda_spatial': lam_s, 'lambda_temporal': lam_t})
    lam, _ = tv_weights(tv_cfg)

    def evaluate(volume):
        residual = data - op.apply(volume)
        fit = 0.5 * float(np.sum(residual ** 2))
        tv = tv_norm(volume, tv_cfg) if lam > 0 else 0.0
        return residual, fit, tv, fit + lam * tv

    residual, fit, tv, objective = evaluate(x)
    trace.record(0, fit, tv, objective, 0.0, started)
    first = objective
    if objective == 0 or norm == 0:
        trace.stop_reason = 'zero_objective' if objective == 0 else 'zero_operator'
        return Object4D(x), trace

    c = norm ** 2
    denoise_weight = lam / c

    def shrink(volume, residual):
        z = volume + op.apply_adjoint(residual) / c
        out = tv_denoise(z, denoise_weight, tv_cfg) if lam > 0 else z
        return np.real(out).astype(np.complex128) if cfg.real_only else out

    x_prev = x
    for k in range(1, cfg.max_iters + 1):
        gamma = shrink(x, residual)
        _check_finite('iterate', gamma, trace)
        if k == 1:
            x_new = gamma
        else:
            x_new = (1 - alpha) * x_prev + (alpha - beta) * x + beta * gamma
        new_residual, new_fit, new_tv, new_objective = evaluate(x_new)
        _check_finite('objective', new_objective, trace)

        if cfg.enforce_monotone and new_objective > objective and k > 1:
            x_new = gamma
            new_residual, new_fit, new_tv, new_objective = evaluate(x_new)
        if cfg.enforce_monotone and new_objective > objective + 1e-12 * first:
            trace.stop_reason = 'stalled'
            logger.info("TwIST stalled at iteration %d (objective %.6g)", k, objective)
            break

        step = float(np.linalg.norm(x_new - x))
        trace.record(k, new_fit, new_tv, new_objective, step, started)
        change = abs(objective - new_objective) / max(objective, np.finfo(float).tiny)
        x_prev, x = x, x_new
        residual, objective = new_residual, new_objective
        if change < cfg.tol:
            trace.stop_reason = 'converged'
            break

    logger.info("TwIST finished after %d iterations (%s): objective %.6g -> %.6g, lambda=(%.3g, %.3g)",
                trace.iterations, trace.stop_reason, first, objective, lam_s, lam_t)
    return Object4D(x), trace


def backpropagate(g, geom, masks=None):
    """
    Conjugate-kernel refocusing of ``g`` to every depth and frame.

    With masks, frame t back-propagates M_t * g, rescaled by the frame's
    open fraction; without masks every frame holds the same refocused volume.
    The result is normalized so that a real in-focus object of amplitude a
    refocuses to about a.
    """
    if g.kind is not HologramKind.SUBTRACTED:
        raise ValidationError(f"back-propagation needs a subtracted hologram, got {g.kind.value}")
    if masks is None:
        masks = MaskStack(np.ones((geom.frame_count, geom.ny, geom.nx), dtype=np.uint8))
    op = sensing_operator(masks, geom)
    volume = op.apply_adjoint(g.data) / op.scale
    densities = masks.densities()
    for t, density in enumerate(densities):
        if density > 0:
            volume[t] /= geom.frame_interval * density
        else:
            volume[t] = 0
    return Object4D(volume)
