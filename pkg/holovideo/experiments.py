import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings
import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from . import plots
from .analysis import detect_particles, focus_profile, track_particles, velocities
from .exceptions import ConfigError, HolovideoError, MaskValidationError, NumericalAbort, ValidationError
from .formats import (load_hologram, load_image, read_geometry, read_mask_stack, read_raster,
                      read_raster_header, save_preview, write_csv, write_detections_csv, write_geometry,
                      write_mask_stack, write_profile_csv, write_raster, write_tracks_csv)
from .forward import crop_roi, downsample, subtract_background
from .manifest import RunManifest
from .masks import calibrate_masks, generate_bernoulli_masks, generate_partition_masks, validate_masks
from .models import Hologram, HologramKind, Object4D
from .scenes import (build_scene, ground_truth_tracks, populate_scene, psnr, scene_geometry,
                     simulate_capture, two_plane_depths, two_plane_spec)
from .schemas import NoiseSpec, SceneKind
from .solver import backpropagate, twist_reconstruct

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.pgm', '.bmp', '.tif', '.tiff', '.jpg', '.jpeg')


@dataclass
class CommandRequest:
    command: str
    config: object
    out_dir: Path
    jobs: int = 1
    quiet: bool = False
    manifest: RunManifest = field(default=None)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.manifest is None:
            self.manifest = RunManifest(self.command, self.config, self.out_dir)

    def output(self, *parts):
        return self.out_dir.joinpath(*parts)


# Shared helpers

def grid_size(config):
    geometry, scene = config.geometry, config.scene
    nx = geometry.nx or (scene.nx if scene else None)
    ny = geometry.ny or (scene.ny if scene else None)
    if nx is None or ny is None:
        raise ConfigError("set geometry.nx/ny or a scene to define the grid")
    return nx, ny


def _preprocess(holo, reconstruct):
    if reconstruct.downsample > 1:
        holo = downsample(holo, reconstruct.downsample)
    if reconstruct.roi is not None:
        holo = crop_roi(holo, *reconstruct.roi)
    return holo


def _load_frames(config, paths):
    frames = []
    for path in paths:
        path = config.resolve_path(path)
        frames.append(load_image(path) if path.suffix.lower() in IMAGE_SUFFIXES else read_raster(path).data)
    return np.stack([np.asarray(frame, dtype=np.float64) for frame in frames])


def build_masks(config, nx, ny, frame_count=None, preprocess=None):
    """Mask stack described by the ``masks`` section for an nx x ny grid."""
    masks = config.masks
    seed = config.seed if masks.seed is None else masks.seed
    frame_count = masks.frame_count if frame_count is None else frame_count
    if masks.kind == 'partition':
        return generate_partition_masks(nx, ny, frame_count, masks.superpixel, seed)
    if masks.kind == 'bernoulli':
        return generate_bernoulli_masks(nx, ny, frame_count, masks.superpixel, seed, masks.density)
    if masks.kind == 'file':
        return read_mask_stack(config.resolve_path(masks.path), masks.threshold)
    captured = _load_frames(config, masks.captured)
    background = _load_frames(config, [masks.background])[0]
    if preprocess is not None:
        captured = np.stack([preprocess(Hologram(frame, HologramKind.BACKGROUND)).data for frame in captured])
        background = preprocess(Hologram(background, HologramKind.BACKGROUND)).data
    return calibrate_masks(captured, background, masks.threshold)


def _raster_meta(path):
    if Path(path).suffix.lower() in IMAGE_SUFFIXES:
        return {}
    header, _ = read_raster_header(path)
    return header


def _write_previews(request, name, volume):
    if not request.config.reconstruct.previews:
        return
    for t in range(volume.frame_count):
        for n in range(volume.depth_count):
            path = request.output('previews', name, f'frame_{t:02d}_depth_{n:03d}.png')
            request.manifest.add(save_preview(path, volume.data[t, n]))


# Commands

def cmd_masks(request):
    """Generate and validate a mask stack."""
    config = request.config
    nx, ny = grid_size(config)
    frame_count = config.geometry.frame_count or config.masks.frame_count
    stack = build_masks(config, nx, ny, frame_count)
    report = validate_masks(stack)
    request.manifest.add(*write_mask_stack(request.output('masks'), stack))
    report_path = request.output('mask_report.json')
    report_path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + '\n')
    request.manifest.add(report_path)
    for line in report.failures():
        logger.warning("mask check: %s", line)
    if config.masks.kind == 'partition' and not report.passed:
        raise MaskValidationError(report)
    return stack, report


def _simulate_one(request, scene, out):
    config = request.config
    geom = config.geometry.build(nx=scene.nx, ny=scene.ny, pitch=scene.pitch, depths=scene.depths,
                                 frame_count=scene.frame_count, frame_interval=scene.frame_interval)
    masks = build_masks(config, geom.nx, geom.ny, geom.frame_count)
    masks.check_geometry(geom)
    truth = build_scene(scene)
    noise = config.noise
    if noise.seed is None:
        noise = noise.model_copy(update={'seed': config.seed})
    raw, background = simulate_capture(truth, masks, geom, noise)
    subtracted = subtract_background(raw, background)
    meta = {'pitch': geom.pitch, 'wavelength': geom.wavelength}
    add = request.manifest.add
    add(write_raster(out / 'raw.chv', raw, **meta))
    add(write_raster(out / 'background.chv', background, **meta))
    add(write_raster(out / 'subtracted.chv', subtracted, **meta))
    add(write_raster(out / 'truth.chv', truth, **meta))
    add(write_geometry(out / 'geometry.json', geom))
    add(*write_mask_stack(out / 'masks', masks))
    if scene.kind is SceneKind.MOVING_PARTICLES:
        add(write_tracks_csv(out / 'truth_tracks.csv', ground_truth_tracks(scene)))
    logger.info("simulated %s: %d frames, %d planes, hologram range [%.3g, %.3g]",
                scene.kind.value, geom.frame_count, geom.depth_count,
                subtracted.data.min(), subtracted.data.max())
    return truth, raw, background


def cmd_simulate(request):
    """Build a synthetic scene and simulate its coded-exposure capture."""
    config = request.config
    if config.scene is None:
        raise ConfigError("the simulate command needs a scene section")
    scene = populate_scene(config.resolved_scene(), config.seed)
    if not config.dz_sweep:
        return [_simulate_one(request, scene, request.out_dir)]
    if len(scene.depths) < 2:
        raise ConfigError("a dz sweep needs a scene with at least two planes")
    results = []
    for dz in config.dz_sweep:
        depths = two_plane_depths(scene.depths[0], dz, len(scene.depths) - 2)
        swept = scene.model_copy(update={'depths': depths})
        results.append(_simulate_one(request, swept, request.output(f'dz_{dz * 1e3:g}mm')))
    return results


def load_input_hologram(config):
    """Subtracted hologram and its pitch from the reconstruct inputs."""
    reconstruct = config.reconstruct
    if reconstruct.hologram:
        path = config.resolve_path(reconstruct.hologram)
        holo = load_hologram(path, HologramKind.SUBTRACTED)
    elif reconstruct.raw:
        path = config.resolve_path(reconstruct.raw)
        raw = load_hologram(path, HologramKind.RAW)
        background = load_hologram(config.resolve_path(reconstruct.background), HologramKind.BACKGROUND)
        holo = subtract_background(raw, background)
    else:
        raise ConfigError("reconstruct needs a hologram or raw + background input")
    pitch = _raster_meta(path).get('pitch_m')
    holo = _preprocess(holo, reconstruct)
    if pitch is not None:
        pitch *= reconstruct.downsample
    return holo, pitch


def cmd_reconstruct(request):
    """Back-propagation and/or TwIST reconstruction of a subtracted hologram."""
    config = request.config
    reconstruct = config.reconstruct
    holo, pitch = load_input_hologram(config)
    ny, nx = holo.shape
    masks = build_masks(config, nx, ny, config.geometry.frame_count,
                        preprocess=lambda image: _preprocess(image, reconstruct))
    geom = config.geometry.build(nx=nx, ny=ny, pitch=pitch, frame_count=masks.frame_count)
    masks.check_geometry(geom)
    request.manifest.add(write_geometry(request.output('geometry.json'), geom))
    meta = {'pitch': geom.pitch, 'wavelength': geom.wavelength}
    results = {}

    if reconstruct.method in ('bp', 'both'):
        bp = backpropagate(holo, geom, masks)
        request.manifest.add(write_raster(request.output('bp.chv'), bp, **meta))
        _write_previews(request, 'bp', bp)
        results['bp'] = bp

    if reconstruct.method in ('cs', 'both'):
        try:
            cs, trace = twist_reconstruct(holo, masks, geom, config.solver)
        except NumericalAbort as exc:
            if exc.trace is not None:
                request.manifest.add(exc.trace.to_csv(request.output('trace.csv')))
            raise
        request.manifest.add(trace.to_csv(request.output('trace.csv')))
        request.manifest.add(write_raster(request.output('cs.chv'), cs, **meta))
        _write_previews(request, 'cs', cs)
        request.manifest.extra.update({
            'lambda_spatial': trace.lambda_spatial,
            'lambda_temporal': trace.lambda_temporal,
            'operator_norm': trace.norm,
            'iterations': trace.iterations,
            'stop_reason': trace.stop_reason,
        })
        results['cs'] = cs
        results['trace'] = trace
    return results


def _analysis_geometry(config, volume_path, volume):
    sidecar = Path(volume_path).with_name('geometry.json')
    fallbacks = {}
    if sidecar.exists():
        fallbacks = read_geometry(sidecar).model_dump()
    fallbacks.update({'ny': volume.shape[2], 'nx': volume.shape[3], 'frame_count': volume.frame_count})
    pitch = _raster_meta(volume_path).get('pitch_m')
    if pitch is not None:
        fallbacks.setdefault('pitch', pitch)
    geom = config.geometry.build(**fallbacks)
    volume.check_geometry(geom)
    return geom


def cmd_analyze(request):
    """Focus profiles, particle detection, tracking and velocities of a volume."""
    config = request.config
    analysis = config.analysis
    if not analysis.volume:
        raise ConfigError("analyze needs analysis.volume")
    path = config.resolve_path(analysis.volume)
    volume = read_raster(path)
    if not isinstance(volume, Object4D):
        raise ValidationError(f"{path} does not hold a volume")
    geom = _analysis_geometry(config, path, volume)
    add = request.manifest.add

    profiles = {}
    for x, y in analysis.pixels:
        profile = focus_profile(volume, analysis.frame, (x, y), analysis.window, geom)
        profiles[f'({x}, {y})'] = profile
        add(write_profile_csv(request.output(f'profile_x{x}_y{y}.csv'), profile))
    if profiles:
        add(plots.plot_focus_profiles(request.output('focus.png'), profiles))

    tracks = []
    if analysis.detect:
        detections = detect_particles(volume, analysis.window, analysis.reject_threshold, geom,
                                      analysis.correlation, analysis.min_peak_fraction)
        tracks = [velocities(track, geom.frame_interval)
                  for track in track_particles(detections, analysis.max_jump)]
        add(write_detections_csv(request.output('detections.csv'), detections))
        add(write_tracks_csv(request.output('tracks.csv'), tracks))
        add(plots.plot_tracks(request.output('tracks.png'), tracks))
        add(plots.plot_speeds(request.output('speeds.png'), tracks, geom.frame_interval))
        request.manifest.extra['track_count'] = len(tracks)
    return profiles, tracks


# Benchmark

PSNR_COLUMNS = ('cell', 'fraction', 'frames', 'dz_m', 'psnr_bp', 'psnr_cs', 'iterations', 'status')


def run_cell(config, index, fraction, dz):
    """One (fraction, dz) benchmark cell: simulate, reconstruct with BP and CS, score both."""
    benchmark = config.benchmark
    frame_count = int(round(1 / fraction))
    result = {'cell': index, 'fraction': fraction, 'frames': frame_count, 'dz_m': dz}
    try:
        scene = two_plane_spec(dz, nx=benchmark.nx, ny=benchmark.ny, frame_count=frame_count,
                               pitch=config.geometry.pitch or settings.SIMULATION_PITCH,
                               first_plane=benchmark.first_plane,
                               intermediate_planes=benchmark.intermediate_planes,
                               frame_interval=config.geometry.frame_interval or settings.FRAME_INTERVAL)
        geom = scene_geometry(scene, wavelength=config.geometry.wavelength,
                              pad_factor=config.geometry.pad_factor,
                              band_limited=config.geometry.band_limited)
        masks = generate_partition_masks(geom.nx, geom.ny, frame_count, config.masks.superpixel, config.seed)
        truth = build_scene(scene)
        noise = config.noise if config.noise.seed is not None else NoiseSpec(
            model=config.noise.model, sigma=config.noise.sigma, seed=config.seed + index)
        raw, background = simulate_capture(truth, masks, geom, noise)
        subtracted = subtract_background(raw, background)
        bp = backpropagate(subtracted, geom, masks)
        cs, trace = twist_reconstruct(subtracted, masks, geom, config.solver)
        result.update(psnr_bp=psnr(bp, truth), psnr_cs=psnr(cs, truth),
                      iterations=trace.iterations, status='ok')
    except HolovideoError as exc:
        logger.warning("benchmark cell %d (fraction %g, dz %g) failed: %s", index, fraction, dz, exc)
        result.update(psnr_bp=None, psnr_cs=None, iterations=None, status=f'failed: {exc}')
    except Exception as exc:
        logger.exception("benchmark cell %d (fraction %g, dz %g) raised", index, fraction, dz)
        result.update(psnr_bp=None, psnr_cs=None, iterations=None, status=f'failed: {exc}')
    return result


def _json_safe(result):
    """Non-finite scores become null; strict JSON has no infinities."""
    return {key: None if isinstance(value, float) and not np.isfinite(value) else value
            for key, value in result.items()}


def cmd_benchmark(request):
    """PSNR sweep of BP and CS over subsampling fraction and plane spacing."""
    config = request.config
    cells = config.benchmark.cells()
    jobs = Parallel(n_jobs=request.jobs, return_as='generator')(
        delayed(run_cell)(config, index, fraction, dz) for index, fraction, dz in cells)
    results = []
    for result in tqdm(jobs, total=len(cells), desc='benchmark', disable=request.quiet):
        path = request.output('cells', f"cell_{result['cell']:03d}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_json_safe(result), indent=2, sort_keys=True, allow_nan=False) + '\n')
        request.manifest.add(path)
        results.append(result)
    results.sort(key=lambda result: result['cell'])
    rows = [tuple(result[column] for column in PSNR_COLUMNS) for result in results]
    request.manifest.add(write_csv(request.output('psnr_table.csv'), PSNR_COLUMNS, rows))
    finished = [result for result in results if result['status'] == 'ok']
    request.manifest.add(plots.plot_psnr(request.output('psnr.png'), finished))
    request.manifest.extra['failed_cells'] = len(results) - len(finished)
    return results
