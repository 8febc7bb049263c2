"""Static figures written by the command line."""
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_focus_profiles(path, profiles):
    """``profiles`` maps a label to a FocusProfile."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, profile in profiles.items():
        ax.plot(np.asarray(profile.depths) * 1e3, profile.variance, label=label)
    ax.set_xlabel('distance from sensor (mm)')
    ax.set_ylabel('normalized variance')
    if profiles:
        ax.legend()
    return _save(fig, path)


def plot_tracks(path, tracks):
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    panels = (('x', 'y', 0, 1), ('x', 'z', 0, 2), ('y', 'z', 1, 2))
    for ax, (first, second, i, j) in zip(axes, panels):
        for track in tracks:
            points = track.positions[track.present] * 1e3
            ax.plot(points[:, i], points[:, j], marker='o', markersize=3, label=f'#{track.track_id}')
        ax.set_xlabel(f'{first} (mm)')
        ax.set_ylabel(f'{second} (mm)')
    if tracks:
        axes[0].legend(fontsize='small')
    return _save(fig, path)


def plot_speeds(path, tracks, tau):
    fig, ax = plt.subplots(figsize=(6, 4))
    for track in tracks:
        times = np.arange(track.frame_count) * tau * 1e3
        ax.plot(times, track.speeds(), marker='o', markersize=3, label=f'#{track.track_id}')
    ax.set_xlabel('time (ms)')
    ax.set_ylabel('speed (m/s)')
    if tracks:
        ax.legend(fontsize='small')
    return _save(fig, path)


def plot_psnr(path, rows):
    """``rows`` are benchmark cell results with fraction, dz_m, psnr_bp and psnr_cs."""
    fig, ax = plt.subplots(figsize=(6, 4))
    fractions = sorted({row['fraction'] for row in rows}, reverse=True)
    for color, fraction in zip(plt.rcParams['axes.prop_cycle'].by_key()['color'], fractions):
        cells = sorted((row for row in rows if row['fraction'] == fraction), key=lambda row: row['dz_m'])
        dz = [row['dz_m'] * 1e3 for row in cells]
        ax.plot(dz, [row['psnr_cs'] for row in cells], color=color, label=f'{fraction:.0%} CS')
        ax.plot(dz, [row['psnr_bp'] for row in cells], color=color, linestyle='--', label=f'{fraction:.0%} BP')
    ax.set_xlabel('dz (mm)')
    ax.set_ylabel('PSNR (dB)')
    if rows:
        ax.legend(fontsize='small')
    return _save(fig, path)
