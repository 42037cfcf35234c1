"""Static SVG plots of phase extraction diagnostics."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .phases import PhaseTrack, SourceSeries


def plot_phase_fit(
    source: SourceSeries,
    track: PhaseTrack,
    path: str,
    fps: int = 60,
    title: str = "",
) -> None:
    """Conditioned source, fitted sinusoid, and phase angle over time."""
    n = len(track.phi)
    t = np.arange(n) / fps
    fit = track.amplitude * np.sin(track.phi) + track.offset
    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    axes[0].plot(t, source.values[:n], label="conditioned source", lw=0.8)
    axes[0].plot(t, fit, label="sinusoid fit", lw=1.2)
    axes[0].set_ylabel("normalized signal")
    axes[0].legend(loc="upper right", fontsize=8)
    if title:
        axes[0].set_title(title)
    axes[1].plot(t, track.phi, lw=0.8, color="tab:green")
    axes[1].set_ylabel("phase (rad)")
    axes[1].set_xlabel("time (s)")
    axes[1].set_ylim(-0.2, 2 * np.pi + 0.2)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_phase_features(features: np.ndarray, path: str, fps: int = 60) -> None:
    """The 8 phase channels (4 bones x sin/cos) of a clip."""
    n = features.shape[0]
    t = np.arange(n) / fps
    names = ["l_hand", "r_hand", "l_foot", "r_foot"]
    fig, axes = plt.subplots(4, 1, figsize=(10, 8), sharex=True)
    for b, ax in enumerate(axes):
        ax.plot(t, features[:, 2 * b], lw=0.8, label="sin")
        ax.plot(t, features[:, 2 * b + 1], lw=0.8, label="cos")
        ax.set_ylabel(names[b])
        if b == 0:
            ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
