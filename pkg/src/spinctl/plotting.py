"""Optional matplotlib figures written next to the delimited data files."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise RuntimeError("--plot needs matplotlib; install the 'plot' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_history(history, path: Path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(np.arange(len(history)), np.maximum(1 - np.asarray(history), 1e-16))
    ax.set_xlabel("iteration")
    ax.set_ylabel("1 - fitness")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pulse(pulse, path: Path):
    plt = _pyplot()
    t = np.concatenate([[0.0], np.cumsum(pulse.durations)]) * 1e3
    fig, axes = plt.subplots(len(pulse.channels), 1, figsize=(6, 2.2 * len(pulse.channels)), squeeze=False)
    for c, (ax, ch) in enumerate(zip(axes[:, 0], pulse.channels)):
        for q, label in enumerate(("u_x", "u_y")):
            ax.stairs(pulse.amplitudes[:, c, q], t, label=label)
        ax.set_ylabel(f"{ch} (Hz)")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_scan(values, hs, worst, axis: str, path: Path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(values, hs, label="HS fidelity")
    ax.plot(values, worst, "--", label="worst-case fidelity")
    ax.set_xlabel("RF multiplier" if axis == "rf" else "offset (Hz)")
    ax.set_ylabel("fidelity")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_schedule(schedule, path: Path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 2.5))
    names = []
    for it in schedule.pulses():
        if it.name not in names:
            names.append(it.name)
        y = names.index(it.name)
        ax.broken_barh([(it.start * 1e3, max(it.duration * 1e3, 1e-3))], (y - 0.4, 0.8))
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("time (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
