"""Analytic pulse shapes used as inputs to the decomposer and compiler."""

from __future__ import annotations

import math

import numpy as np

from .spinsys import PulseShape


def hard_pulse(
    channel: str, angle: float, duration: float, phase: float = 0.0, n_steps: int = 1
) -> PulseShape:
    """Constant-amplitude rotation by ``angle`` radians about ``phase``."""
    amp = angle / (2 * math.pi * duration)
    a = np.zeros((n_steps, 1, 2))
    a[:, 0, 0] = amp * math.cos(phase)
    a[:, 0, 1] = amp * math.sin(phase)
    return PulseShape(np.full(n_steps, duration / n_steps), a, (channel,))


def gaussian_pulse(
    channel: str,
    angle: float,
    duration: float,
    n_steps: int = 100,
    phase: float = 0.0,
    offset: float = 0.0,
    truncation: float = 2.5,
) -> PulseShape:
    """Truncated Gaussian rotation, optionally selective for a spin at ``offset`` Hz.

    The envelope spans ``+-truncation`` standard deviations and is scaled so
    its area gives ``angle``.  A nonzero ``offset`` adds the phase ramp
    ``2*pi*offset*(t - T/2)`` that keeps the drive resonant with a spin
    precessing at ``offset`` in the channel frame.  Referencing the ramp to
    the pulse centre makes a symmetric envelope act symmetrically.
    """
    dt = duration / n_steps
    t = (np.arange(n_steps) + 0.5) * dt
    sigma = duration / (2 * truncation)
    env = np.exp(-0.5 * ((t - duration / 2) / sigma) ** 2)
    env *= angle / (2 * math.pi * env.sum() * dt)
    phi = phase + 2 * math.pi * offset * (t - duration / 2)
    a = np.stack([env * np.cos(phi), env * np.sin(phi)], axis=-1)[:, None, :]
    return PulseShape(np.full(n_steps, dt), a, (channel,))


def concatenate(*pulses: PulseShape) -> PulseShape:
    """Play pulses back to back; all must use the same channels."""
    channels = pulses[0].channels
    if any(p.channels != channels for p in pulses):
        raise ValueError("pulses use different channels")
    return PulseShape(
        np.concatenate([p.durations for p in pulses]),
        np.concatenate([p.amplitudes for p in pulses]),
        channels,
    )
