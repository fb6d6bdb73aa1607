"""
Delay optimization against the wrapped sum-squared coupling distance.

Goal values are affine in the delays, ``v = r0 + A @ d``.  The distance is
``D(d) = sum_g wrap(v_g)**2`` plus an optional ``w * sum(d)``.  Delays are
optimized one at a time, last to first.  Along a single delay ``D`` is
piecewise quadratic between the points where some ``v_g`` crosses
``pi (mod 2 pi)``, so each one-dimensional problem is solved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DelayConfig:
    threshold: float = 1e-12
    max_sweeps: int = 200
    goal_distance: float = 0.0
    time_penalty: float = 0.0
    max_delay: float | None = None
    acceptance: float = 1e-6
    modulus: float = 2 * math.pi


@dataclass
class DelayResult:
    delays: np.ndarray
    distance: float
    residuals: np.ndarray
    sweeps: int
    history: list[float]


def wrapped(v: np.ndarray, modulus: float = 2 * math.pi) -> np.ndarray:
    """Representative of ``v`` modulo ``modulus`` in (-modulus/2, modulus/2]."""
    h = modulus / 2
    return h - np.mod(h - v, modulus)


def distance(a, r0, d, modulus=2 * math.pi, time_penalty=0.0) -> float:
    res = wrapped(r0 + a @ d, modulus)
    return float(res @ res + time_penalty * np.sum(d))


def _line_minimum(c, slope, lo, hi, modulus, w):
    """Exact minimizer of ``sum wrap(c + slope*x)**2 + w*x`` on [lo, hi]."""
    active = slope != 0
    base = float(np.sum(wrapped(c[~active], modulus) ** 2))
    c, slope = c[active], slope[active]

    def value(x):
        return float(np.sum(wrapped(c + slope * x, modulus) ** 2)) + base + w * x

    if c.size == 0:
        return (lo if w >= 0 else hi), value(lo if w >= 0 else hi)
    h = modulus / 2
    breaks = [lo, hi]
    for ci, si in zip(c, slope):
        # c + s x = h + k*modulus
        k_lo, k_hi = sorted(((ci + si * lo - h) / modulus, (ci + si * hi - h) / modulus))
        for k in range(math.ceil(k_lo), math.floor(k_hi) + 1):
            x = (h + k * modulus - ci) / si
            if lo < x < hi:
                breaks.append(x)
    breaks = sorted(set(breaks))
    candidates = list(breaks)
    denom = float(slope @ slope)
    for x0, x1 in zip(breaks[:-1], breaks[1:]):
        mid = 0.5 * (x0 + x1)
        k = np.round((c + slope * mid - wrapped(c + slope * mid, modulus)) / modulus)
        x = -(w / 2 + float(slope @ (c - k * modulus))) / denom
        if x0 <= x <= x1:
            candidates.append(x)
    vals = [value(x) for x in candidates]
    i = int(np.argmin(vals))
    return candidates[i], vals[i]


def optimize_delays(a, r0, d0, config: DelayConfig = DelayConfig()) -> DelayResult:
    """Coordinate descent from the last delay to the first.

    Updates are accepted only when they do not increase the objective;
    stops when a sweep improves it by less than ``config.threshold``, when
    the distance drops below ``config.goal_distance`` or after
    ``config.max_sweeps`` sweeps.
    """
    a = np.asarray(a, dtype=float).reshape(len(r0), len(d0))
    r0 = np.asarray(r0, dtype=float)
    d = np.array(d0, dtype=float)
    hi = np.inf if config.max_delay is None else config.max_delay
    d = np.clip(d, 0.0, hi)
    w = config.time_penalty
    cur = distance(a, r0, d, config.modulus, w)
    history = [cur]
    sweeps = 0
    if a.size and r0.size:
        upper = hi if math.isfinite(hi) else _auto_upper(a, config.modulus)
        for sweeps in range(1, config.max_sweeps + 1):
            start = cur
            for i in range(d.size - 1, -1, -1):
                rest = r0 + a @ d - a[:, i] * d[i]
                x, _ = _line_minimum(rest, a[:, i], 0.0, upper, config.modulus, w)
                trial = d.copy()
                trial[i] = x
                val = distance(a, r0, trial, config.modulus, w)
                if val <= cur:
                    d, cur = trial, val
            history.append(cur)
            if start - cur < config.threshold or cur - w * d.sum() < config.goal_distance:
                break
    res = wrapped(r0 + a @ d, config.modulus) if r0.size else np.zeros(0)
    return DelayResult(d, float(res @ res), res, sweeps, history)


def _auto_upper(a, modulus) -> float:
    """A bound that lets every goal wind through one full period."""
    s = np.abs(a)
    s = s[s > 0]
    return float(modulus / s.min()) if s.size else 0.0
