"""Post-processing of traces: circle fits, peaks, path length, attitude columns."""
from __future__ import annotations

import math

import numpy as np


def fit_circle(x, y) -> tuple[float, float, float]:
    """Algebraic least-squares circle (Kasa fit). Returns (cx, cy, radius)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
    b = x * x + y * y
    (cx, cy, c), *_ = np.linalg.lstsq(a, b, rcond=None)
    return float(cx), float(cy), float(math.sqrt(c + cx * cx + cy * cy))


def circle_residual(x, y) -> tuple[float, float]:
    """(radius, max |distance - radius| / radius) of the best-fit circle."""
    cx, cy, r = fit_circle(x, y)
    d = np.hypot(np.asarray(x) - cx, np.asarray(y) - cy)
    return r, float(np.max(np.abs(d - r)) / r)


def path_length(x, y, z) -> float:
    p = np.column_stack([x, y, z])
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def nose_up(qw, qx, qy, qz) -> np.ndarray:
    """Vectorised pitch elevation of body x above the horizontal."""
    return np.arcsin(np.clip(2.0 * (qx * qz - qw * qy), -1.0, 1.0))


def yaw(qw, qx, qy, qz) -> np.ndarray:
    return np.arctan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))


def extrema(t, s) -> tuple[np.ndarray, np.ndarray]:
    """Local maxima and minima of ``s`` refined by a parabola through three samples.

    Returns ``(times, values)`` in time order.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    d = np.diff(s)
    idx = np.flatnonzero((np.sign(d[:-1]) != np.sign(d[1:])) & (d[:-1] != 0)) + 1
    times, values = [], []
    for i in idx:
        y0, y1, y2 = s[i - 1], s[i], s[i + 1]
        denom = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        times.append(t[i] + off * (t[i + 1] - t[i]))
        values.append(y1 - 0.25 * (y0 - y2) * off)
    return np.array(times), np.array(values)
