"""Pure-NumPy implementations of the hot kernels.

Semantically identical to the compiled extension in ``_native.pyx``; used
when the extension is unavailable or explicitly disabled.
"""

from __future__ import annotations

import numpy as np

from .. import splines


def ikeda_map(points: np.ndarray, u: float, iterations: int) -> np.ndarray:
    out = np.array(points, dtype=float)
    x, y = out[:, 0], out[:, 1]
    for _ in range(iterations):
        t = 0.4 - 6.0 / (1.0 + x * x + y * y)
        ct, st = np.cos(t), np.sin(t)
        x, y = 1.0 + u * (x * ct - y * st), u * (x * st + y * ct)
    out[:, 0], out[:, 1] = x, y
    return out


def ikeda_inverse_map(points: np.ndarray, u: float, iterations: int) -> np.ndarray:
    out = np.array(points, dtype=float)
    x, y = out[:, 0], out[:, 1]
    for _ in range(iterations):
        xh = (x - 1.0) / u
        yh = y / u
        t = 0.4 - 6.0 / (1.0 + xh * xh + yh * yh)
        ct, st = np.cos(t), np.sin(t)
        x, y = xh * ct + yh * st, -xh * st + yh * ct
    out[:, 0], out[:, 1] = x, y
    return out


def lorenz_rk4(
    points: np.ndarray,
    sigma: float,
    rho: float,
    beta: float,
    step: float,
    n_steps: int,
) -> np.ndarray:
    def field(s):
        x, y, z = s[:, 0], s[:, 1], s[:, 2]
        return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=1)

    state = np.array(points, dtype=float)
    for _ in range(n_steps):
        k1 = field(state)
        k2 = field(state + 0.5 * step * k1)
        k3 = field(state + 0.5 * step * k2)
        k4 = field(state + step * k3)
        state = state + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def rqs_forward(x, xk, yk, d):
    return splines.rqs_generic(x, xk, yk, d, inverse=False)


def rqs_inverse(x, xk, yk, d):
    return splines.rqs_generic(x, xk, yk, d, inverse=True)
