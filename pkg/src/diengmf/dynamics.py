"""Test dynamical systems and the scalar range observation model.

Two systems: the Ikeda map (2-d, discrete, exactly invertible) and the
Lorenz '63 equations (3-d, integrated with fixed-step RK4 or Tsit5).  Both
are propagated noise-free; all stochasticity lives in the observations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, NonInvertibleError
from .rng import RngStream

IKEDA_U = 0.9
LORENZ_FIXED_POINT = np.array([6.0 * np.sqrt(2.0), 6.0 * np.sqrt(2.0), 27.0])

# Tsitouras (2011) 5th-order explicit Runge-Kutta tableau, fixed step.
_TSIT5_C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
_TSIT5_A = [
    np.array([]),
    np.array([0.161]),
    np.array([-0.008480655492356989, 0.335480655492357]),
    np.array([2.8971530571054935, -6.359448489975075, 4.3622954328695815]),
    np.array([5.325864828439257, -11.748883564062828, 7.4955393428898365,
              -0.09249506636175525]),
    np.array([5.86145544294642, -12.92096931784711, 8.159367898576159,
              -0.071584973281401, -0.028269050394068383]),
    np.array([0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
              -3.290069515436081, 2.324710524099774]),
]
_TSIT5_B = np.array([0.09646076681806523, 0.01, 0.4798896504144996,
                     1.379008574103742, -3.290069515436081, 2.324710524099774, 0.0])


@dataclass(frozen=True)
class IkedaParams:
    """Bifurcation parameter of the Ikeda map; chaotic at the default 0.9."""

    u: float = IKEDA_U

    def __post_init__(self):
        if not 0.0 <= self.u < 1.0:
            raise ConfigurationError(f"ikeda u must lie in [0, 1), got {self.u}")

    @property
    def ball_radius(self) -> float:
        """Radius of the absorbing ball containing the attractor."""
        return float(np.sqrt(1.0 / (1.0 - self.u)))


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if min(self.sigma, self.rho, self.beta) <= 0:
            raise ConfigurationError("lorenz parameters must be positive")


def ikeda_forward(x: np.ndarray, params: IkedaParams = IkedaParams()) -> np.ndarray:
    """One forward iteration; accepts a single point (2,) or a batch (M, 2)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(x))
    out = _kernels.ikeda_map(pts, params.u, 1)
    return out[0] if single else out


def ikeda_inverse(x: np.ndarray, params: IkedaParams = IkedaParams()) -> np.ndarray:
    """One exact inverse iteration; requires u != 0."""
    if params.u == 0.0:
        raise NonInvertibleError("ikeda map with u = 0 collapses to a point")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(x))
    out = _kernels.ikeda_inverse_map(pts, params.u, 1)
    return out[0] if single else out


def lorenz_vector_field(x: np.ndarray, params: Lorenz63Params = Lorenz63Params()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            params.sigma * (x2 - x1),
            x1 * (params.rho - x3) - x2,
            x1 * x2 - params.beta * x3,
        ],
        axis=-1,
    )


def _substep_count(dt: float, h: float) -> int:
    n = dt / h
    if n <= 0 or abs(n - round(n)) > 1e-9:
        raise ConfigurationError(f"dt={dt} must be a positive multiple of h={h}")
    return int(round(n))


def integrate(
    x0: np.ndarray,
    params: Lorenz63Params,
    dt: float,
    h: float = 0.01,
    method: str = "rk4",
) -> np.ndarray:
    """Advance Lorenz '63 states by `dt` with fixed internal step `h`.

    `method` is "rk4" (default) or "tsit5"; both are deterministic fixed-step
    schemes and resolve this system far below filtering error at h = 0.01.
    """
    n_steps = _substep_count(dt, h)
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(x0))
    if method == "rk4":
        out = _kernels.lorenz_rk4(pts, params.sigma, params.rho, params.beta, h, n_steps)
    elif method == "tsit5":
        out = _tsit5(pts, params, h, n_steps)
    else:
        raise ConfigurationError(f"unknown integrator {method!r}")
    return out[0] if single else out


def _tsit5(points: np.ndarray, params: Lorenz63Params, h: float, n_steps: int) -> np.ndarray:
    state = np.array(points, dtype=float)
    stages = [None] * 7
    for _ in range(n_steps):
        for i in range(7):
            xi = state
            if i:
                incr = sum(a * k for a, k in zip(_TSIT5_A[i], stages[:i]))
                xi = state + h * incr
            stages[i] = lorenz_vector_field(xi, params)
        state = state + h * sum(b * k for b, k in zip(_TSIT5_B, stages) if b != 0.0)
    return state


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Scalar range measurement ||x - center|| with additive N(0, R) noise.

    `noise_var` of zero is permitted for noise-free tests only.
    """

    center: np.ndarray
    noise_var: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.noise_var < 0:
            raise ConfigurationError("noise_var must be nonnegative")

    def observe(self, x: np.ndarray) -> np.ndarray:
        """Noise-free range; accepts (n,) or (M, n)."""
        diff = np.asarray(x, dtype=float) - self.center
        return np.linalg.norm(diff, axis=-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Row Jacobian(s) of the range map, shape (n,) or (M, n).

        At the center the Jacobian is undefined; a zero row is returned with
        a warning so a measure-zero particle cannot abort a filter run.
        """
        x = np.asarray(x, dtype=float)
        diff = np.atleast_2d(x) - self.center
        norms = np.linalg.norm(diff, axis=-1, keepdims=True)
        degenerate = norms[:, 0] == 0.0
        if degenerate.any():
            warnings.warn("range Jacobian requested at the observation center; using 0")
            norms = np.where(norms == 0.0, 1.0, norms)
        rows = diff / norms
        rows[degenerate] = 0.0
        return rows[0] if x.ndim == 1 else rows


def range_observe(x: np.ndarray, model: ObservationModel) -> np.ndarray:
    return model.observe(x)


def range_jacobian(x: np.ndarray, model: ObservationModel) -> np.ndarray:
    return model.jacobian(x)


@dataclass(frozen=True)
class Propagator:
    """Noise-free forward model: `dt` map iterations (Ikeda) or time units (Lorenz)."""

    system: str
    dt: float = 1.0
    h: float = 0.01
    method: str = "rk4"
    ikeda: IkedaParams = field(default_factory=IkedaParams)
    lorenz: Lorenz63Params = field(default_factory=Lorenz63Params)

    def __post_init__(self):
        if self.system == "ikeda":
            if self.dt <= 0 or abs(self.dt - round(self.dt)) > 1e-9:
                raise ConfigurationError("ikeda dt must be a positive integer iteration count")
        elif self.system == "lorenz63":
            _substep_count(self.dt, self.h)
        else:
            raise ConfigurationError(f"unknown system {self.system!r}")

    @property
    def dim(self) -> int:
        return 2 if self.system == "ikeda" else 3

    def propagate(self, states: np.ndarray) -> np.ndarray:
        """Advance one assimilation step; accepts (n,) or (M, n)."""
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        pts = np.ascontiguousarray(np.atleast_2d(states))
        if self.system == "ikeda":
            out = _kernels.ikeda_map(pts, self.ikeda.u, int(round(self.dt)))
        else:
            out = integrate(pts, self.lorenz, self.dt, self.h, self.method)
        return out[0] if single else out


def simulate_truth(
    rng: RngStream,
    x0: np.ndarray,
    propagator: Propagator,
    steps: int,
    obs: ObservationModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic truth trajectory plus noisy observations.

    Returns ``(truth, observations)`` with shapes (steps, n) and (steps,);
    row k holds the state after k+1 propagation steps from `x0` and its
    observation ``h(x_k) + eta_k`` with eta drawn from `rng`.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    x = np.asarray(x0, dtype=float)
    truth = np.empty((steps, x.shape[0]))
    for k in range(steps):
        x = propagator.propagate(x)
        truth[k] = x
    noise = np.sqrt(obs.noise_var) * rng.standard_normal(steps)
    return truth, obs.observe(truth) + noise
