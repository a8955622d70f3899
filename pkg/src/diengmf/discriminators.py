"""Physicality discriminators and resampling safeguards.

A discriminator maps states to {0, 1}: accept (physical) or reject.  Three
kinds are provided: the exact-inverse Ikeda attractor test, the trained-flow
density threshold, and an always-accept baseline that reduces
discriminator-informed resampling to plain mixture resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import IkedaParams
from .errors import ConfigurationError
from .flow import Flow


@dataclass(frozen=True)
class ResampleSafeguards:
    """Escape hatches for low-acceptance resampling.

    `baseline_accept` is the probability of keeping a rejected candidate
    anyway; after `max_rejections` failed attempts a particle accepts its
    next candidate unconditionally, which in the worst case reduces the
    scheme to plain mixture resampling.
    """

    baseline_accept: float = 0.0
    max_rejections: int = 100

    def __post_init__(self):
        if not 0.0 <= self.baseline_accept < 1.0:
            raise ConfigurationError("baseline_accept must lie in [0, 1)")
        if self.max_rejections < 0:
            raise ConfigurationError("max_rejections must be nonnegative")


def acceptance_probability(d: int, safeguards: ResampleSafeguards, attempt: int) -> float:
    """Probability of keeping a candidate given its discriminator verdict.

    Accepted candidates (d == 1) always pass; rejected ones pass with the
    baseline probability until the attempt counter exceeds `max_rejections`,
    after which they pass unconditionally.
    """
    if attempt < 1:
        raise ValueError("attempt counts from 1")
    if d:
        return 1.0
    if attempt > safeguards.max_rejections:
        return 1.0
    return safeguards.baseline_accept


class AlwaysAccept:
    """Trivial discriminator: everything is physical."""

    name = "always-accept"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.ones(np.atleast_2d(points).shape[0], dtype=bool)


class ClassicalIkeda:
    """Accepts points whose m-fold inverse image stays in the absorbing ball.

    Any point on the attractor passes for every m >= 0; as m grows the accept
    region shrinks toward the attractor.  m = 0 tests ball membership itself.
    """

    def __init__(self, m: int = 6, params: IkedaParams = IkedaParams()):
        if m < 0:
            raise ConfigurationError("m must be nonnegative")
        if params.u == 0.0 and m > 0:
            raise ConfigurationError("inverse iterations require u != 0")
        self.m = m
        self.params = params
        self.name = f"classical-ikeda-m{m}"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if self.m > 0:
            pts = _kernels.ikeda_inverse_map(pts, self.params.u, self.m)
        return np.linalg.norm(pts, axis=1) <= self.params.ball_radius


class FlowDensity:
    """Accepts points whose flow log-density clears a calibrated threshold.

    The comparison happens in log space; the boundary accepts.
    """

    name = "normalizing-flow"

    def __init__(self, flow: Flow, log_tau: float):
        if log_tau is None or not np.isfinite(log_tau):
            raise ConfigurationError("flow discriminator requires a calibrated threshold")
        self.flow = flow
        self.log_tau = float(log_tau)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.flow.log_density(pts, grad=False) >= self.log_tau


def nf_discriminate(points: np.ndarray, flow: Flow, log_tau: float) -> np.ndarray:
    """Functional form of the flow-density test; returns a 0/1 array."""
    return FlowDensity(flow, log_tau).evaluate(points).astype(int)
