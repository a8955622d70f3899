"""Normalizing flow: RQS coupling layers interleaved with PLU linear layers.

The data-generating direction applies, in order, coupling and PLU pairs and
a final global scale.  Densities are evaluated through the inverse direction
via the change-of-variables formula against a standard normal base.  Every
transform method takes a ``grad`` flag: with ``grad=False`` parameters are
unwrapped to raw arrays and the whole computation stays in NumPy (plus the
compiled spline kernel); with ``grad=True`` it builds an autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import splines
from .autodiff import Tensor
from .rng import RngStream


@dataclass(frozen=True)
class FlowConfig:
    """Architecture hyperparameters of the flow."""

    dim: int
    n_layers: int = 6
    n_bins: int = 8
    depth: int = 8
    width: int = 64
    bound: float = splines.DEFAULT_BOUND


def alternating_masks(dim: int, n_layers: int) -> list[np.ndarray]:
    """Pass-through index sets, flipped each layer so every coordinate moves.

    For n=2 the masks alternate (1,0)/(0,1); for n=3, (1,1,0)/(0,0,1).
    Returned arrays hold the *masked* (conditioning) coordinate indices.
    """
    if dim == 2:
        first, second = np.array([0]), np.array([1])
    elif dim == 3:
        first, second = np.array([0, 1]), np.array([2])
    else:
        half = dim // 2
        first, second = np.arange(half), np.arange(half, dim)
    return [first if layer % 2 == 0 else second for layer in range(n_layers)]


class Mlp:
    """Conditioner network: `depth` GELU hidden layers plus a linear head.

    The head is zero-initialized so a fresh conditioner emits zero raw spline
    parameters, i.e. the identity spline.
    """

    def __init__(self, in_dim: int, out_dim: int, depth: int, width: int,
                 rng: RngStream | None):
        dims = [in_dim] + [width] * depth + [out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            if rng is not None and i < len(dims) - 2:
                w = rng.standard_normal((a, b)) * math.sqrt(2.0 / a)
            else:
                w = np.zeros((a, b))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def __call__(self, x, grad: bool):
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w_ = w if grad else w.data
            b_ = b if grad else b.data
            h = ad.add(ad.matmul(h, w_), b_)
            if i < last:
                h = ad.gelu(h)
        return h


class CouplingLayer:
    """Transforms the unmasked coordinates by a spline conditioned on the rest."""

    def __init__(self, dim: int, mask_idx: np.ndarray, n_bins: int, bound: float,
                 depth: int, width: int, rng: RngStream | None):
        self.dim = dim
        self.mask_idx = np.asarray(mask_idx, dtype=int)
        self.trans_idx = np.setdiff1d(np.arange(dim), self.mask_idx)
        if self.mask_idx.size == 0 or self.trans_idx.size == 0:
            raise ValueError("coupling mask must be neither empty nor full")
        self.n_bins = n_bins
        self.bound = bound
        self.conditioner = Mlp(
            self.mask_idx.size,
            self.trans_idx.size * splines.param_count(n_bins),
            depth,
            width,
            rng,
        )

    def parameters(self) -> list[Tensor]:
        return self.conditioner.parameters()

    def transform(self, z, inverse: bool, grad: bool):
        n_rows = ad.value(z).shape[0]
        z_mask = ad.take_static(z, self.mask_idx, axis=-1)
        raw = self.conditioner(z_mask, grad)
        raw = ad.reshape(raw, (n_rows, self.trans_idx.size, splines.param_count(self.n_bins)))
        xk, yk, d = splines.build_knots(raw, self.n_bins, self.bound)

        z_trans = ad.take_static(z, self.trans_idx, axis=-1)
        y_trans, ld_elem = splines.rqs_apply(z_trans, xk, yk, d, inverse)

        out = ad.add(
            ad.put_static(z_mask, self.mask_idx, self.dim, axis=-1),
            ad.put_static(y_trans, self.trans_idx, self.dim, axis=-1),
        )
        return out, ad.tensor_sum(ld_elem, axis=-1)


class PluLayer:
    """Invertible linear map stored as permutation x lower x upper factors.

    The permutation is fixed at construction; L is unit lower triangular with
    learnable strict-lower entries, U has learnable strict-upper entries and
    a learnable positive diagonal stored in log space.  Initialized to the
    bare permutation (L = U = I).
    """

    def __init__(self, dim: int, permutation: np.ndarray):
        self.dim = dim
        self.permutation = np.asarray(permutation, dtype=int)
        self.p_matrix = np.eye(dim)[self.permutation]
        self.lower_mask = np.tril(np.ones((dim, dim)), -1)
        self.upper_mask = np.triu(np.ones((dim, dim)), 1)
        self.l_raw = Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.u_raw = Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.log_diag = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.l_raw, self.u_raw, self.log_diag]

    def _factors(self, grad: bool):
        l_raw = self.l_raw if grad else self.l_raw.data
        u_raw = self.u_raw if grad else self.u_raw.data
        log_diag = self.log_diag if grad else self.log_diag.data
        eye = np.eye(self.dim)
        lower = ad.add(eye, ad.mul(l_raw, self.lower_mask))
        upper = ad.add(ad.mul(eye, ad.exp(log_diag)), ad.mul(u_raw, self.upper_mask))
        return lower, upper, log_diag

    def transform(self, z, inverse: bool, grad: bool):
        n_rows = ad.value(z).shape[0]
        lower, upper, log_diag = self._factors(grad)
        ld_scalar = ad.tensor_sum(log_diag)
        if inverse:
            a = ad.matmul(z, self.p_matrix)
            b = ad.solve_tri_rows(lower, a, lower=True, unit_diagonal=True)
            out = ad.solve_tri_rows(upper, b, lower=False)
            ld_scalar = ad.mul(-1.0, ld_scalar)
        else:
            w = ad.matmul(self.p_matrix, ad.matmul(lower, upper))
            out = ad.matmul(z, ad.transpose(w))
        log_det = ad.mul(np.ones(n_rows), ld_scalar)
        return out, log_det


class Flow:
    """Composition of coupling/PLU pairs with a learnable global scale."""

    def __init__(self, config: FlowConfig, masks: list[np.ndarray],
                 permutations: list[np.ndarray], rng: RngStream | None,
                 log_scale: float = 0.0):
        if len(masks) != config.n_layers or len(permutations) != config.n_layers:
            raise ValueError("need one mask and one permutation per layer")
        self.config = config
        self.couplings = [
            CouplingLayer(config.dim, m, config.n_bins, config.bound,
                          config.depth, config.width, rng)
            for m in masks
        ]
        self.plus = [PluLayer(config.dim, p) for p in permutations]
        self.log_scale = Tensor(np.asarray(float(log_scale)), requires_grad=True)

    @property
    def dim(self) -> int:
        return self.config.dim

    def parameters(self) -> list[Tensor]:
        params = [self.log_scale]
        for coupling, plu in zip(self.couplings, self.plus):
            params.extend(coupling.parameters())
            params.extend(plu.parameters())
        return params

    def forward(self, u, grad: bool = False):
        """Base-to-data map; returns (x, log-det of the forward Jacobian)."""
        n_rows = ad.value(u).shape[0]
        z, log_det = u, np.zeros(n_rows)
        for coupling, plu in zip(self.couplings, self.plus):
            z, ld = coupling.transform(z, inverse=False, grad=grad)
            log_det = ad.add(log_det, ld)
            z, ld = plu.transform(z, inverse=False, grad=grad)
            log_det = ad.add(log_det, ld)
        log_s = self.log_scale if grad else self.log_scale.data
        z = ad.mul(z, ad.exp(log_s))
        log_det = ad.add(log_det, ad.mul(float(self.dim), ad.mul(np.ones(n_rows), log_s)))
        return z, log_det

    def inverse(self, x, grad: bool = False):
        """Data-to-base map; returns (u, log-det of the inverse Jacobian)."""
        n_rows = ad.value(x).shape[0]
        log_s = self.log_scale if grad else self.log_scale.data
        z = ad.mul(x, ad.exp(ad.mul(-1.0, log_s)))
        log_det = ad.mul(np.ones(n_rows), ad.mul(-float(self.dim), log_s))
        for coupling, plu in zip(reversed(self.couplings), reversed(self.plus)):
            z, ld = plu.transform(z, inverse=True, grad=grad)
            log_det = ad.add(log_det, ld)
            z, ld = coupling.transform(z, inverse=True, grad=grad)
            log_det = ad.add(log_det, ld)
        return z, log_det

    def log_density(self, x, grad: bool = False):
        """Log-density of the flow-induced distribution at each row of x."""
        u, log_det = self.inverse(x, grad=grad)
        base = ad.add(
            ad.mul(-0.5, ad.tensor_sum(ad.square(u), axis=-1)),
            -0.5 * self.dim * math.log(2.0 * math.pi),
        )
        return ad.add(base, log_det)

    def nll(self, x, grad: bool = False):
        """Mean negative log-likelihood of a batch."""
        return ad.mul(-1.0, ad.mean(self.log_density(x, grad=grad)))

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        u = rng.standard_normal((size, self.dim))
        x, _ = self.forward(u, grad=False)
        return x


def build_flow(config: FlowConfig, rng: RngStream, log_scale: float = 0.0) -> Flow:
    """Freshly initialized flow: identity splines, random permutations."""
    masks = alternating_masks(config.dim, config.n_layers)
    init_rng = rng.split("mlp-init")
    perm_rng = rng.split("permutations")
    permutations = [perm_rng.permutation(config.dim) for _ in range(config.n_layers)]
    return Flow(config, masks, permutations, init_rng, log_scale)
