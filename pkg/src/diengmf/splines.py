"""Monotone rational-quadratic splines with identity tails.

A spline on [-B, B] is described by three knot arrays sharing leading shape:
`xk`, `yk` of K+1 knot positions each and `d` of K+1 positive knot
derivatives whose boundary entries equal 1, making the curve C^1 with the
identity outside the interval.  The forward direction evaluates the rational
quadratic directly; the inverse solves the per-bin quadratic in closed form,
so both directions are exact and differentiable.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

DEFAULT_BOUND = 5.0
MIN_BIN_FRACTION = 1e-3
MIN_DERIVATIVE = 1e-3
# softplus(RAW_SHIFT) + MIN_DERIVATIVE == 1, so zero raw outputs give unit slope
RAW_SHIFT = math.log(math.expm1(1.0 - MIN_DERIVATIVE))


def param_count(n_bins: int) -> int:
    """Raw conditioner outputs per transformed dimension."""
    return 3 * n_bins + 1


def build_knots(raw, n_bins: int, bound: float = DEFAULT_BOUND):
    """Map raw conditioner outputs to valid knot arrays.

    `raw` has shape (..., 3K+1): K width logits, K height logits, K+1
    derivative logits.  Widths and heights go through a softmax rescaled to
    cover [-bound, bound] with a floor of ``1e-3 * 2 * bound`` per bin;
    interior derivatives through a shifted softplus with floor 1e-3.  The two
    boundary derivative channels are ignored: those derivatives are pinned to
    1 to match the identity tails.  Zero raw input yields the identity spline.
    """
    k = n_bins
    width_logits = ad.take_static(raw, np.arange(k), axis=-1)
    height_logits = ad.take_static(raw, np.arange(k, 2 * k), axis=-1)
    deriv_logits = ad.take_static(raw, np.arange(2 * k + 1, 3 * k), axis=-1)

    span = 2.0 * bound
    floor = MIN_BIN_FRACTION
    widths = ad.mul(span, ad.add(ad.mul(1.0 - k * floor, ad.softmax_last(width_logits)), floor))
    heights = ad.mul(span, ad.add(ad.mul(1.0 - k * floor, ad.softmax_last(height_logits)), floor))

    lead = ad.value(raw).shape[:-1]
    edge = np.full(lead + (1,), -bound)
    xk = ad.concat([edge, ad.add(ad.cumsum(widths, axis=-1), -bound)], axis=-1)
    yk = ad.concat([edge, ad.add(ad.cumsum(heights, axis=-1), -bound)], axis=-1)

    ones = np.ones(lead + (1,))
    interior = ad.add(ad.softplus(ad.add(deriv_logits, RAW_SHIFT)), MIN_DERIVATIVE)
    d = ad.concat([ones, interior, ones], axis=-1)
    return xk, yk, d


def rqs_apply(x, xk, yk, d, inverse: bool = False):
    """Evaluate the spline (or its inverse) elementwise.

    Returns ``(y, log_det)`` where ``log_det`` is the log-derivative of the
    applied map (negated derivative log for the inverse direction).  Points
    outside the knot interval pass through unchanged with zero log-det.
    Plain-ndarray inputs are routed to the compiled kernel when available.
    """
    if not (ad.is_tensor(x) or ad.is_tensor(xk) or ad.is_tensor(yk) or ad.is_tensor(d)):
        from . import _kernels

        fn = _kernels.rqs_inverse if inverse else _kernels.rqs_forward
        xv = np.asarray(x, dtype=float)
        flat = xv.reshape(-1)
        kshape = (-1, ad.value(xk).shape[-1])
        y, ld = fn(
            np.ascontiguousarray(flat),
            np.ascontiguousarray(ad.value(xk).reshape(kshape)),
            np.ascontiguousarray(ad.value(yk).reshape(kshape)),
            np.ascontiguousarray(ad.value(d).reshape(kshape)),
        )
        return y.reshape(xv.shape), ld.reshape(xv.shape)
    return rqs_generic(x, xk, yk, d, inverse)


def rqs_generic(x, xk, yk, d, inverse: bool = False):
    """Backend-independent spline evaluation (ndarrays or Tensors)."""
    xv = ad.value(x)
    src = ad.value(yk) if inverse else ad.value(xk)
    n_bins = src.shape[-1] - 1

    inside = (xv > src[..., 0]) & (xv < src[..., -1])
    idx = np.clip((src[..., :-1] <= xv[..., None]).sum(axis=-1) - 1, 0, n_bins - 1)
    # park outside points at their (clipped) bin midpoint so the formulas
    # below stay finite; their outputs are discarded by the final select
    mid = 0.5 * (
        np.take_along_axis(src, idx[..., None], -1)[..., 0]
        + np.take_along_axis(src, idx[..., None] + 1, -1)[..., 0]
    )
    v = ad.where(inside, x, mid)

    x_lo = ad.gather_last(xk, idx)
    x_hi = ad.gather_last(xk, idx + 1)
    y_lo = ad.gather_last(yk, idx)
    y_hi = ad.gather_last(yk, idx + 1)
    d_lo = ad.gather_last(d, idx)
    d_hi = ad.gather_last(d, idx + 1)

    width = ad.sub(x_hi, x_lo)
    height = ad.sub(y_hi, y_lo)
    slope = ad.div(height, width)
    stiff = ad.sub(ad.add(d_hi, d_lo), ad.mul(2.0, slope))

    if inverse:
        delta = ad.sub(v, y_lo)
        qa = ad.add(ad.mul(height, ad.sub(slope, d_lo)), ad.mul(delta, stiff))
        qb = ad.sub(ad.mul(height, d_lo), ad.mul(delta, stiff))
        qc = ad.mul(-1.0, ad.mul(slope, delta))
        disc = ad.sub(ad.square(qb), ad.mul(4.0, ad.mul(qa, qc)))
        xi = ad.div(ad.mul(2.0, qc), ad.mul(-1.0, ad.add(qb, ad.sqrt(disc))))
        out_in = ad.add(x_lo, ad.mul(xi, width))
    else:
        xi = ad.div(ad.sub(v, x_lo), width)

    q = ad.mul(xi, ad.sub(1.0, xi))
    denom = ad.add(slope, ad.mul(stiff, q))
    if not inverse:
        numer = ad.mul(height, ad.add(ad.mul(slope, ad.square(xi)), ad.mul(d_lo, q)))
        out_in = ad.add(y_lo, ad.div(numer, denom))

    deriv_num = ad.add(
        ad.mul(d_hi, ad.square(xi)),
        ad.add(ad.mul(2.0, ad.mul(slope, q)), ad.mul(d_lo, ad.square(ad.sub(1.0, xi)))),
    )
    log_deriv = ad.sub(
        ad.add(ad.mul(2.0, ad.log(slope)), ad.log(deriv_num)), ad.mul(2.0, ad.log(denom))
    )

    out = ad.where(inside, out_in, x)
    sign = -1.0 if inverse else 1.0
    log_det = ad.where(inside, ad.mul(sign, log_deriv), np.zeros_like(xv))
    return out, log_det


def identity_raw(shape, n_bins: int) -> np.ndarray:
    """Raw parameter block that maps to the identity spline."""
    return np.zeros(shape + (param_count(n_bins),))


def random_knots(rng, shape, n_bins: int, bound: float = DEFAULT_BOUND, scale: float = 1.0):
    """Valid random knot arrays for tests: constraint-mapped Gaussian raws."""
    raw = scale * rng.standard_normal(shape + (param_count(n_bins),))
    return build_knots(raw, n_bins, bound)
