"""Composite training loss: L1 + spectral angle + stationary-wavelet terms.

All three parts run through the tape, so the composite is differentiable in
the prediction. Targets are treated as constants.
"""

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    Tensor,
    absolute,
    acos,
    add,
    add_scalar,
    div,
    mul,
    reduce_mean,
    reduce_sum,
    roll2d,
    scale,
    sqrt,
    sub,
)

DEFAULT_WEIGHTS = (0.01, 0.01)

_NORM_EPS = 1e-8
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def _pair(pred, target, need_bands=False):
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"loss: prediction {pred.shape} vs target {target.shape}"
        )
    if pred.ndim != 3:
        raise DimensionError(f"loss: expected [C,H,W], got {pred.shape}")
    if need_bands and pred.shape[0] < 2:
        raise DimensionError(
            f"loss: spectral angle needs >= 2 bands, got {pred.shape[0]}"
        )
    return pred, target


def l1_loss(pred, target):
    """Mean absolute error over all elements."""
    pred, target = _pair(pred, target)
    return reduce_mean(absolute(sub(pred, target)))


def sam_loss(pred, target):
    """Mean per-pixel spectral angle, in radians.

    The cosine between the two channel vectors at each pixel is guarded by
    1e-8 added to the norm product, and its value passes through the clamped
    arc cosine (see tensor.acos), which bounds the angle away from exact 0
    and pi and keeps the gradient finite.
    """
    pred, target = _pair(pred, target, need_bands=True)
    dot = reduce_sum(mul(pred, target), axes=(0,))
    norm_p = sqrt(reduce_sum(mul(pred, pred), axes=(0,)))
    norm_t = sqrt(reduce_sum(mul(target, target), axes=(0,)))
    denom = add_scalar(mul(norm_p, norm_t), _NORM_EPS)
    cosine = div(dot, denom)
    return reduce_mean(acos(cosine))


def swt_subbands(x):
    """Level-1 undecimated Haar transform of the last two axes.

    The a-trous filters are (1,1)/sqrt(2) and (1,-1)/sqrt(2) with periodic
    boundary (circular shift), applied along rows then columns; returns
    (LL, LH, HL, HH) where the first letter is the row-direction filter.
    Every subband keeps the input's shape.
    """
    shifted_r = roll2d(x, -1, 0)
    low_r = scale(add(x, shifted_r), _INV_SQRT2)
    high_r = scale(sub(x, shifted_r), _INV_SQRT2)
    low_rc = roll2d(low_r, 0, -1)
    high_rc = roll2d(high_r, 0, -1)
    ll = scale(add(low_r, low_rc), _INV_SQRT2)
    lh = scale(sub(low_r, low_rc), _INV_SQRT2)
    hl = scale(add(high_r, high_rc), _INV_SQRT2)
    hh = scale(sub(high_r, high_rc), _INV_SQRT2)
    return ll, lh, hl, hh


def swt_loss(pred, target):
    """Sum of mean absolute subband differences over the four Haar subbands."""
    pred, target = _pair(pred, target)
    bands_p = swt_subbands(pred)
    bands_t = swt_subbands(target)
    terms = [reduce_mean(absolute(sub(p, t))) for p, t in zip(bands_p, bands_t)]
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def loss_breakdown(pred, target, weights=DEFAULT_WEIGHTS):
    """All loss parts at once: dict with l1, sam, swt, total Tensors.

    total is composed exactly as (l1 + w_sam * sam) + w_swt * swt.
    """
    w_sam, w_swt = (float(weights[0]), float(weights[1]))
    if w_sam < 0 or w_swt < 0:
        raise ConfigError(f"loss weights must be >= 0, got {weights}")
    pred, target = _pair(pred, target, need_bands=True)
    l1 = l1_loss(pred, target)
    sam = sam_loss(pred, target)
    swt = swt_loss(pred, target)
    total = add(add(l1, scale(sam, w_sam)), scale(swt, w_swt))
    return {"l1": l1, "sam": sam, "swt": swt, "total": total}


def total_loss(pred, target, weights=DEFAULT_WEIGHTS):
    """The scalar training objective."""
    return loss_breakdown(pred, target, weights)["total"]
