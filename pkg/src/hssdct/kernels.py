"""Convolution kernels, in numba and pure-numpy flavors.

All convolutions here are cross-correlations (no kernel flip) over float64
arrays shaped [B, C, H, W], with reflect padding of (k-1)/2 on each side so
spatial extent is preserved, and optional channel groups. The numba path
accumulates in deterministic loop order; the numpy path builds the same values
from tensordot contractions. Within one backend results are bit-stable run to
run; across backends they may differ in the last ulp because summation order
differs, which is why the equivalence test uses a 1e-12 relative tolerance.

Shape checks live in the tensor-op layer (tensor.conv2d); these functions
assume coherent inputs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend


# ---------------------------------------------------------------- numpy path

def _pad_reflect(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")


def _fold_reflect(g, p, height, width):
    """Adjoint of _pad_reflect: fold pad-region gradients back onto the core."""
    if p == 0:
        return g
    rows = g[:, :, p:p + height, :].copy()
    for i in range(1, p + 1):
        rows[:, :, i, :] += g[:, :, p - i, :]
        rows[:, :, height - 1 - i, :] += g[:, :, p + height - 1 + i, :]
    cols = rows[:, :, :, p:p + width].copy()
    for j in range(1, p + 1):
        cols[:, :, :, j] += rows[:, :, :, p - j]
        cols[:, :, :, width - 1 - j] += rows[:, :, :, p + width - 1 + j]
    return cols


def _conv2d_fwd_np(x, w, pad, groups):
    bsz, cin, height, width = x.shape
    cout, cg, k, _ = w.shape
    og = cout // groups
    xp = _pad_reflect(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B, Cin, H, W, k, k]
    y = np.empty((bsz, cout, height, width), dtype=np.float64)
    for g in range(groups):
        wg = w[g * og:(g + 1) * og]
        xg = win[:, g * cg:(g + 1) * cg]
        # contract over (channel-in-group, ki, kj)
        yg = np.tensordot(wg, xg, axes=([1, 2, 3], [1, 4, 5]))
        y[:, g * og:(g + 1) * og] = np.transpose(yg, (1, 0, 2, 3))
    return np.ascontiguousarray(y)


def _conv2d_gx_np(gy, w, pad, groups, height, width):
    bsz = gy.shape[0]
    cout, cg, k, _ = w.shape
    og = cout // groups
    cin = cg * groups
    gxp = np.zeros((bsz, cin, height + 2 * pad, width + 2 * pad), dtype=np.float64)
    for g in range(groups):
        wg = w[g * og:(g + 1) * og]
        gyg = gy[:, g * og:(g + 1) * og]
        for ki in range(k):
            for kj in range(k):
                # [B, H, W, Cg] from [B, Og, H, W] x [Og, Cg]
                contrib = np.tensordot(gyg, wg[:, :, ki, kj], axes=([1], [0]))
                gxp[:, g * cg:(g + 1) * cg, ki:ki + height, kj:kj + width] += (
                    np.transpose(contrib, (0, 3, 1, 2))
                )
    return np.ascontiguousarray(_fold_reflect(gxp, pad, height, width))


def _conv2d_gw_np(gy, x, pad, groups, k):
    bsz, cin, height, width = x.shape
    cout = gy.shape[1]
    og = cout // groups
    cg = cin // groups
    xp = _pad_reflect(x, pad)
    gw = np.empty((cout, cg, k, k), dtype=np.float64)
    for g in range(groups):
        gyg = gy[:, g * og:(g + 1) * og]
        xg = xp[:, g * cg:(g + 1) * cg]
        for ki in range(k):
            for kj in range(k):
                patch = xg[:, :, ki:ki + height, kj:kj + width]
                gw[g * og:(g + 1) * og, :, ki, kj] = np.tensordot(
                    gyg, patch, axes=([0, 2, 3], [0, 2, 3])
                )
    return gw


# ---------------------------------------------------------------- numba path

if backend.HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _pad_reflect_nb(x, p):  # pragma: no cover - compiled
        bsz, cin, height, width = x.shape
        xp = np.empty(
            (bsz, cin, height + 2 * p, width + 2 * p), dtype=np.float64
        )
        for b in range(bsz):
            for c in range(cin):
                for i in range(-p, height + p):
                    ii = i
                    if ii < 0:
                        ii = -ii
                    elif ii >= height:
                        ii = 2 * height - 2 - ii
                    for j in range(-p, width + p):
                        jj = j
                        if jj < 0:
                            jj = -jj
                        elif jj >= width:
                            jj = 2 * width - 2 - jj
                        xp[b, c, i + p, j + p] = x[b, c, ii, jj]
        return xp

    @njit(cache=True)
    def _fold_reflect_nb(g, p, height, width):  # pragma: no cover - compiled
        bsz, cin, _, wp = g.shape
        rows = np.empty((bsz, cin, height, wp), dtype=np.float64)
        for b in range(bsz):
            for c in range(cin):
                for i in range(height):
                    for j in range(wp):
                        rows[b, c, i, j] = g[b, c, p + i, j]
                for i in range(1, p + 1):
                    for j in range(wp):
                        rows[b, c, i, j] += g[b, c, p - i, j]
                        rows[b, c, height - 1 - i, j] += (
                            g[b, c, p + height - 1 + i, j]
                        )
        out = np.empty((bsz, cin, height, width), dtype=np.float64)
        for b in range(bsz):
            for c in range(cin):
                for i in range(height):
                    for j in range(width):
                        out[b, c, i, j] = rows[b, c, i, p + j]
                    for j in range(1, p + 1):
                        out[b, c, i, j] += rows[b, c, i, p - j]
                        out[b, c, i, width - 1 - j] += (
                            rows[b, c, i, p + width - 1 + j]
                        )
        return out

    # The conv loops below hoist the reflect index math into an explicit pad
    # (or fold) pass so the innermost j loops touch contiguous rows with no
    # branches, which numba turns into vector code.

    @njit(cache=True)
    def _conv2d_fwd_nb(x, w, pad, groups):  # pragma: no cover - compiled
        bsz, cin, height, width = x.shape
        cout, cg, k, _ = w.shape
        og = cout // groups
        xp = _pad_reflect_nb(x, pad) if pad > 0 else x
        y = np.zeros((bsz, cout, height, width), dtype=np.float64)
        for b in range(bsz):
            for o in range(cout):
                c0 = (o // og) * cg
                for c in range(cg):
                    for ki in range(k):
                        for kj in range(k):
                            wv = w[o, c, ki, kj]
                            for i in range(height):
                                for j in range(width):
                                    y[b, o, i, j] += (
                                        wv * xp[b, c0 + c, i + ki, j + kj]
                                    )
        return y

    @njit(cache=True)
    def _conv2d_gx_nb(gy, w, pad, groups, height, width):  # pragma: no cover
        bsz = gy.shape[0]
        cout, cg, k, _ = w.shape
        og = cout // groups
        cin = cg * groups
        gp = np.zeros(
            (bsz, cin, height + 2 * pad, width + 2 * pad), dtype=np.float64
        )
        for b in range(bsz):
            for o in range(cout):
                c0 = (o // og) * cg
                for c in range(cg):
                    for ki in range(k):
                        for kj in range(k):
                            wv = w[o, c, ki, kj]
                            for i in range(height):
                                for j in range(width):
                                    gp[b, c0 + c, i + ki, j + kj] += (
                                        wv * gy[b, o, i, j]
                                    )
        if pad == 0:
            return gp
        return _fold_reflect_nb(gp, pad, height, width)

    @njit(cache=True)
    def _conv2d_gw_nb(gy, x, pad, groups, k):  # pragma: no cover - compiled
        bsz, cin, height, width = x.shape
        cout = gy.shape[1]
        og = cout // groups
        cg = cin // groups
        xp = _pad_reflect_nb(x, pad) if pad > 0 else x
        gw = np.zeros((cout, cg, k, k), dtype=np.float64)
        for b in range(bsz):
            for o in range(cout):
                c0 = (o // og) * cg
                for c in range(cg):
                    for ki in range(k):
                        for kj in range(k):
                            acc = 0.0
                            for i in range(height):
                                for j in range(width):
                                    acc += (
                                        gy[b, o, i, j]
                                        * xp[b, c0 + c, i + ki, j + kj]
                                    )
                            gw[o, c, ki, kj] += acc
        return gw
else:  # pragma: no cover - exercised only on stripped installs
    _pad_reflect_nb = _fold_reflect_nb = None
    _conv2d_fwd_nb = _conv2d_gx_nb = _conv2d_gw_nb = None


# --------------------------------------------------------------- dispatchers

def _conv_choice(which, groups):
    """Resolve 'auto' per call: grouped convolutions go to the loop kernels
    (tensordot pays a per-group dispatch cost that dominates the small
    depthwise shapes), dense ones to BLAS-backed tensordot."""
    if which != "auto":
        return which
    if _conv2d_fwd_nb is None:
        return "numpy"
    return "numba" if groups > 1 else "numpy"


def conv2d_forward(x, w, pad, groups, impl=None):
    which = impl if impl is not None else backend.active()
    which = _conv_choice(which, groups)
    if which == "numba" and _conv2d_fwd_nb is not None:
        return _conv2d_fwd_nb(x, w, pad, groups)
    return _conv2d_fwd_np(x, w, pad, groups)


def conv2d_input_grad(gy, w, pad, groups, height, width, impl=None):
    which = impl if impl is not None else backend.active()
    which = _conv_choice(which, groups)
    if which == "numba" and _conv2d_gx_nb is not None:
        return _conv2d_gx_nb(gy, w, pad, groups, height, width)
    return _conv2d_gx_np(gy, w, pad, groups, height, width)


def conv2d_weight_grad(gy, x, pad, groups, k, impl=None):
    which = impl if impl is not None else backend.active()
    which = _conv_choice(which, groups)
    if which == "numba" and _conv2d_gw_nb is not None:
        return _conv2d_gw_nb(gy, x, pad, groups, k)
    return _conv2d_gw_np(gy, x, pad, groups, k)
