"""Building blocks: windowing, adaptive layer norm, factorized attention.

Feature maps are [C, H, W]. Window partition turns one into a batch of
[n_win, C, w, w] tiles (reflect-padded to a multiple of w), attention runs
per window over token matrices [n_win, N, C] with N = w*w, and the result is
scattered back. The two correlation paths share one Q/V extraction:

  * spa_sc keeps token-to-token structure but evaluates Q (V^T V) / sqrt(d),
    which is algebraically (Q V^T / sqrt(d)) V without the N x N product.
  * spe_sc builds the d x d channel product (Q^T V) / N and re-expands it
    over tokens as ((Q^T V / N) V^T)^T.

Both cost O(N d^2) per window instead of O(N^2 d).
"""

from dataclasses import dataclass
from math import isqrt

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    Tensor,
    add,
    add_bias,
    add_scalar,
    concat,
    conv2d,
    crop_br,
    div,
    expand,
    gelu,
    matmul,
    mul,
    narrow,
    permute,
    reduce_mean,
    reflect_pad_br,
    reshape,
    scale,
    sqrt,
    sub,
)

LN_EPS = 1e-6
RESIDUE_GAMMA = 0.2


class ParamInit:
    """Draws parameters from one deterministic stream, in creation order.

    Weights are uniform on [-a, a) with a = fan_in ** -0.5; biases and
    zero-marked projections are zeros and consume no draws.
    """

    def __init__(self, stream):
        self.stream = stream

    def uniform(self, shape, fan_in):
        a = float(fan_in) ** -0.5
        n = int(np.prod(shape))
        vals = (self.stream.uniform(n) * 2.0 - 1.0) * a
        return Tensor(vals.reshape(shape), requires_grad=True)

    def zeros(self, shape):
        return Tensor(np.zeros(shape), requires_grad=True)


# ------------------------------------------------------------------ windowing

@dataclass(frozen=True)
class WindowLayout:
    """Everything window_reverse needs to undo a partition."""

    window: int
    grid: tuple
    pad: tuple
    height: int
    width: int


def window_partition(f, window):
    """Split [C, H, W] into ([n_win, C, w, w], layout), row-major grid order.

    H and W are reflect-padded up to multiples of w first, which requires
    the pad to stay below the corresponding extent (reflect has no edge
    repeat), i.e. roughly w < 2 * min(H, W).
    """
    w = int(window)
    if w < 1:
        raise ConfigError(f"window_partition: window must be >= 1, got {w}")
    if f.ndim != 3:
        raise DimensionError(f"window_partition: expected [C,H,W], got {f.shape}")
    chans, height, width = f.shape
    pb = (-height) % w
    pr = (-width) % w
    x = reflect_pad_br(f, pb, pr)
    rows = (height + pb) // w
    cols = (width + pr) // w
    x = reshape(x, (chans, rows, w, cols, w))
    x = permute(x, (1, 3, 0, 2, 4))
    wins = reshape(x, (rows * cols, chans, w, w))
    return wins, WindowLayout(w, (rows, cols), (pb, pr), height, width)


def window_reverse(wins, layout):
    """Inverse of window_partition; round trips bit-exactly."""
    w = layout.window
    rows, cols = layout.grid
    if wins.ndim != 4 or wins.shape[0] != rows * cols or wins.shape[2:] != (w, w):
        raise DimensionError(
            f"window_reverse: got {wins.shape}, layout expects"
            f" [{rows * cols},C,{w},{w}]"
        )
    chans = wins.shape[1]
    x = reshape(wins, (rows, cols, chans, w, w))
    x = permute(x, (2, 0, 3, 1, 4))
    x = reshape(x, (chans, rows * w, cols * w))
    return crop_br(x, layout.height, layout.width)


# ------------------------------------------------------- adaptive layer norm

class ILayerNorm:
    """Per-pixel channel normalization modulated by the input's global state.

    Each pixel's channel vector is standardized (mean 0, variance 1 over
    channels, eps inside the sqrt), then scaled and shifted per channel by
    (1 + gamma_hat) and beta_hat. The modulation comes from the input itself:
    global average pool -> Linear -> GELU -> Linear -> split into the two
    vectors. The second linear starts at zero (weights and bias), so at
    initialization this is a plain layer norm; its bias is the learned base
    scale/shift once training moves it.
    """

    def __init__(self, channels, init):
        c = int(channels)
        self.channels = c
        self.w1 = init.uniform((c, c), c)
        self.b1 = init.zeros((c,))
        self.w2 = init.zeros((2 * c, c))
        self.b2 = init.zeros((2 * c,))

    def normalized(self, f):
        """The pre-modulation signal: standardized over channels per pixel."""
        c = self.channels
        mu = reduce_mean(f, axes=(0,))
        centered = sub(f, expand(mu, 0, c))
        var = reduce_mean(mul(centered, centered), axes=(0,))
        sd = sqrt(add_scalar(var, LN_EPS))
        return div(centered, expand(sd, 0, c))

    def forward(self, f):
        c = self.channels
        if f.ndim != 3 or f.shape[0] != c:
            raise DimensionError(
                f"ILayerNorm: expected [{c},H,W], got {f.shape}"
            )
        _, height, width = f.shape
        xhat = self.normalized(f)
        pooled = reshape(reduce_mean(f, axes=(1, 2)), (c, 1))
        h = gelu(add_bias(matmul(self.w1, pooled), self.b1, 0))
        mod = reshape(add_bias(matmul(self.w2, h), self.b2, 0), (2 * c,))
        gamma = narrow(mod, 0, 0, c)
        beta = narrow(mod, 0, c, c)
        scale3 = expand(expand(add_scalar(gamma, 1.0), 1, height), 2, width)
        shift3 = expand(expand(beta, 1, height), 2, width)
        return add(mul(xhat, scale3), shift3)

    def named_params(self):
        return [
            ("mlp_w1", self.w1),
            ("mlp_b1", self.b1),
            ("mlp_w2", self.w2),
            ("mlp_b2", self.b2),
        ]


# ----------------------------------------------------------- Q/V extraction

class SSFE:
    """Shared feature extraction producing Q and V token matrices.

    Channels split in half: one half goes through depthwise 3x3 then
    pointwise 1x1 (local spatial mixing), the other through pointwise only.
    The halves are re-concatenated, flattened to tokens, and projected by two
    independent dense maps into Q and V.
    """

    def __init__(self, channels, init):
        c = int(channels)
        if c < 2 or c % 2:
            raise ConfigError(f"SSFE: channels must be even and >= 2, got {c}")
        self.channels = c
        half = c // 2
        self.dw_w = init.uniform((half, 1, 3, 3), 9)
        self.dw_b = init.zeros((half,))
        self.pa_w = init.uniform((half, half, 1, 1), half)
        self.pa_b = init.zeros((half,))
        self.pb_w = init.uniform((half, half, 1, 1), half)
        self.pb_b = init.zeros((half,))
        self.q_w = init.uniform((c, c), c)
        self.q_b = init.zeros((c,))
        self.v_w = init.uniform((c, c), c)
        self.v_b = init.zeros((c,))

    def forward(self, wins):
        c = self.channels
        if wins.ndim != 4 or wins.shape[1] != c:
            raise DimensionError(f"SSFE: expected [n_win,{c},w,w], got {wins.shape}")
        n_win, _, w, _ = wins.shape
        half = c // 2
        a = narrow(wins, 1, 0, half)
        b = narrow(wins, 1, half, half)
        a = add_bias(conv2d(a, self.dw_w, 1, groups=half), self.dw_b, 1)
        a = add_bias(conv2d(a, self.pa_w, 0), self.pa_b, 1)
        b = add_bias(conv2d(b, self.pb_w, 0), self.pb_b, 1)
        mixed = concat([a, b], 1)
        tokens = permute(reshape(mixed, (n_win, c, w * w)), (0, 2, 1))
        q = add_bias(matmul(tokens, self.q_w), self.q_b, 2)
        v = add_bias(matmul(tokens, self.v_w), self.v_b, 2)
        return q, v

    def named_params(self):
        return [
            ("dw_w", self.dw_w),
            ("dw_b", self.dw_b),
            ("pa_w", self.pa_w),
            ("pa_b", self.pa_b),
            ("pb_w", self.pb_w),
            ("pb_b", self.pb_b),
            ("q_w", self.q_w),
            ("q_b", self.q_b),
            ("v_w", self.v_w),
            ("v_b", self.v_b),
        ]


# ------------------------------------------------------- correlation paths

def _swap_last(t):
    if t.ndim == 2:
        return permute(t, (1, 0))
    if t.ndim == 3:
        return permute(t, (0, 2, 1))
    raise DimensionError(f"expected 2-D or 3-D token matrix, got {t.shape}")


def _check_qv(q, v):
    if q.ndim not in (2, 3) or q.shape != v.shape:
        raise DimensionError(
            f"Q and V must be matching [.., N, d] matrices, got {q.shape} vs {v.shape}"
        )


def pool_value_tokens(v):
    """Average-pool value tokens 2x2 on their w x w window grid.

    Tokens must form a square grid with even side; (w/2)^2 tokens come back.
    """
    n, d = v.shape[-2], v.shape[-1]
    w = isqrt(n)
    if w * w != n:
        raise ConfigError(f"token compression: {n} tokens do not form a square grid")
    if w % 2:
        raise ConfigError(f"token compression needs an even window side, got {w}")
    half = w // 2
    if v.ndim == 2:
        grid = reshape(v, (half, 2, half, 2, d))
        pooled = reduce_mean(grid, axes=(1, 3))
        return reshape(pooled, (half * half, d))
    batch = v.shape[0]
    grid = reshape(v, (batch, half, 2, half, 2, d))
    pooled = reduce_mean(grid, axes=(2, 4))
    return reshape(pooled, (batch, half * half, d))


def spa_sc(q, v, compress=False):
    """Spatial self-correlation, factorized: Q (V^T V) / sqrt(d)."""
    _check_qv(q, v)
    d = q.shape[-1]
    vc = pool_value_tokens(v) if compress else v
    gram = matmul(_swap_last(vc), vc)
    return scale(matmul(q, gram), 1.0 / np.sqrt(d))


def naive_spa_sc(q, v, compress=False):
    """Reference evaluation in attention order: (Q V^T / sqrt(d)) V.

    Same map as spa_sc up to float rounding, but materializes the N x N
    token product. Exists as the correctness oracle and benchmark baseline.
    """
    _check_qv(q, v)
    d = q.shape[-1]
    vc = pool_value_tokens(v) if compress else v
    att = scale(matmul(q, _swap_last(vc)), 1.0 / np.sqrt(d))
    return matmul(att, vc)


def spe_sc(q, v):
    """Spectral self-correlation: ((Q^T V / N) V^T)^T, token-major output."""
    _check_qv(q, v)
    n = q.shape[-2]
    gram = scale(matmul(_swap_last(q), v), 1.0 / n)
    return _swap_last(matmul(gram, _swap_last(v)))


# ------------------------------------------------------------- feed-forward

class SSFA:
    """Token feed-forward: dense -> GELU -> dense, channel-preserving.

    The output projection starts at zero so the whole attention layer
    contributes nothing until training moves it.
    """

    def __init__(self, channels, init):
        c = int(channels)
        self.channels = c
        self.w1 = init.uniform((c, c), c)
        self.b1 = init.zeros((c,))
        self.w2 = init.zeros((c, c))
        self.b2 = init.zeros((c,))

    def forward(self, tokens):
        last = tokens.ndim - 1
        h = gelu(add_bias(matmul(tokens, self.w1), self.b1, last))
        return add_bias(matmul(h, self.w2), self.b2, last)

    def named_params(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


# ------------------------------------------------------------------ one layer

class SSCL:
    """One windowed correlation layer with a residual around the whole thing.

    norm -> window partition -> Q,V -> spa_sc + spe_sc -> feed-forward ->
    window reverse -> add input back. Identity at initialization because the
    feed-forward output projection is zero.
    """

    def __init__(self, channels, init, compress=False):
        self.channels = int(channels)
        self.norm = ILayerNorm(channels, init)
        self.ssfe = SSFE(channels, init)
        self.ssfa = SSFA(channels, init)
        self.compress = bool(compress)

    def forward(self, f, window):
        c = self.channels
        if f.ndim != 3 or f.shape[0] != c:
            raise DimensionError(f"SSCL: expected [{c},H,W], got {f.shape}")
        normed = self.norm.forward(f)
        wins, layout = window_partition(normed, window)
        q, v = self.ssfe.forward(wins)
        att = add(spa_sc(q, v, self.compress), spe_sc(q, v))
        y = self.ssfa.forward(att)
        n_win = wins.shape[0]
        w = layout.window
        y = reshape(permute(y, (0, 2, 1)), (n_win, c, w, w))
        return add(f, window_reverse(y, layout))

    def named_params(self):
        out = []
        for name, p in self.norm.named_params():
            out.append((f"norm.{name}", p))
        for name, p in self.ssfe.named_params():
            out.append((f"ssfe.{name}", p))
        for name, p in self.ssfa.named_params():
            out.append((f"ssfa.{name}", p))
        return out


# ------------------------------------------------------------------ one block

class HDRTB:
    """Three SSCLs with dense aggregation and a damped residual.

    The three intermediate features are concatenated on channels, fused back
    to C by a 1x1 conv (zero-initialized), scaled by a fixed 0.2, and added
    to the block input. Window sizes come per call as a non-decreasing
    3-element schedule.
    """

    def __init__(self, channels, init, compress=False):
        c = int(channels)
        self.channels = c
        self.layers = [SSCL(c, init, compress) for _ in range(3)]
        self.fuse_w = init.zeros((c, 3 * c, 1, 1))
        self.fuse_b = init.zeros((c,))
        self.gamma = RESIDUE_GAMMA

    def forward(self, f, schedule):
        if len(schedule) != 3:
            raise ConfigError(
                f"HDRTB: window schedule must have 3 entries, got {list(schedule)}"
            )
        ws = [int(w) for w in schedule]
        if not (ws[0] <= ws[1] <= ws[2]):
            raise ConfigError(f"HDRTB: windows must be non-decreasing, got {ws}")
        f1 = self.layers[0].forward(f, ws[0])
        f2 = self.layers[1].forward(f1, ws[1])
        f3 = self.layers[2].forward(f2, ws[2])
        stacked = concat([f1, f2, f3], 0)
        fused = add_bias(conv2d(stacked, self.fuse_w, 0), self.fuse_b, 0)
        return add(f, scale(fused, self.gamma))

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_params():
                out.append((f"layer{i}.{name}", p))
        out.append(("fuse_w", self.fuse_w))
        out.append(("fuse_b", self.fuse_b))
        return out
