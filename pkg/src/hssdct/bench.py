"""Complexity verification: analytic FLOP counts and measured scaling.

FLOPs are counted for matmul-shaped work only (a matmul [m,k]x[k,n] costs
2mkn; a convolution is the equivalent matmul at 2 multiply-adds per tap).
Elementwise work, norms, and pooling are not counted. These are the numbers
the scaling claims are stated in, so they are computed exactly with integer
arithmetic.

Timing uses perf_counter_ns with warmup runs discarded and the median taken
over the repeats. The exponent of wall time versus token count is the
least-squares slope in log-log space over the largest half of the grid,
where per-call overhead no longer matters.
"""

import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from . import backend, kernels
from .blocks import naive_spa_sc, spa_sc, spe_sc
from .errors import BenchError, ConfigError
from .rng import Xoshiro256StarStar
from .tensor import Tensor, add

VARIANTS = ("factorized", "naive", "compressed")


# ------------------------------------------------------------- FLOP counting

def flops_matmul(m, k, n):
    return 2 * int(m) * int(k) * int(n)


def flops_attention(n_tokens, d, variant="factorized"):
    """Cost of one window's spa + spe correlation, matmul terms only."""
    n, d = int(n_tokens), int(d)
    spe = flops_matmul(d, n, d) + flops_matmul(d, d, n)
    if variant == "naive":
        spa = flops_matmul(n, d, n) + flops_matmul(n, n, d)
    elif variant == "factorized":
        spa = flops_matmul(d, n, d) + flops_matmul(n, d, d)
    elif variant == "compressed":
        m = n // 4  # 2x2 token pooling
        spa = flops_matmul(d, m, d) + flops_matmul(n, d, d)
    else:
        raise ConfigError(f"unknown attention variant {variant!r}")
    return spa + spe


def _flops_conv(cout, cin_per_group, k, positions):
    return 2 * int(cout) * int(cin_per_group) * int(k) * int(k) * int(positions)


def _flops_sscl(c, height, width, window, variant):
    hp = -(-height // window) * window
    wp = -(-width // window) * window
    n_win = (hp // window) * (wp // window)
    positions = hp * wp
    n = window * window
    half = c // 2
    total = flops_matmul(c, c, 1) + flops_matmul(2 * c, c, 1)  # norm MLP
    total += _flops_conv(half, 1, 3, positions)  # depthwise
    total += _flops_conv(half, half, 1, positions) * 2  # the two pointwise convs
    total += flops_matmul(positions, c, c) * 2  # Q and V projections
    total += n_win * flops_attention(n, c, variant)
    total += flops_matmul(positions, c, c) * 2  # feed-forward
    return total


def model_flops(config, height, width, variant="factorized"):
    """Analytic FLOPs of one forward pass at the given output size."""
    config.validate()
    c = config.feat
    height, width = int(height), int(width)
    per_block = []
    for b in range(config.n_blocks):
        block = sum(
            _flops_sscl(c, height, width, w, variant) for w in config.schedule(b)
        )
        block += _flops_conv(c, 3 * c, 1, height * width)  # fuse
        per_block.append(block)
    branch_core = sum(per_block)
    positions = height * width
    total = _flops_conv(c, config.hsi_bands, 3, positions) + branch_core
    total += _flops_conv(c, config.msi_bands, 3, positions) + branch_core
    total += _flops_conv(c, c, 3, positions)
    total += _flops_conv(config.hsi_bands, c, 3, positions)
    return total


# ------------------------------------------------------------------- timing

@dataclass
class BenchRecord:
    variant: str
    n_tokens: int
    channels: int
    wall_ns: int
    flops: int
    repeats: int


def _attention(variant):
    if variant == "factorized":
        return lambda q, v: add(spa_sc(q, v), spe_sc(q, v))
    if variant == "naive":
        return lambda q, v: add(naive_spa_sc(q, v), spe_sc(q, v))
    if variant == "compressed":
        return lambda q, v: add(spa_sc(q, v, compress=True), spe_sc(q, v))
    raise ConfigError(f"unknown attention variant {variant!r}")


def _time_call(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(median(samples))


def scaling_run(
    token_counts=(64, 256, 1024, 4096),
    channels=32,
    variants=VARIANTS,
    repeats=5,
    warmup=2,
    seed=123,
):
    """Time the correlation variants over a token grid.

    Returns (records, max_rel) where max_rel is the worst relative
    disagreement between the factorized and naive outputs across the grid,
    measured on the very tensors that were timed.
    """
    if repeats < 5:
        raise ConfigError(f"bench needs >= 5 repeats for a stable median, got {repeats}")
    token_counts = sorted(int(n) for n in token_counts)
    if len(token_counts) < 2:
        raise ConfigError("bench needs at least 2 token counts")
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {variant!r}")
    channels = int(channels)
    stream = Xoshiro256StarStar(seed)
    records = []
    max_rel = 0.0
    for n in token_counts:
        q = Tensor(stream.normal(n * channels).reshape(n, channels))
        v = Tensor(stream.normal(n * channels).reshape(n, channels))
        outs = {}
        for variant in variants:
            fn = _attention(variant)
            outs[variant] = fn(q, v).data
            wall = _time_call(lambda: fn(q, v), repeats, warmup)
            if wall < 1000:
                raise BenchError(
                    f"timer resolution insufficient: {variant} at {n} tokens took"
                    f" {wall} ns; use larger sizes"
                )
            records.append(
                BenchRecord(
                    variant=variant,
                    n_tokens=n,
                    channels=channels,
                    wall_ns=wall,
                    flops=flops_attention(n, channels, variant),
                    repeats=repeats,
                )
            )
        if "factorized" in outs and "naive" in outs:
            a, b = outs["factorized"], outs["naive"]
            denom = max(float(np.max(np.abs(b))), 1e-30)
            max_rel = max(max_rel, float(np.max(np.abs(a - b))) / denom)
    return records, max_rel


def fit_exponent(records, variant):
    """log-log slope of wall time vs token count over the largest half."""
    rows = sorted(
        (r for r in records if r.variant == variant), key=lambda r: r.n_tokens
    )
    if len(rows) < 2:
        raise BenchError(f"exponent fit needs >= 2 sizes for {variant!r}")
    rows = rows[len(rows) // 2:] if len(rows) > 2 else rows
    xs = np.log([r.n_tokens for r in rows])
    ys = np.log([r.wall_ns for r in rows])
    return float(np.polyfit(xs, ys, 1)[0])


# ------------------------------------------------------- kernel backend race

def bench_kernels(size=64, channels=32, repeats=5, warmup=2, seed=5):
    """Compare the numba and numpy convolution kernels on equal inputs.

    Returns a list of dict rows {kernel, impl, wall_ns}. Only numpy rows
    when numba is unavailable.
    """
    stream = Xoshiro256StarStar(seed)
    x = stream.normal(channels * size * size).reshape(1, channels, size, size)
    w_full = stream.normal(channels * channels * 9).reshape(channels, channels, 3, 3)
    w_depth = stream.normal(channels * 9).reshape(channels, 1, 3, 3)
    gy = stream.normal(channels * size * size).reshape(1, channels, size, size)
    cases = [
        ("conv3x3", lambda impl: kernels.conv2d_forward(x, w_full, 1, 1, impl=impl)),
        (
            "conv3x3_depthwise",
            lambda impl: kernels.conv2d_forward(x, w_depth, 1, channels, impl=impl),
        ),
        (
            "conv3x3_input_grad",
            lambda impl: kernels.conv2d_input_grad(gy, w_full, 1, 1, size, size, impl=impl),
        ),
        (
            "conv3x3_weight_grad",
            lambda impl: kernels.conv2d_weight_grad(gy, x, 1, 1, 3, impl=impl),
        ),
    ]
    impls = ["numpy"] + (["numba"] if backend.HAVE_NUMBA else [])
    rows = []
    for name, fn in cases:
        for impl in impls:
            wall = _time_call(lambda: fn(impl), repeats, warmup)
            rows.append({"kernel": name, "impl": impl, "wall_ns": wall})
    return rows


# ----------------------------------------------------------------- reporting

def records_csv(records):
    lines = ["variant,n_tokens,channels,wall_ns,flops,repeats"]
    for r in records:
        lines.append(
            f"{r.variant},{r.n_tokens},{r.channels},{r.wall_ns},{r.flops},{r.repeats}"
        )
    return "\n".join(lines) + "\n"


def write_scaling_svg(path, records, width=640, height=420):
    """Log-log wall-time plot, one polyline per variant. Pure SVG text."""
    variants = sorted({r.variant for r in records})
    colors = {"factorized": "#1b7837", "naive": "#b2182b", "compressed": "#2166ac"}
    xs = sorted({r.n_tokens for r in records})
    all_walls = [r.wall_ns for r in records]
    lx0, lx1 = np.log10(min(xs)), np.log10(max(xs))
    ly0, ly1 = np.log10(min(all_walls)), np.log10(max(all_walls))
    ly0, ly1 = ly0 - 0.1, ly1 + 0.1
    left, right, top, bottom = 70, 20, 20, 50

    def px(n):
        return left + (np.log10(n) - lx0) / (lx1 - lx0) * (width - left - right)

    def py(wall):
        return top + (ly1 - np.log10(wall)) / (ly1 - ly0) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"'
        f' viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for n in xs:
        x = px(n)
        parts.append(
            f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{height - bottom}"'
            ' stroke="#ddd"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{height - bottom + 16}" text-anchor="middle">'
            f"{n}</text>"
        )
    for exp in range(int(np.floor(ly0)), int(np.ceil(ly1)) + 1):
        wall = 10.0 ** exp
        if not (ly0 <= exp <= ly1):
            continue
        y = py(wall)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{width - right}" y2="{y:.1f}"'
            ' stroke="#ddd"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">1e{exp}</text>'
        )
    for i, variant in enumerate(variants):
        rows = sorted(
            (r for r in records if r.variant == variant), key=lambda r: r.n_tokens
        )
        pts = " ".join(f"{px(r.n_tokens):.1f},{py(r.wall_ns):.1f}" for r in rows)
        color = colors.get(variant, "#333")
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for r in rows:
            parts.append(
                f'<circle cx="{px(r.n_tokens):.1f}" cy="{py(r.wall_ns):.1f}" r="3"'
                f' fill="{color}"/>'
            )
        parts.append(
            f'<text x="{width - right - 150}" y="{top + 16 + 16 * i}" fill="{color}">'
            f"{variant}</text>"
        )
    parts.append(
        f'<text x="{(left + width - right) / 2:.0f}" y="{height - 12}"'
        ' text-anchor="middle">tokens per window</text>'
    )
    parts.append(
        f'<text x="14" y="{(top + height - bottom) / 2:.0f}"'
        f' transform="rotate(-90 14 {(top + height - bottom) / 2:.0f})"'
        ' text-anchor="middle">wall time (ns)</text>'
    )
    parts.append("</svg>")
    text = "\n".join(parts)
    if path is not None:
        from pathlib import Path

        Path(path).write_text(text)
    return text
