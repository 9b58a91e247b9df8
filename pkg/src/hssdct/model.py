"""The fusion network: two feature branches, shared reconstruction head.

The spectral branch reads the low-resolution hyperspectral cube after bicubic
upsampling to target scale; the spatial branch reads the high-resolution
multispectral image. Each branch is a shallow 3x3 conv into C channels
followed by a stack of HDRTB blocks. Branch features are added elementwise
and a two-conv head maps them back to the hyperspectral band count. The head
output is a residual on top of the bicubic upsample, and every residual path
is zero-initialized, so a freshly built model reproduces plain bicubic
upsampling exactly.

Bicubic upsampling is deliberately outside the tape: it is input
preprocessing, nothing upstream of it ever needs a gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .blocks import HDRTB, ParamInit
from .errors import ConfigError, DimensionError
from .rng import Xoshiro256StarStar
from .tensor import Tensor, add, add_bias, conv2d, gelu, scale


# --------------------------------------------------------------- upsampling

def _cubic_kernel(t):
    """Catmull-Rom cubic (a = -0.5), support [-2, 2]."""
    at = np.abs(t)
    inner = (1.5 * at - 2.5) * at * at + 1.0
    outer = ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def _reflect_indices(idx, n):
    idx = idx.copy()
    # iterate because a tap can overshoot a very short axis twice
    for _ in range(8):
        under = idx < 0
        over = idx > n - 1
        if not (under.any() or over.any()):
            break
        idx[under] = -idx[under]
        idx[over] = 2 * (n - 1) - idx[over]
    return idx


def _axis_taps(n_in, ratio):
    out = np.arange(n_in * ratio)
    src = (out + 0.5) / ratio - 0.5
    base = np.floor(src).astype(np.int64)
    offsets = np.arange(-1, 3)
    taps = base[:, None] + offsets[None, :]
    weights = _cubic_kernel(src[:, None] - taps)
    return _reflect_indices(taps, n_in), weights


def bicubic_upsample(x, ratio):
    """Upsample [C, h, w] to [C, h*ratio, w*ratio].

    Separable Catmull-Rom with center-aligned sampling ((i+0.5)/r - 0.5) and
    reflected borders. ratio=1 is an exact identity.
    """
    x = np.asarray(x, dtype=np.float64)
    ratio = int(ratio)
    if x.ndim != 3:
        raise DimensionError(f"bicubic_upsample: expected [C,h,w], got {x.shape}")
    if ratio < 1:
        raise ConfigError(f"bicubic_upsample: ratio must be >= 1, got {ratio}")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise DimensionError(
            f"bicubic_upsample: spatial extent must be >= 2, got {x.shape}"
        )

    def along_last(arr):
        taps, weights = _axis_taps(arr.shape[-1], ratio)
        gathered = arr[..., taps]
        return np.einsum("...mf,mf->...m", gathered, weights)

    y = along_last(x)
    y = np.swapaxes(y, -1, -2)
    y = along_last(y)
    return np.ascontiguousarray(np.swapaxes(y, -1, -2))


# ------------------------------------------------------------- configuration

@dataclass
class ModelConfig:
    hsi_bands: int = 16
    msi_bands: int = 4
    feat: int = 32
    n_blocks: int = 2
    block_windows: tuple = (4, 8)
    ratio: int = 4
    seed: int = 2024
    compress: bool = False

    def validate(self):
        if self.hsi_bands < 2:
            raise ConfigError(f"hsi_bands must be >= 2, got {self.hsi_bands}")
        if self.msi_bands < 1:
            raise ConfigError(f"msi_bands must be >= 1, got {self.msi_bands}")
        if self.msi_bands >= self.hsi_bands:
            raise ConfigError(
                f"msi_bands ({self.msi_bands}) must be below hsi_bands"
                f" ({self.hsi_bands})"
            )
        if self.feat < 2 or self.feat % 2:
            raise ConfigError(f"feat must be even and >= 2, got {self.feat}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        windows = tuple(int(w) for w in self.block_windows)
        if len(windows) != self.n_blocks:
            raise ConfigError(
                f"block_windows has {len(windows)} entries for {self.n_blocks} blocks"
            )
        if any(w < 1 for w in windows):
            raise ConfigError(f"block_windows must be positive, got {windows}")
        if self.ratio < 1:
            raise ConfigError(f"ratio must be >= 1, got {self.ratio}")
        return self

    def schedule(self, block):
        """Per-block window triple: grows to the block's base window."""
        w = int(self.block_windows[block])
        return (min(4, w), min(8, w), w)


def desk_config(seed=2024):
    """The small configuration every test and example runs at."""
    return ModelConfig(seed=seed)


def full_scale_config(seed=2024):
    """Full-scale configuration used only for parameter/FLOP reporting."""
    return ModelConfig(
        hsi_bands=172,
        msi_bands=4,
        feat=160,
        n_blocks=4,
        block_windows=(4, 8, 16, 16),
        ratio=4,
        seed=seed,
    )


# ------------------------------------------------------------------ the model

class Model:
    """Built from a ModelConfig; parameters drawn from the config seed."""

    def __init__(self, config):
        config.validate()
        self.config = config
        init = ParamInit(Xoshiro256StarStar(config.seed))
        c = config.feat
        nb = config.hsi_bands
        nm = config.msi_bands
        # creation order fixes the RNG draw order; keep it stable
        self.spe_shallow_w = init.uniform((c, nb, 3, 3), nb * 9)
        self.spe_shallow_b = init.zeros((c,))
        self.spe_blocks = [
            HDRTB(c, init, config.compress) for _ in range(config.n_blocks)
        ]
        self.spa_shallow_w = init.uniform((c, nm, 3, 3), nm * 9)
        self.spa_shallow_b = init.zeros((c,))
        self.spa_blocks = [
            HDRTB(c, init, config.compress) for _ in range(config.n_blocks)
        ]
        self.head1_w = init.uniform((c, c, 3, 3), c * 9)
        self.head1_b = init.zeros((c,))
        self.head2_w = init.zeros((nb, c, 3, 3))
        self.head2_b = init.zeros((nb,))

    def _branch(self, x, shallow_w, shallow_b, hdrtbs):
        f = add_bias(conv2d(x, shallow_w, 1), shallow_b, 0)
        for i, block in enumerate(hdrtbs):
            f = block.forward(f, self.config.schedule(i))
        return f

    def forward(self, lr_hsi, hr_msi, branch_gains=(1.0, 1.0)):
        """Fuse [hsi_bands, h, w] and [msi_bands, h*r, w*r] to [hsi_bands, h*r, w*r].

        branch_gains scales (spectral, spatial) branch features before the
        merge; (1, 0) and (0, 1) are the ablation switches.
        """
        cfg = self.config
        lr = lr_hsi.data if isinstance(lr_hsi, Tensor) else np.asarray(lr_hsi, float)
        msi = hr_msi.data if isinstance(hr_msi, Tensor) else np.asarray(hr_msi, float)
        if lr.ndim != 3 or lr.shape[0] != cfg.hsi_bands:
            raise DimensionError(
                f"forward: lr_hsi expected [{cfg.hsi_bands},h,w], got {lr.shape}"
            )
        want = (cfg.msi_bands, lr.shape[1] * cfg.ratio, lr.shape[2] * cfg.ratio)
        if msi.shape != want:
            raise DimensionError(f"forward: hr_msi expected {want}, got {msi.shape}")

        up = Tensor(bicubic_upsample(lr, cfg.ratio))
        fs = self._branch(up, self.spe_shallow_w, self.spe_shallow_b, self.spe_blocks)
        fm = self._branch(
            Tensor(msi), self.spa_shallow_w, self.spa_shallow_b, self.spa_blocks
        )
        g_spe, g_spa = branch_gains
        if g_spe != 1.0:
            fs = scale(fs, g_spe)
        if g_spa != 1.0:
            fm = scale(fm, g_spa)
        merged = add(fs, fm)
        h = gelu(add_bias(conv2d(merged, self.head1_w, 1), self.head1_b, 0))
        resid = add_bias(conv2d(h, self.head2_w, 1), self.head2_b, 0)
        return add(up, resid)

    def named_params(self):
        out = [
            ("spectral.shallow_w", self.spe_shallow_w),
            ("spectral.shallow_b", self.spe_shallow_b),
        ]
        for i, block in enumerate(self.spe_blocks):
            for name, p in block.named_params():
                out.append((f"spectral.block{i}.{name}", p))
        out.append(("spatial.shallow_w", self.spa_shallow_w))
        out.append(("spatial.shallow_b", self.spa_shallow_b))
        for i, block in enumerate(self.spa_blocks):
            for name, p in block.named_params():
                out.append((f"spatial.block{i}.{name}", p))
        out.extend(
            [
                ("head.conv1_w", self.head1_w),
                ("head.conv1_b", self.head1_b),
                ("head.conv2_w", self.head2_w),
                ("head.conv2_b", self.head2_b),
            ]
        )
        return out


def param_count(params):
    """Total scalar parameter count of a model or an iterable of params."""
    if hasattr(params, "named_params"):
        params = params.named_params()
    total = 0
    for item in params:
        t = item[1] if isinstance(item, tuple) else item
        total += t.size
    return total
