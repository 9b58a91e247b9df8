"""Model assembly: bicubic properties, identity at init, parameter tally."""

import numpy as np
import pytest

from hssdct.errors import ConfigError, DimensionError
from hssdct.model import (
    Model,
    ModelConfig,
    bicubic_upsample,
    desk_config,
    full_scale_config,
    param_count,
)
from hssdct.rng import Xoshiro256StarStar


def rand(stream, *shape):
    return stream.normal(int(np.prod(shape))).reshape(shape)


def tiny_config(seed=3):
    return ModelConfig(hsi_bands=4, msi_bands=2, feat=4, n_blocks=1,
                       block_windows=(4,), ratio=2, seed=seed)


# -------------------------------------------------------------------- bicubic

def test_bicubic_ratio_one_is_identity():
    s = Xoshiro256StarStar(40)
    x = rand(s, 3, 5, 7)
    assert np.array_equal(bicubic_upsample(x, 1), x)


def test_bicubic_preserves_constants():
    x = np.full((2, 4, 4), 0.37)
    y = bicubic_upsample(x, 4)
    assert y.shape == (2, 16, 16)
    assert np.abs(y - 0.37).max() < 1e-14


def test_bicubic_exact_on_linear_ramps_in_the_interior():
    # Catmull-Rom reproduces degree-1 polynomials; borders bend because of
    # reflection, so check away from the edges
    ramp = np.tile(np.arange(8.0), (8, 1))[None]
    y = bicubic_upsample(ramp, 2)
    src = (np.arange(16) + 0.5) / 2.0 - 0.5
    interior = slice(3, 13)
    assert np.abs(y[0, 8, interior] - src[interior]).max() < 1e-12


def test_bicubic_separable_axes():
    # rows constant -> output rows constant; same for columns
    s = Xoshiro256StarStar(41)
    row = rand(s, 1, 1, 6)
    x = np.repeat(row, 5, axis=1)
    y = bicubic_upsample(x, 3)
    assert np.abs(y - y[:, :1, :]).max() < 1e-12


def test_bicubic_validation():
    with pytest.raises(DimensionError):
        bicubic_upsample(np.zeros((4, 4)), 2)
    with pytest.raises(ConfigError):
        bicubic_upsample(np.zeros((1, 4, 4)), 0)
    with pytest.raises(DimensionError):
        bicubic_upsample(np.zeros((1, 1, 4)), 2)


# -------------------------------------------------------------- configuration

def test_config_validation():
    good = desk_config()
    assert good.validate() is good
    bad = [
        dict(hsi_bands=1),
        dict(msi_bands=0),
        dict(msi_bands=16),  # must stay below hsi_bands
        dict(feat=7),
        dict(n_blocks=0),
        dict(block_windows=(4,)),  # wrong length for 2 blocks
        dict(block_windows=(4, 0)),
        dict(ratio=0),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            ModelConfig(**kw).validate()


def test_schedule_shape():
    cfg = desk_config()
    assert cfg.schedule(0) == (4, 4, 4)
    assert cfg.schedule(1) == (4, 8, 8)
    big = full_scale_config()
    assert big.schedule(2) == (4, 8, 16)
    small = ModelConfig(block_windows=(2, 3), n_blocks=2)
    assert small.schedule(0) == (2, 2, 2)


# ------------------------------------------------------------------ the model

def test_identity_at_init_bit_exact():
    s = Xoshiro256StarStar(42)
    net = Model(tiny_config())
    lr = np.clip(rand(s, 4, 6, 6) * 0.2 + 0.5, 0, 1)
    msi = np.clip(rand(s, 2, 12, 12) * 0.2 + 0.5, 0, 1)
    out = net.forward(lr, msi)
    assert np.array_equal(out.data, bicubic_upsample(lr, 2))


def test_forward_geometry_validation():
    net = Model(tiny_config())
    with pytest.raises(DimensionError):
        net.forward(np.zeros((3, 6, 6)), np.zeros((2, 12, 12)))
    with pytest.raises(DimensionError):
        net.forward(np.zeros((4, 6, 6)), np.zeros((2, 10, 12)))
    with pytest.raises(DimensionError):
        net.forward(np.zeros((4, 6, 6)), np.zeros((1, 12, 12)))


def test_same_seed_same_params_different_seed_differs():
    a = Model(tiny_config(seed=9))
    b = Model(tiny_config(seed=9))
    c = Model(tiny_config(seed=10))
    for (na, pa), (nb_, pb), (nc, pc) in zip(
        a.named_params(), b.named_params(), c.named_params()
    ):
        assert na == nb_ == nc
        assert np.array_equal(pa.data, pb.data)
    drawn = [
        (pa, pc)
        for (na, pa), (nc, pc) in zip(a.named_params(), c.named_params())
        if pa.data.any() or pc.data.any()
    ]
    assert any(not np.array_equal(pa.data, pc.data) for pa, pc in drawn)


def test_branch_gain_ablation():
    s = Xoshiro256StarStar(43)
    net = Model(tiny_config())
    # activate the head so branch features reach the output
    net.head2_w.data += 0.1 * rand(s, 4, 4, 3, 3)
    lr = rand(s, 4, 6, 6) * 0.1 + 0.5
    msi1 = rand(s, 2, 12, 12) * 0.1 + 0.5
    msi2 = rand(s, 2, 12, 12) * 0.1 + 0.5
    # with the spatial branch gated off, the MSI must not matter
    a = net.forward(lr, msi1, branch_gains=(1.0, 0.0)).data
    b = net.forward(lr, msi2, branch_gains=(1.0, 0.0)).data
    assert np.array_equal(a, b)
    c = net.forward(lr, msi2, branch_gains=(1.0, 1.0)).data
    assert not np.array_equal(b, c)


def test_forward_is_deterministic():
    s = Xoshiro256StarStar(44)
    net = Model(tiny_config())
    net.head2_w.data += 0.05 * rand(s, 4, 4, 3, 3)
    lr = rand(s, 4, 6, 6)
    msi = rand(s, 2, 12, 12)
    assert np.array_equal(net.forward(lr, msi).data, net.forward(lr, msi).data)


# ----------------------------------------------------------- parameter tally

def expected_param_count(cfg):
    """Formula-sheet recomputation, written longhand as the oracle."""
    c = cfg.feat
    half = c // 2
    iln = c * c + c + 2 * c * c + 2 * c           # w1, b1, w2, b2
    ssfe = (half * 9 + half) + (half * half + half) * 2 + (c * c + c) * 2
    ssfa = (c * c + c) * 2
    sscl = iln + ssfe + ssfa
    hdrtb = 3 * sscl + (c * 3 * c + c)            # fuse 1x1 over 3C channels
    shallow_spe = c * cfg.hsi_bands * 9 + c
    shallow_spa = c * cfg.msi_bands * 9 + c
    head = (c * c * 9 + c) + (cfg.hsi_bands * c * 9 + cfg.hsi_bands)
    blocks = 2 * cfg.n_blocks * hdrtb
    return shallow_spe + shallow_spa + blocks + head


def test_param_count_desk():
    cfg = desk_config()
    net = Model(cfg)
    assert param_count(net) == expected_param_count(cfg) == 129264


def test_param_count_full_scale():
    cfg = full_scale_config()
    # tally from the formula sheet without building the big model
    assert expected_param_count(cfg) == 6005772


def test_param_count_inputs():
    net = Model(tiny_config())
    assert param_count(net) == param_count(net.named_params())
    assert param_count([p for _, p in net.named_params()]) == param_count(net)
    assert param_count([]) == 0


def test_named_params_unique_and_complete():
    net = Model(tiny_config())
    names = [n for n, _ in net.named_params()]
    assert len(names) == len(set(names))
    ids = [id(p) for _, p in net.named_params()]
    assert len(ids) == len(set(ids))
    assert names[0] == "spectral.shallow_w"
    assert names[-1] == "head.conv2_b"
