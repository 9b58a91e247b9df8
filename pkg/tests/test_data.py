"""Scene synthesis, degradation operators, and the HSC1/manifest formats."""

import json
import struct

import numpy as np
import pytest
from scipy import ndimage

from hssdct.data import (
    CUBE_MAGIC,
    MANIFEST_FORMAT,
    MANIFEST_NAME,
    block_srf,
    degrade_spatial,
    degrade_spectral,
    gaussian_blur_2d,
    gaussian_kernel_1d,
    generate_dataset,
    load_dataset,
    make_triple,
    read_cube,
    synth_scene,
    write_cube,
)
from hssdct.errors import ConfigError, DimensionError, FormatError
from hssdct.rng import Xoshiro256StarStar, derive_seed


# ----------------------------------------------------------------- synthesis

def test_synth_deterministic_and_bounded():
    a = synth_scene(303, 16, 12, 8)
    b = synth_scene(303, 16, 12, 8)
    assert np.array_equal(a, b)
    assert a.shape == (8, 16, 12)
    assert a.flags["C_CONTIGUOUS"]
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a, synth_scene(304, 16, 12, 8))


def test_synth_longhand_replica():
    # regenerate the cube from the documented draw order: bump spectra,
    # blurred and standardized abundance fields, softmax mixing, clip
    seed, h, w, bands, n_end, gain = 404, 12, 10, 6, 5, 2.0
    stream = Xoshiro256StarStar(seed)
    grid = np.arange(bands, dtype=np.float64)
    spectra = np.empty((n_end, bands))
    for k in range(n_end):
        n_bumps = 2 + stream.next_u64() % 3
        p = stream.uniform(3 * n_bumps)
        curve = np.zeros(bands)
        for j in range(n_bumps):
            amp = 0.4 + 0.6 * p[3 * j]
            center = p[3 * j + 1] * (bands - 1)
            bw = (0.05 + 0.25 * p[3 * j + 2]) * bands
            curve += amp * np.exp(-0.5 * ((grid - center) / bw) ** 2)
        spectra[k] = (curve - curve.min()) / (curve.max() - curve.min() + 1e-12)
    sigma_s = max(1.0, min(h, w) / 4.0)
    fields = np.empty((n_end, h, w))
    for k in range(n_end):
        f = gaussian_blur_2d(stream.normal(h * w).reshape(h, w), sigma_s)
        fields[k] = (f - f.mean()) / (f.std() + 1e-12)
    logits = gain * fields
    logits -= logits.max(axis=0)
    weights = np.exp(logits)
    abundance = weights / weights.sum(axis=0)
    assert np.allclose(abundance.sum(axis=0), 1.0, atol=1e-12)
    expect = np.clip(np.tensordot(spectra, abundance, axes=([0], [0])), 0.0, 1.0)
    assert np.array_equal(synth_scene(seed, h, w, bands), expect)


def test_synth_noise_consumes_trailing_draws():
    clean = synth_scene(505, 8, 8, 4)
    noisy = synth_scene(505, 8, 8, 4, noise_sigma=0.05)
    assert not np.array_equal(clean, noisy)
    # noise is additive after mixing, so zero sigma must match draw-for-draw
    assert np.array_equal(clean, synth_scene(505, 8, 8, 4, noise_sigma=0.0))


def test_synth_validation():
    with pytest.raises(DimensionError):
        synth_scene(1, 1, 8, 4)
    with pytest.raises(ConfigError):
        synth_scene(1, 8, 8, 1)
    with pytest.raises(ConfigError):
        synth_scene(1, 8, 8, 4, n_endmembers=1)
    with pytest.raises(ConfigError):
        synth_scene(1, 8, 8, 4, noise_sigma=-0.1)


# ------------------------------------------------------------------ blurring

def test_gaussian_kernel_shape_and_mass():
    k = gaussian_kernel_1d(1.0)
    assert k.size == 7  # radius ceil(3 sigma) = 3
    assert abs(k.sum() - 1.0) < 1e-15
    assert np.array_equal(k, k[::-1])
    with pytest.raises(ConfigError):
        gaussian_kernel_1d(0.0)


def test_blur_matches_scipy_mirror():
    s = Xoshiro256StarStar(60)
    # sigmas where ceil(3s) agrees with scipy's int(3s + 0.5) radius
    for sigma in (0.5, 1.0, 1.5, 2.0):
        x = s.normal(3 * 14 * 14).reshape(3, 14, 14)
        ref = ndimage.gaussian_filter(
            x, sigma=(0.0, sigma, sigma), mode="mirror", truncate=3.0
        )
        assert np.abs(gaussian_blur_2d(x, sigma) - ref).max() < 1e-12


def test_blur_preserves_constants_and_rejects_small_axes():
    x = np.full((2, 9, 9), 0.37)
    assert np.abs(gaussian_blur_2d(x, 1.3) - 0.37).max() < 1e-14
    with pytest.raises(DimensionError):
        gaussian_blur_2d(np.zeros((3, 3)), 5.0)  # radius 15 over extent 3


# --------------------------------------------------------------- degradation

def test_block_srf_even_and_remainder():
    srf = block_srf(4, 16)
    assert srf.shape == (4, 16)
    for m in range(4):
        row = srf[m]
        assert np.array_equal(np.nonzero(row)[0], np.arange(4 * m, 4 * m + 4))
        assert np.all(row[row > 0] == 0.25)
    # 8 bands over 3 outputs: blocks of 3, 3, 2
    srf = block_srf(3, 8)
    assert np.array_equal(np.nonzero(srf[0])[0], [0, 1, 2])
    assert np.array_equal(np.nonzero(srf[1])[0], [3, 4, 5])
    assert np.array_equal(np.nonzero(srf[2])[0], [6, 7])
    assert np.abs(srf.sum(axis=1) - 1.0).max() < 1e-15
    assert np.array_equal(block_srf(1, 5), np.full((1, 5), 0.2))
    with pytest.raises(ConfigError):
        block_srf(0, 4)
    with pytest.raises(ConfigError):
        block_srf(5, 4)


def test_degrade_spatial_offset_and_shape():
    s = Xoshiro256StarStar(61)
    hr = s.uniform(2 * 12 * 12).reshape(2, 12, 12)
    lr = degrade_spatial(hr, 4, 0.0)
    assert lr.shape == (2, 3, 3)
    # sigma 0 skips the blur, so decimation geometry is directly visible
    assert np.array_equal(lr, hr[:, 2::4, 2::4])
    assert np.array_equal(degrade_spatial(hr, 1, 0.0), hr)


def test_degrade_spatial_preserves_constants():
    hr = np.full((3, 16, 16), 0.62)
    lr = degrade_spatial(hr, 4, 1.0)
    assert lr.shape == (3, 4, 4)
    assert np.abs(lr - 0.62).max() < 1e-14


def test_degrade_spatial_validation():
    hr = np.zeros((2, 12, 12))
    with pytest.raises(DimensionError):
        degrade_spatial(np.zeros((12, 12)), 4, 1.0)
    with pytest.raises(DimensionError):
        degrade_spatial(hr, 5, 1.0)
    with pytest.raises(ConfigError):
        degrade_spatial(hr, 0, 1.0)


def test_degrade_spectral_is_block_mean():
    s = Xoshiro256StarStar(62)
    hr = s.uniform(8 * 5 * 5).reshape(8, 5, 5)
    msi = degrade_spectral(hr, block_srf(2, 8))
    assert msi.shape == (2, 5, 5)
    assert np.abs(msi[0] - hr[0:4].mean(axis=0)).max() < 1e-14
    assert np.abs(msi[1] - hr[4:8].mean(axis=0)).max() < 1e-14
    with pytest.raises(DimensionError):
        degrade_spectral(hr, np.ones((2, 7)))


def test_make_triple_consistency():
    t = make_triple(707, 16, 16, 8, 2, 4)
    assert t.hr_hsi.shape == (8, 16, 16)
    assert t.lr_hsi.shape == (8, 4, 4)
    assert t.hr_msi.shape == (2, 16, 16)
    assert np.array_equal(t.lr_hsi, degrade_spatial(t.hr_hsi, 4, t.blur_sigma))
    assert np.array_equal(t.hr_msi, degrade_spectral(t.hr_hsi, t.srf))
    with pytest.raises(DimensionError):
        make_triple(707, 15, 16, 8, 2, 4)


# ------------------------------------------------------------------- cube IO

def test_cube_round_trip_bit_exact(tmp_path):
    s = Xoshiro256StarStar(63)
    cube = s.normal(3 * 4 * 5).reshape(3, 4, 5)
    cube[0, 0, 0] = np.nan
    cube[1, 2, 3] = np.inf
    cube[2, 3, 4] = -np.inf
    path = tmp_path / "x.cube"
    write_cube(path, cube)
    back = read_cube(path)
    assert back.shape == cube.shape
    assert back.tobytes() == cube.tobytes()


def test_cube_layout_on_disk(tmp_path):
    # 1x1x1 cube is exactly 24 bytes; header is magic then h, w, c uint32
    path = tmp_path / "one.cube"
    write_cube(path, np.full((1, 1, 1), 0.25))
    raw = path.read_bytes()
    assert len(raw) == 24
    assert raw[:4] == CUBE_MAGIC
    assert struct.unpack_from("<III", raw, 4) == (1, 1, 1)
    assert struct.unpack_from("<d", raw, 16)[0] == 0.25
    # band-sequential order: value of band c, row i, col j at flat c*h*w+i*w+j
    cube = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    path2 = tmp_path / "seq.cube"
    write_cube(path2, cube)
    flat = np.frombuffer(path2.read_bytes()[16:], dtype="<f8")
    assert flat[1 * 12 + 2 * 4 + 3] == cube[1, 2, 3]


def test_cube_format_errors(tmp_path):
    short = tmp_path / "short.cube"
    short.write_bytes(b"HSC1\x01\x00")
    with pytest.raises(FormatError, match="offset 6"):
        read_cube(short)
    bad = tmp_path / "bad.cube"
    bad.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(FormatError, match="magic"):
        read_cube(bad)
    zero = tmp_path / "zero.cube"
    zero.write_bytes(CUBE_MAGIC + struct.pack("<III", 0, 1, 1) + b"\x00" * 8)
    with pytest.raises(FormatError, match="zero extent"):
        read_cube(zero)
    mism = tmp_path / "mism.cube"
    mism.write_bytes(CUBE_MAGIC + struct.pack("<III", 2, 2, 1) + b"\x00" * 8)
    with pytest.raises(FormatError, match="32 bytes"):
        read_cube(mism)
    with pytest.raises(DimensionError):
        write_cube(tmp_path / "flat.cube", np.zeros((4, 4)))


# ------------------------------------------------------------------- datasets

def test_generate_and_load_dataset(tmp_path):
    out = tmp_path / "ds"
    manifest = generate_dataset(
        out, n_scenes=2, height=16, width=16, bands=8, msi_bands=2,
        ratio=4, blur_sigma=1.0, seed=909, abundance_gain=2.0,
    )
    assert manifest["format"] == MANIFEST_FORMAT
    assert manifest["params"]["abundance_gain"] == 2.0
    on_disk = json.loads((out / MANIFEST_NAME).read_text())
    assert on_disk == manifest

    loaded_manifest, triples = load_dataset(out)
    assert loaded_manifest == manifest
    assert len(triples) == 2
    for i, triple in enumerate(triples):
        direct = make_triple(
            derive_seed(909, i), 16, 16, 8, 2, 4,
            blur_sigma=1.0, abundance_gain=2.0,
        )
        assert triple.seed == derive_seed(909, i)
        assert np.array_equal(triple.hr_hsi, direct.hr_hsi)
        assert np.array_equal(triple.lr_hsi, direct.lr_hsi)
        assert np.array_equal(triple.hr_msi, direct.hr_msi)
        assert np.array_equal(triple.srf, direct.srf)


def test_load_dataset_errors(tmp_path):
    with pytest.raises(FormatError, match="manifest not found"):
        load_dataset(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text("{not json")
    with pytest.raises(FormatError, match="not valid JSON"):
        load_dataset(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text(json.dumps({"format": "other"}))
    with pytest.raises(FormatError, match="format"):
        load_dataset(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text(json.dumps({"format": MANIFEST_FORMAT}))
    with pytest.raises(FormatError, match="params"):
        load_dataset(tmp_path)
