"""Synthetic scenes, degradation operators, and on-disk formats.

A scene is born as a ground-truth cube from a linear mixing model: a few
endmember spectra (sums of random Gaussian bumps, min-max normalized to
[0, 1]) weighted by smooth abundance maps that sum to one at every pixel.
The observed pair is then manufactured from it the standard way: the
low-resolution hyperspectral input by per-band Gaussian blur and decimation,
the high-resolution multispectral input by applying a block band-averaging
response matrix. Everything is driven by the package's own deterministic RNG,
so a (seed, shape) pair names the exact same cube bytes on every platform.

Cube file format "HSC1": 4-byte magic, then h, w, c as little-endian uint32,
then c*h*w float64 values little-endian, band-sequential (band-major, rows
within band, columns within row). A 1x1x1 cube is exactly 24 bytes.
"""

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, FormatError
from .rng import Xoshiro256StarStar, derive_seed

CUBE_MAGIC = b"HSC1"
MANIFEST_FORMAT = "hssdct-dataset-v1"
MANIFEST_NAME = "manifest.json"


# ------------------------------------------------------------------ blurring

def gaussian_kernel_1d(sigma):
    """Normalized Gaussian taps truncated at 3 sigma."""
    sigma = float(sigma)
    if sigma <= 0:
        raise ConfigError(f"gaussian kernel: sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur_last_axis(x, kernel):
    radius = (kernel.size - 1) // 2
    if radius > x.shape[-1] - 1:
        raise DimensionError(
            f"blur: kernel radius {radius} too large for axis of extent {x.shape[-1]}"
        )
    pads = [(0, 0)] * (x.ndim - 1) + [(radius, radius)]
    xp = np.pad(x, pads, mode="reflect")
    win = sliding_window_view(xp, kernel.size, axis=-1)
    return win @ kernel


def gaussian_blur_2d(x, sigma):
    """Separable Gaussian blur of the last two axes, reflect boundary."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"blur: input must have >= 2 axes, got {x.shape}")
    kernel = gaussian_kernel_1d(sigma)
    y = _blur_last_axis(x, kernel)
    y = np.swapaxes(y, -1, -2)
    y = _blur_last_axis(y, kernel)
    return np.ascontiguousarray(np.swapaxes(y, -1, -2))


# ----------------------------------------------------------------- synthesis

def synth_scene(
    seed,
    height,
    width,
    bands,
    n_endmembers=5,
    noise_sigma=0.0,
    abundance_gain=2.0,
    smoothness=None,
):
    """Generate a ground-truth cube in [0, 1], shape [bands, height, width].

    Draw order (fixed; reordering would change every seeded cube):
      1. per endmember: a bump count in {2,3,4} (one raw draw), then
         (amplitude, center, width) uniforms per bump; the bump sum is
         min-max normalized to [0, 1],
      2. per endmember: height*width normals for its abundance field, which
         is blurred (sigma = ``smoothness``, default max(1, min(H, W)/4)),
         standardized, and scaled by ``abundance_gain``,
      3. bands*height*width normals for additive noise, only when
         noise_sigma > 0.

    Abundances are normalized exponentials over endmembers, so larger gain
    means harder material boundaries. The final cube is clipped to [0, 1].
    """
    height, width, bands = int(height), int(width), int(bands)
    n_endmembers = int(n_endmembers)
    if height < 2 or width < 2:
        raise DimensionError(f"synth: scene must be at least 2x2, got {height}x{width}")
    if bands < 2:
        raise ConfigError(f"synth: bands must be >= 2, got {bands}")
    if n_endmembers < 2:
        raise ConfigError(f"synth: n_endmembers must be >= 2, got {n_endmembers}")
    if noise_sigma < 0:
        raise ConfigError(f"synth: noise_sigma must be >= 0, got {noise_sigma}")
    stream = Xoshiro256StarStar(seed)

    grid = np.arange(bands, dtype=np.float64)
    spectra = np.empty((n_endmembers, bands), dtype=np.float64)
    for k in range(n_endmembers):
        n_bumps = 2 + stream.next_u64() % 3
        params = stream.uniform(3 * n_bumps)
        curve = np.zeros(bands, dtype=np.float64)
        for j in range(n_bumps):
            amp = 0.4 + 0.6 * params[3 * j]
            center = params[3 * j + 1] * (bands - 1)
            bump_w = (0.05 + 0.25 * params[3 * j + 2]) * bands
            curve += amp * np.exp(-0.5 * ((grid - center) / bump_w) ** 2)
        lo, hi = curve.min(), curve.max()
        spectra[k] = (curve - lo) / (hi - lo + 1e-12)

    sigma_s = float(smoothness) if smoothness else max(1.0, min(height, width) / 4.0)
    fields = np.empty((n_endmembers, height, width), dtype=np.float64)
    for k in range(n_endmembers):
        raw = stream.normal(height * width).reshape(height, width)
        f = gaussian_blur_2d(raw, sigma_s)
        fields[k] = (f - f.mean()) / (f.std() + 1e-12)

    logits = abundance_gain * fields
    logits -= logits.max(axis=0)  # guard exp overflow; softmax is shift-invariant
    weights = np.exp(logits)
    abundance = weights / weights.sum(axis=0)

    cube = np.tensordot(spectra, abundance, axes=([0], [0]))
    if noise_sigma > 0:
        noise = stream.normal(bands * height * width).reshape(bands, height, width)
        cube = cube + noise_sigma * noise
    return np.ascontiguousarray(np.clip(cube, 0.0, 1.0))


# --------------------------------------------------------------- degradation

def block_srf(msi_bands, hsi_bands):
    """Band-averaging response matrix [msi_bands, hsi_bands], rows sum to 1.

    Contiguous blocks of hyperspectral bands map to each output band; when
    the counts do not divide evenly, the leftover bands go one apiece to the
    leading blocks.
    """
    msi_bands, hsi_bands = int(msi_bands), int(hsi_bands)
    if not 1 <= msi_bands <= hsi_bands:
        raise ConfigError(
            f"block_srf: need 1 <= msi_bands <= hsi_bands, got {msi_bands},{hsi_bands}"
        )
    srf = np.zeros((msi_bands, hsi_bands), dtype=np.float64)
    base, leftover = divmod(hsi_bands, msi_bands)
    start = 0
    for m in range(msi_bands):
        size = base + (1 if m < leftover else 0)
        srf[m, start:start + size] = 1.0 / size
        start += size
    return srf


def degrade_spatial(hr, ratio, sigma):
    """Per-band Gaussian blur then decimation with offset ratio // 2."""
    hr = np.asarray(hr, dtype=np.float64)
    ratio = int(ratio)
    if hr.ndim != 3:
        raise DimensionError(f"degrade_spatial: expected [C,H,W], got {hr.shape}")
    if ratio < 1:
        raise ConfigError(f"degrade_spatial: ratio must be >= 1, got {ratio}")
    if hr.shape[1] % ratio or hr.shape[2] % ratio:
        raise DimensionError(
            f"degrade_spatial: extent {hr.shape[1]}x{hr.shape[2]} not divisible"
            f" by ratio {ratio}"
        )
    blurred = gaussian_blur_2d(hr, sigma) if sigma > 0 else hr
    off = ratio // 2
    return np.ascontiguousarray(blurred[:, off::ratio, off::ratio])


def degrade_spectral(hr, srf):
    """Collapse bands through a response matrix: [M,C] x [C,H,W] -> [M,H,W]."""
    hr = np.asarray(hr, dtype=np.float64)
    srf = np.asarray(srf, dtype=np.float64)
    if hr.ndim != 3 or srf.ndim != 2 or srf.shape[1] != hr.shape[0]:
        raise DimensionError(
            f"degrade_spectral: srf {srf.shape} does not match cube {hr.shape}"
        )
    return np.ascontiguousarray(np.tensordot(srf, hr, axes=([1], [0])))


@dataclass
class SceneTriple:
    """One training example: ground truth plus its two degraded observations."""

    hr_hsi: np.ndarray
    lr_hsi: np.ndarray
    hr_msi: np.ndarray
    srf: np.ndarray
    ratio: int
    blur_sigma: float
    seed: int


def make_triple(
    seed,
    height,
    width,
    bands,
    msi_bands,
    ratio,
    blur_sigma=1.0,
    **synth_kwargs,
):
    """Build a SceneTriple deterministically from one seed."""
    if int(height) % int(ratio) or int(width) % int(ratio):
        raise DimensionError(
            f"make_triple: {height}x{width} not divisible by ratio {ratio}"
        )
    hr = synth_scene(seed, height, width, bands, **synth_kwargs)
    srf = block_srf(msi_bands, bands)
    return SceneTriple(
        hr_hsi=hr,
        lr_hsi=degrade_spatial(hr, ratio, blur_sigma),
        hr_msi=degrade_spectral(hr, srf),
        srf=srf,
        ratio=int(ratio),
        blur_sigma=float(blur_sigma),
        seed=int(seed),
    )


# -------------------------------------------------------------------- cube IO

def write_cube(path, cube):
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise DimensionError(f"write_cube: expected [C,H,W], got {cube.shape}")
    c, h, w = cube.shape
    header = CUBE_MAGIC + struct.pack("<III", h, w, c)
    payload = np.ascontiguousarray(cube).astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_cube(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(
            f"{path}: truncated header, file ends at offset {len(raw)} (need 16)"
        )
    if raw[:4] != CUBE_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {raw[:4]!r}")
    h, w, c = struct.unpack_from("<III", raw, 4)
    if h == 0 or w == 0 or c == 0:
        raise FormatError(f"{path}: zero extent in header at offset 4: {h}x{w}x{c}")
    expected = 16 + 8 * h * w * c
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload mismatch at offset 16: header implies"
            f" {expected - 16} bytes, file carries {len(raw) - 16}"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=16)
    return flat.astype(np.float64).reshape(c, h, w)


# ------------------------------------------------------------------- datasets

def generate_dataset(
    out_dir,
    n_scenes,
    height,
    width,
    bands,
    msi_bands,
    ratio,
    blur_sigma,
    seed,
    **synth_kwargs,
):
    """Write n_scenes triples plus a manifest; returns the manifest dict.

    Scene i uses derive_seed(seed, i), so any scene is regenerable from the
    manifest alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {
        "height": int(height),
        "width": int(width),
        "bands": int(bands),
        "msi_bands": int(msi_bands),
        "ratio": int(ratio),
        "blur_sigma": float(blur_sigma),
        "seed": int(seed),
    }
    for key, value in synth_kwargs.items():
        params[key] = value
    scenes = []
    for i in range(int(n_scenes)):
        child = derive_seed(seed, i)
        triple = make_triple(
            child, height, width, bands, msi_bands, ratio, blur_sigma, **synth_kwargs
        )
        stem = f"scene_{i:03d}"
        write_cube(out / f"{stem}.hr.cube", triple.hr_hsi)
        write_cube(out / f"{stem}.lr.cube", triple.lr_hsi)
        write_cube(out / f"{stem}.msi.cube", triple.hr_msi)
        scenes.append(
            {
                "id": stem,
                "seed": int(child),
                "hr": f"{stem}.hr.cube",
                "lr": f"{stem}.lr.cube",
                "msi": f"{stem}.msi.cube",
            }
        )
    manifest = {"format": MANIFEST_FORMAT, "params": params, "scenes": scenes}
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_dataset(data_dir):
    """Read a manifest directory back into (manifest, [SceneTriple])."""
    root = Path(data_dir)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise FormatError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: not valid JSON ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(
            f"{mpath}: format {manifest.get('format')!r}, expected {MANIFEST_FORMAT!r}"
        )
    for key in ("params", "scenes"):
        if key not in manifest:
            raise FormatError(f"{mpath}: missing required key {key!r}")
    params = manifest["params"]
    srf = block_srf(params["msi_bands"], params["bands"])
    triples = []
    for entry in manifest["scenes"]:
        triples.append(
            SceneTriple(
                hr_hsi=read_cube(root / entry["hr"]),
                lr_hsi=read_cube(root / entry["lr"]),
                hr_msi=read_cube(root / entry["msi"]),
                srf=srf,
                ratio=int(params["ratio"]),
                blur_sigma=float(params["blur_sigma"]),
                seed=int(entry["seed"]),
            )
        )
    return manifest, triples
