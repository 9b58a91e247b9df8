"""Reconstruction quality metrics over [C, H, W] float64 cubes.

Plain numpy, no tape involvement. The spectral angle here mirrors the loss
term arithmetic exactly (same epsilon, same clamp) so the two agree to float
precision up to the radians-to-degrees factor.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MetricError

_NORM_EPS = 1e-8
_ACOS_LO = -1.0 + 1e-7
_ACOS_HI = 1.0 - 1e-7

PSNR_CAP_DB = 100.0


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"metric: {pred.shape} vs {target.shape}")
    if pred.ndim != 3:
        raise DimensionError(f"metric: expected [C,H,W], got {pred.shape}")
    return pred, target


def psnr(pred, target, data_range=1.0):
    """Peak signal-to-noise ratio in dB, capped at 100 for near-exact inputs."""
    pred, target = _pair(pred, target)
    data_range = float(data_range)
    if data_range <= 0:
        raise MetricError(f"psnr: data_range must be positive, got {data_range}")
    mse = np.mean((pred - target) ** 2)
    floor = data_range * data_range * 1e-10
    if mse < floor:
        return PSNR_CAP_DB
    return 10.0 * np.log10(data_range * data_range / mse)


def sam_degrees(pred, target):
    """Mean per-pixel spectral angle in degrees."""
    pred, target = _pair(pred, target)
    if pred.shape[0] < 2:
        raise DimensionError(f"sam: needs >= 2 bands, got {pred.shape[0]}")
    dot = np.sum(pred * target, axis=0)
    norms = np.sqrt(np.sum(pred * pred, axis=0)) * np.sqrt(
        np.sum(target * target, axis=0)
    )
    cosine = np.clip(dot / (norms + _NORM_EPS), _ACOS_LO, _ACOS_HI)
    return np.degrees(np.mean(np.arccos(cosine)))


def rmse(pred, target):
    """Root mean squared error in the data's native scale."""
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def ergas(pred, target, ratio):
    """Relative global dimensionless synthesis error.

    (100 / ratio) * sqrt(mean over bands of (band RMSE / band mean)^2).
    Undefined when a target band mean is zero; that raises MetricError
    naming the offending band.
    """
    pred, target = _pair(pred, target)
    ratio = float(ratio)
    if ratio <= 0:
        raise MetricError(f"ergas: ratio must be positive, got {ratio}")
    band_mse = np.mean((pred - target) ** 2, axis=(1, 2))
    band_mean = np.mean(target, axis=(1, 2))
    zero = np.flatnonzero(band_mean == 0.0)
    if zero.size:
        raise MetricError(f"ergas: target band {int(zero[0])} has zero mean")
    terms = band_mse / (band_mean * band_mean)
    return float((100.0 / ratio) * np.sqrt(np.mean(terms)))


@dataclass
class MetricReport:
    psnr_db: float
    sam_deg: float
    rmse: float
    ergas: float
    data_range: float
    ratio: float

    def rows(self, prefix=""):
        """(metric, value) rows for structured text output."""
        tag = f"{prefix}." if prefix else ""
        return [
            (f"{tag}psnr_db", self.psnr_db),
            (f"{tag}sam_deg", self.sam_deg),
            (f"{tag}rmse", self.rmse),
            (f"{tag}ergas", self.ergas),
        ]


def compute_report(pred, target, ratio, data_range=1.0):
    return MetricReport(
        psnr_db=float(psnr(pred, target, data_range)),
        sam_deg=float(sam_degrees(pred, target)),
        rmse=rmse(pred, target),
        ergas=ergas(pred, target, ratio),
        data_range=float(data_range),
        ratio=float(ratio),
    )
