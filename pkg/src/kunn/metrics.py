"""Image quality scores on magnitude images: NMSE, PSNR and windowed SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    return x, ref


def nmse(x, ref) -> float:
    x, ref = _pair(x, ref)
    denom = np.sum(ref * ref)
    if denom == 0:
        raise ValueError("reference image is all zero")
    diff = x - ref
    return float(np.sum(diff * diff) / denom)


def psnr(x, ref) -> float:
    """``10 log10(max(ref)^2 / MSE)`` in dB; ``inf`` for identical images."""
    x, ref = _pair(x, ref)
    diff = x - ref
    mse = np.mean(diff * diff)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(np.max(ref) ** 2 / mse))


def ssim(x, ref, window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2,
         data_range: float | None = None) -> float:
    """Mean SSIM over all fully contained ``window x window`` uniform windows.

    Window statistics use population (1/n) moments.  The dynamic range
    defaults to ``max(ref) - min(ref)`` (1 for a constant reference).
    """
    x, ref = _pair(x, ref)
    if x.ndim != 2 or min(x.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}")
    if data_range is None:
        data_range = float(np.max(ref) - np.min(ref)) or 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    wx = sliding_window_view(x, (window, window))
    wr = sliding_window_view(ref, (window, window))
    mx = wx.mean(axis=(-2, -1))
    mr = wr.mean(axis=(-2, -1))
    vx = (wx * wx).mean(axis=(-2, -1)) - mx * mx
    vr = (wr * wr).mean(axis=(-2, -1)) - mr * mr
    cxr = (wx * wr).mean(axis=(-2, -1)) - mx * mr
    num = (2 * mx * mr + c1) * (2 * cxr + c2)
    den = (mx * mx + mr * mr + c1) * (vx + vr + c2)
    return float(np.mean(num / den))


@dataclass
class QualityScores:
    nmse: float
    psnr_db: float
    ssim: float

    def csv_row(self, slice_id: str = "0") -> str:
        return f"{slice_id},{_fmt(self.nmse)},{_fmt(self.psnr_db)},{_fmt(self.ssim)}"


CSV_HEADER = "slice_id,nmse,psnr_db,ssim"


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def score(x, ref) -> QualityScores:
    return QualityScores(nmse(x, ref), psnr(x, ref), ssim(x, ref))
