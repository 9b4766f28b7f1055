"""Reflectance recovery metrics: MAE, RMSE, SAS, PSNR, SSIM."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def sas(a, b) -> float:
    """Mean per-pixel spectral angle in radians.

    Spectra run along axis 0. Pixels where either spectrum is all zero count
    as angle 0 and are reported with a :class:`RuntimeWarning`.
    """
    a, b = _pair(a, b)
    A = a.reshape(a.shape[0], -1)
    B = b.reshape(b.shape[0], -1)
    na, nb = np.linalg.norm(A, axis=0), np.linalg.norm(B, axis=0)
    zero = (na == 0) | (nb == 0)
    if np.any(zero):
        warnings.warn(f"{int(zero.sum())} zero spectra in SAS; counted as angle 0", RuntimeWarning, stacklevel=2)
    ok = ~zero
    u, v = A[:, ok] / na[ok], B[:, ok] / nb[ok]
    # half-angle form: exact at 0 and pi, where arccos of the cosine loses about 8 digits
    ang = np.zeros_like(na)
    ang[ok] = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    return float(np.mean(ang))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    full = ndimage.correlate(img, win, mode="constant")
    off = k // 2
    return full[off : img.shape[0] - (k - 1 - off), off : img.shape[1] - (k - 1 - off)]


def ssim_band(x: np.ndarray, y: np.ndarray, peak: float = 1.0, size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM of one 2-D band over all fully-contained windows."""
    if x.shape[0] < size or x.shape[1] < size:
        raise ValueError(f"image {x.shape} smaller than the {size}x{size} window")
    win = gaussian_window(size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x**2
    syy = _filter_valid(y * y, win) - mu_y**2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0) -> float:
    """SSIM averaged over bands; each band uses an 11x11 Gaussian window (sigma 1.5)."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    return float(np.mean([ssim_band(x, y, peak) for x, y in zip(a, b)]))


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    sas: float
    psnr: float
    ssim: float
    band_mae: np.ndarray = field(repr=False)

    @property
    def psnr_is_infinite(self) -> bool:
        return math.isinf(self.psnr)

    def as_dict(self) -> dict[str, float]:
        return {"mae": self.mae, "rmse": self.rmse, "sas": self.sas, "psnr": self.psnr, "ssim": self.ssim}

    def to_text(self) -> str:
        lines = [f"{k}={v!r}" for k, v in self.as_dict().items()]
        lines.append(f"psnr_infinite={self.psnr_is_infinite}")
        return "\n".join(lines) + "\n"

    def csv_row(self, label: str = "") -> str:
        vals = ",".join(repr(v) for v in self.as_dict().values())
        return f"{label},{vals}" if label else vals

    @staticmethod
    def csv_header(with_label: bool = True) -> str:
        cols = "mae,rmse,sas,psnr,ssim"
        return f"id,{cols}" if with_label else cols


def evaluate(recovered, truth, peak: float = 1.0) -> MetricsReport:
    """All five metrics plus per-band MAE for a ``(B, H, W)`` pair."""
    r, t = _pair(recovered, truth)
    band_mae = np.mean(np.abs(r - t).reshape(r.shape[0], -1), axis=1)
    return MetricsReport(
        mae=mae(r, t),
        rmse=rmse(r, t),
        sas=sas(r, t),
        psnr=psnr(r, t, peak),
        ssim=ssim(r, t, peak),
        band_mae=band_mae,
    )


def pixel_mae_map(recovered, truth) -> np.ndarray:
    """Per-pixel MAE across bands, shaped ``(H, W)``."""
    r, t = _pair(recovered, truth)
    return np.mean(np.abs(r - t), axis=0)


def pearson(x, y) -> float:
    """Pearson correlation; ``nan`` when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    den = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if den == 0:
        return math.nan
    return float(np.clip(np.sum(xc * yc) / den, -1.0, 1.0))
