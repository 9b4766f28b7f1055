"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .spectral import CssMatrix, IlluminationSpectrum


def _values(x) -> np.ndarray:
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "data"):
        x = [getattr(v, "data") for v in x]
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def check_stack(x, m_illums: int | None = None, batch: bool = True) -> np.ndarray:
    """RGB stacks as a finite ``(N, 3M, H, W)`` array (``(3M, H, W)`` when ``batch`` is False)."""
    arr = _values(x)
    if arr.ndim == 3 and batch:
        arr = arr[None]
    want = 4 if batch else 3
    if arr.ndim != want:
        raise ValueError(f"expected a {want}-d RGB stack array, got shape {arr.shape}")
    c = arr.shape[-3]
    if c % 3 or c == 0:
        raise ValueError(f"RGB stack needs 3M channels, got {c}")
    if m_illums is not None and c != 3 * m_illums:
        raise ValueError(f"expected {3 * m_illums} channels for M={m_illums}, got {c}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("RGB stack contains non-finite values")
    return arr


def check_cube(x, bands: int = 31, batch: bool = True) -> np.ndarray:
    """Reflectance cubes as a finite ``(N, B, H, W)`` array."""
    arr = _values(x)
    if arr.ndim == 3 and batch:
        arr = arr[None]
    want = 4 if batch else 3
    if arr.ndim != want or arr.shape[-3] != bands:
        raise ValueError(f"expected cubes with {bands} bands, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cube contains non-finite values")
    return arr


def check_css(css, bands: int = 31) -> np.ndarray:
    """A ``(3, B)`` array from a :class:`CssMatrix` or array-like."""
    arr = css.data if isinstance(css, CssMatrix) else np.asarray(css, dtype=np.float64)
    if arr.shape != (3, bands):
        raise ValueError(f"CSS must be 3x{bands}, got {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("CSS entries must be finite and nonnegative")
    return np.asarray(arr, dtype=np.float64)


def check_illuminations(illums, bands: int = 31) -> np.ndarray:
    """An ``(M, B)`` array from spectra or an array-like, M in 1..3."""
    if isinstance(illums, IlluminationSpectrum):
        illums = [illums]
    if isinstance(illums, Sequence) and illums and isinstance(illums[0], IlluminationSpectrum):
        arr = np.stack([L.values for L in illums])
    else:
        arr = np.atleast_2d(np.asarray(illums, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[1] != bands or not 1 <= arr.shape[0] <= 3:
        raise ValueError(f"illuminations must be (M, {bands}) with M in 1..3, got {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("illumination values must be finite and nonnegative")
    if not np.any(arr):
        raise ValueError("illuminations are all zero")
    return arr
