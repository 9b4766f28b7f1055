"""File formats: spectral curve / CSS CSV, SPC1 binary cubes, content hashes."""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .spectral import CssMatrix, IlluminationSpectrum, SamplingGrid, SpectralCurve

SPC_MAGIC = b"SPC1"


def _grid_from_wavelengths(wl: np.ndarray) -> SamplingGrid:
    if wl.size == 0:
        raise ValueError("no samples")
    if wl.size == 1:
        return SamplingGrid(float(wl[0]), 1.0, 1)
    steps = np.diff(wl)
    if np.any(steps <= 0):
        raise ValueError("wavelengths must be strictly ascending")
    step = float(steps[0])
    if np.max(np.abs(steps - step)) > 1e-6 * max(1.0, step):
        raise ValueError("wavelengths must be uniformly spaced")
    return SamplingGrid(float(wl[0]), step, int(wl.size))


def _read_rows(path, ncols: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != ncols:
            raise ValueError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            # tolerate a single header line
            if rows:
                raise ValueError(f"{path}:{lineno}: non-numeric row") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, ncols)


def read_curve_csv(path, label: str | None = None) -> IlluminationSpectrum:
    """Read ``wavelength_nm,value`` rows; ``#`` starts a comment."""
    rows = _read_rows(path, 2)
    grid = _grid_from_wavelengths(rows[:, 0])
    return IlluminationSpectrum(grid, rows[:, 1], label=label if label is not None else Path(path).stem)


def write_curve_csv(path, curve: SpectralCurve, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.extend(f"{wl!r},{v!r}" for wl, v in zip(curve.grid.wavelengths.tolist(), curve.values.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_css_csv(path, label: str | None = None) -> CssMatrix:
    """Read ``wavelength_nm,red,green,blue`` rows."""
    rows = _read_rows(path, 4)
    grid = _grid_from_wavelengths(rows[:, 0])
    return CssMatrix(grid, rows[:, 1:].T, label=label if label is not None else Path(path).stem)


def write_css_csv(path, css: CssMatrix) -> None:
    lines = ["# wavelength_nm,red,green,blue"]
    for wl, col in zip(css.grid.wavelengths.tolist(), css.data.T.tolist()):
        lines.append(",".join(repr(v) for v in [wl, *col]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_spc(path, data: np.ndarray) -> None:
    """Write a ``(C, H, W)`` array as SPC1: magic, u32 C/H/W, f32 payload."""
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ValueError(f"SPC1 payload must be 3-D, got shape {arr.shape}")
    header = SPC_MAGIC + struct.pack("<III", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_spc(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SPC_MAGIC:
        raise ValueError(f"{path}: not an SPC1 file")
    c, h, w = struct.unpack("<III", raw[4:16])
    payload = raw[16:]
    if len(payload) != 4 * c * h * w:
        raise ValueError(f"{path}: payload size {len(payload)} does not match {c}x{h}x{w}")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float64)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
