"""Wavelength grids, spectra, color formation and subspace linear algebra.

Spectral quantities are stored band-major so that rendering is a plain
matrix product: a reflectance cube is ``(B, H, W)`` and its matrix view is
``(B, N)`` with ``N = H * W``. All numerics run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_RIDGE = 1e-9


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform wavelength axis ``start_nm + k * step_nm`` for ``k < count``."""

    start_nm: float = 420.0
    step_nm: float = 10.0
    count: int = 31

    def __post_init__(self):
        if not self.step_nm > 0:
            raise ValueError(f"step_nm must be positive, got {self.step_nm}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    @classmethod
    def bands(cls) -> "SamplingGrid":
        """The 31-band working grid, 420-720 nm at 10 nm."""
        return cls(420.0, 10.0, 31)

    @classmethod
    def fine(cls) -> "SamplingGrid":
        """1 nm grid spanning the band range, 420-720 nm (301 samples)."""
        return cls(420.0, 1.0, 301)

    @classmethod
    def cells(cls, band: "SamplingGrid | None" = None, step_nm: float = 1.0) -> "SamplingGrid":
        """Cell-centred fine grid where every band owns the same number of samples.

        Band ``b`` covers ``[lambda_b - step_band/2, lambda_b + step_band/2)``;
        for the default band grid this is 415.5 ... 724.5 nm (310 samples).
        A band-constant spectrum then integrates to exactly
        ``step_band / step_nm`` times its band sum.
        """
        band = band or cls.bands()
        ratio = band.step_nm / step_nm
        per_band = int(round(ratio))
        if abs(ratio - per_band) > 1e-9 or per_band < 1:
            raise ValueError("band step must be an integer multiple of the fine step")
        start = band.start_nm - band.step_nm / 2 + step_nm / 2
        return cls(start, step_nm, band.count * per_band)

    @property
    def wavelengths(self) -> np.ndarray:
        return self.start_nm + self.step_nm * np.arange(self.count, dtype=np.float64)

    @property
    def stop_nm(self) -> float:
        return self.start_nm + self.step_nm * (self.count - 1)

    def same_as(self, other: "SamplingGrid", tol: float = 1e-9) -> bool:
        return (
            self.count == other.count
            and abs(self.start_nm - other.start_nm) <= tol
            and abs(self.step_nm - other.step_nm) <= tol
        )


def _check_grids(*grids: SamplingGrid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not first.same_as(g):
            raise ValueError(f"sampling grid mismatch: {first} vs {g}")


@dataclass
class SpectralCurve:
    grid: SamplingGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size == 0:
            raise ValueError("empty spectral curve")
        if self.values.size != self.grid.count:
            raise ValueError(f"curve has {self.values.size} values for a {self.grid.count}-sample grid")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("spectral curve values must be finite and nonnegative")


@dataclass
class IlluminationSpectrum(SpectralCurve):
    label: str = ""


@dataclass
class CssMatrix:
    """Camera spectral sensitivity, rows are red, green, blue."""

    grid: SamplingGrid
    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (3, self.grid.count):
            raise ValueError(f"CSS must be 3x{self.grid.count}, got {self.data.shape}")
        if np.any(self.data < 0) or not np.all(np.isfinite(self.data)):
            raise ValueError("CSS entries must be finite and nonnegative")


@dataclass
class SpectralCube:
    """Reflectance image, ``data`` shaped ``(B, H, W)``.

    Ground-truth cubes live in [0, 1]; recovered cubes may leave that range,
    so the range is checked by :meth:`is_reflectance` rather than on
    construction.
    """

    grid: SamplingGrid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data[:, None, None]
        if self.data.ndim != 3 or self.data.shape[0] != self.grid.count:
            raise ValueError(f"cube must be ({self.grid.count}, H, W), got {self.data.shape}")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def matrix(self) -> np.ndarray:
        return self.data.reshape(self.bands, -1)

    def is_reflectance(self) -> bool:
        return bool(np.all(self.data >= 0) and np.all(self.data <= 1))


@dataclass
class RgbStack:
    """Stack of ``M`` RGB images, ``data`` shaped ``(3M, H, W)``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data[:, None, None]
        if self.data.ndim != 3 or self.data.shape[0] % 3:
            raise ValueError(f"RGB stack must be (3M, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("RGB stack contains non-finite values")

    @property
    def m_illums(self) -> int:
        return self.data.shape[0] // 3

    @property
    def matrix(self) -> np.ndarray:
        return self.data.reshape(self.data.shape[0], -1)


@dataclass
class SystemMatrix:
    """Stacked ``S * L_m`` blocks, ``data`` shaped ``(3M, B)``."""

    data: np.ndarray
    grid: SamplingGrid = field(default_factory=SamplingGrid.bands)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] % 3 or self.data.shape[0] == 0:
            raise ValueError(f"system matrix must be (3M, B), got {self.data.shape}")

    @property
    def m_illums(self) -> int:
        return self.data.shape[0] // 3


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def resample_linear(curve: SpectralCurve, target: SamplingGrid) -> SpectralCurve:
    """Piecewise-linear resampling; outside the source range the end value is held."""
    src = curve.grid.wavelengths
    if np.any(np.diff(src) <= 0):
        raise ValueError("source grid must be strictly increasing")
    values = np.interp(target.wavelengths, src, curve.values)
    if isinstance(curve, IlluminationSpectrum):
        return IlluminationSpectrum(target, values, label=curve.label)
    return SpectralCurve(target, values)


def resample_rows(values: np.ndarray, source: SamplingGrid, target: SamplingGrid) -> np.ndarray:
    """Linear resampling along the first axis of a ``(count, ...)`` array."""
    values = np.asarray(values, dtype=np.float64)
    src = source.wavelengths
    dst = target.wavelengths
    idx = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, max(source.count - 2, 0))
    if source.count == 1:
        return np.repeat(values[:1], target.count, axis=0)
    t = np.clip((dst - src[idx]) / source.step_nm, 0.0, 1.0)
    shape = (-1,) + (1,) * (values.ndim - 1)
    t = t.reshape(shape)
    return (1.0 - t) * values[idx] + t * values[idx + 1]


def render_discrete(R, S: CssMatrix, L: IlluminationSpectrum) -> RgbStack:
    """``I = (S * L) @ R`` on a shared band grid."""
    if isinstance(R, SpectralCube):
        _check_grids(R.grid, S.grid, L.grid)
        cube = R.data
    else:
        _check_grids(S.grid, L.grid)
        cube = np.asarray(R, dtype=np.float64)
    H = S.data * L.values[None, :]
    out = H @ cube.reshape(cube.shape[0], -1)
    return RgbStack(out.reshape((3,) + cube.shape[1:]))


def white_scale(S: CssMatrix, illums: Sequence[IlluminationSpectrum]) -> float:
    """Raw fine-grid response of a unit reflectance in its brightest channel and light."""
    step = S.grid.step_nm
    best = max(float(np.max(S.data @ L.values)) * step for L in illums)
    if best <= 0:
        raise ValueError("white reference renders to zero")
    return best


def render_fine(R: SpectralCube, S: CssMatrix, L: IlluminationSpectrum, scale: float | None = None) -> RgbStack:
    """Rectangle-rule approximation of the color-formation integral.

    ``I_c = sum_l S_c(l) L(l) R(l) dl / scale``. When ``scale`` is None it
    defaults to :func:`white_scale` of ``(S, [L])`` so that a unit
    reflectance maps to 1.0 in the max channel. Pass ``scale=1.0`` for the
    raw sum.
    """
    _check_grids(R.grid, S.grid, L.grid)
    if scale is None:
        scale = white_scale(S, [L])
    H = S.data * L.values[None, :] * S.grid.step_nm
    out = H @ R.matrix / scale
    return RgbStack(out.reshape((3, R.height, R.width)))


def build_system_matrix(S: CssMatrix, illums: Sequence[IlluminationSpectrum]) -> SystemMatrix:
    if len(illums) == 0:
        raise ValueError("at least one illumination is required")
    _check_grids(S.grid, *(L.grid for L in illums))
    return SystemMatrix(system_matrix(S.data, np.stack([L.values for L in illums])), S.grid)


def system_matrix(css: np.ndarray, illums: np.ndarray) -> np.ndarray:
    """Array form: ``css`` (..., 3, B), ``illums`` (M, B) -> (..., 3M, B)."""
    css = np.asarray(css, dtype=np.float64)
    illums = np.atleast_2d(np.asarray(illums, dtype=np.float64))
    blocks = css[..., None, :, :] * illums[:, None, :]
    return blocks.reshape(css.shape[:-2] + (3 * illums.shape[0], css.shape[-1]))


def projection_operator(H, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """``H^T (H H^T + ridge I)^-1`` as a ``(B, 3M)`` matrix (batched over leading axes).

    ``ridge`` is a scalar or an array matching the leading (batch) axes of ``H``.
    """
    H = _array(H)
    if not np.any(H):
        raise ValueError("system matrix is all zero; projection is undefined")
    gram = H @ np.swapaxes(H, -1, -2)
    ridge = np.asarray(ridge, dtype=np.float64)
    if np.any(ridge):
        gram = gram + ridge[..., None, None] * np.eye(gram.shape[-1])
    # solve(G, H) = G^-1 H, transposed gives H^T G^-1 since G is symmetric
    return np.swapaxes(np.linalg.solve(gram, H), -1, -2)


def subspace_project(H, I, ridge: float = DEFAULT_RIDGE):
    """Component of the reflectance inside the row space of ``H``.

    Returns ``H^T (H H^T + ridge I)^-1 I`` per pixel. ``I`` may be an
    :class:`RgbStack` (returns a :class:`SpectralCube`) or an array shaped
    ``(3M, ...)`` (returns an array ``(B, ...)``).
    """
    P = projection_operator(H, ridge)
    obs = _array(I)
    if obs.shape[0] != P.shape[1]:
        raise ValueError(f"observation has {obs.shape[0]} channels, system matrix has {P.shape[1]} rows")
    out = (P @ obs.reshape(obs.shape[0], -1)).reshape((P.shape[0],) + obs.shape[1:])
    if isinstance(I, RgbStack):
        grid = getattr(H, "grid", SamplingGrid(420.0, 10.0, P.shape[0]))
        if grid.count != P.shape[0]:
            grid = SamplingGrid(420.0, 10.0, P.shape[0])
        return SpectralCube(grid, out)
    return out


def recover_linear(H, I, omega: float = 1.0, ridge: float = DEFAULT_RIDGE):
    """Rescaled subspace estimate ``omega * R_parallel``."""
    if not omega > 0:
        raise ValueError("rescale factor must be positive")
    R = subspace_project(H, I, ridge)
    if isinstance(R, SpectralCube):
        return SpectralCube(R.grid, omega * R.data)
    return omega * R


def decomposition_residual(H, R) -> float:
    """``max |H (R - R_parallel)|`` for ``I = H R``; zero up to rounding."""
    Hm = _array(H)
    Rm = _array(R).reshape(Hm.shape[1], -1)
    I = Hm @ Rm
    R_par = subspace_project(Hm, I, ridge=0.0)
    return float(np.max(np.abs(Hm @ (Rm - R_par))))


def henderson_searle_check(H_hat, delta_H, I) -> float:
    """Compare the perturbed projection computed directly and via the SVD expansion.

    The direct path inverts ``(H+dH)(H+dH)^T``. The expansion writes that
    Gram matrix as ``A + E`` with ``A = H H^T`` and
    ``E = H dH^T + dH H^T + dH dH^T = U diag(s) V^T`` and applies

        (A + E)^-1 = A^-1 - A^-1 U (I + diag(s) V^T A^-1 U)^-1 diag(s) V^T A^-1

    Returns the max elementwise discrepancy between the two projections.
    """
    Hh = _array(H_hat)
    dH = _array(delta_H)
    obs = _array(I)
    obs = obs.reshape(obs.shape[0], -1)
    if Hh.shape != dH.shape:
        raise ValueError("H_hat and delta_H shapes differ")
    Hp = Hh + dH

    direct = Hp.T @ np.linalg.solve(Hp @ Hp.T, obs)

    A = Hh @ Hh.T
    E = Hh @ dH.T + dH @ Hh.T + dH @ dH.T
    U, s, Vt = np.linalg.svd(E)
    A_inv = np.linalg.inv(A)
    SVt = s[:, None] * Vt
    inner = np.eye(A.shape[0]) + SVt @ A_inv @ U
    cond = np.linalg.cond(inner)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"expansion inner matrix is singular (condition {cond:.3e})")
    gram_inv = A_inv - A_inv @ U @ np.linalg.solve(inner, SVt @ A_inv)
    expanded = Hp.T @ (gram_inv @ obs)
    return float(np.max(np.abs(direct - expanded)))
