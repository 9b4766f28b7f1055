"""Synthetic (RGB stack, CSS, reflectance) triples.

Reflectance cubes, camera sensitivities and light sources are all smooth
analytic curves sampled on the 10 nm band grid. Inputs are rendered on a
1 nm grid after linear interpolation, so they carry the discretization
loss that a band-grid render does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .spectral import (
    CssMatrix,
    IlluminationSpectrum,
    RgbStack,
    SamplingGrid,
    SpectralCube,
    render_fine,
    resample_rows,
    white_scale,
)

ILLUMINATION_ORDER = ("white", "amber", "halogen")


def _gauss(wl: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((wl - center) / sigma) ** 2)


def white_led(grid: SamplingGrid | None = None) -> IlluminationSpectrum:
    """Blue pump peak plus a broad phosphor hump."""
    grid = grid or SamplingGrid.bands()
    wl = grid.wavelengths
    values = 2.0 * (0.9 * _gauss(wl, 452.0, 11.0) + 0.75 * _gauss(wl, 565.0, 55.0))
    return IlluminationSpectrum(grid, values, label="white")


def amber_led(grid: SamplingGrid | None = None) -> IlluminationSpectrum:
    """Narrow band around 590 nm, exactly zero elsewhere."""
    grid = grid or SamplingGrid.bands()
    wl = grid.wavelengths
    values = 1.2 * _gauss(wl, 592.0, 9.0)
    values[values < 1e-3 * values.max()] = 0.0
    return IlluminationSpectrum(grid, values, label="amber")


def halogen(grid: SamplingGrid | None = None, temperature: float = 2856.0) -> IlluminationSpectrum:
    """Planck radiator (CIE illuminant A temperature), a smooth rising ramp."""
    grid = grid or SamplingGrid.bands()
    wl_m = grid.wavelengths * 1e-9
    c2 = 1.4388e-2
    rel = wl_m**-5 / np.expm1(c2 / (wl_m * temperature))
    return IlluminationSpectrum(grid, 1.5 * rel / rel.max(), label="halogen")


def normalize_illuminations(illums: Sequence[IlluminationSpectrum]) -> list[IlluminationSpectrum]:
    """Divide every spectrum by the single maximum over the whole set."""
    if len(illums) == 0:
        raise ValueError("no illuminations given")
    peak = max(float(np.max(L.values)) for L in illums)
    if peak <= 0:
        raise ValueError("all illuminations are zero")
    return [IlluminationSpectrum(L.grid, L.values / peak, label=L.label) for L in illums]


def bundled_illuminations(m_illums: int, grid: SamplingGrid | None = None) -> list[IlluminationSpectrum]:
    """White, then amber, then halogen, jointly normalized."""
    if not 1 <= m_illums <= len(ILLUMINATION_ORDER):
        raise ValueError(f"m_illums must be in 1..{len(ILLUMINATION_ORDER)}")
    makers = {"white": white_led, "amber": amber_led, "halogen": halogen}
    return normalize_illuminations([makers[name](grid) for name in ILLUMINATION_ORDER[:m_illums]])


def css_library(n: int = 6, seed: int = 2024, grid: SamplingGrid | None = None) -> list[CssMatrix]:
    """Smooth Gaussian-lobed camera sensitivities with varied peaks and widths."""
    grid = grid or SamplingGrid.bands()
    wl = grid.wavelengths
    rng = np.random.default_rng(seed)
    lib = []
    for k in range(n):
        rows = []
        for lo, hi, slo, shi in ((590, 625, 22, 38), (515, 550, 25, 40), (440, 470, 18, 32)):
            main = _gauss(wl, rng.uniform(lo, hi), rng.uniform(slo, shi))
            side = rng.uniform(0.0, 0.15) * _gauss(wl, rng.uniform(420, 720), rng.uniform(15, 40))
            rows.append(main + side)
        data = np.array(rows)
        lib.append(CssMatrix(grid, data / data.max(), label=f"css{k}"))
    return lib


def smooth_reflectance(height: int, width: int, rng: np.random.Generator, grid: SamplingGrid | None = None) -> SpectralCube:
    """Spatially mixed sums of Gaussian bumps, quantized to float32 values.

    The quantization makes a cube stored as SPC1 reload bit-exactly.
    """
    grid = grid or SamplingGrid.bands()
    wl = grid.wavelengths
    n_mat = int(rng.integers(3, 6))
    spectra = []
    for _ in range(n_mat):
        s = np.full(wl.shape, rng.uniform(0.05, 0.3))
        for _ in range(int(rng.integers(2, 6))):
            s += rng.uniform(0.1, 0.6) * _gauss(wl, rng.uniform(420, 720), rng.uniform(8, 40))
        spectra.append(np.clip(s, 0.0, 1.0))
    spectra = np.stack(spectra)

    coarse = rng.normal(size=(n_mat, 4, 4)) * 2.5
    fields = np.stack([ndimage.zoom(c, (height / 4, width / 4), order=3, mode="nearest") for c in coarse])
    fields = fields[:, :height, :width]
    weights = np.exp(fields - fields.max(axis=0, keepdims=True))
    weights /= weights.sum(axis=0, keepdims=True)
    shade = ndimage.zoom(rng.uniform(0.55, 1.0, size=(3, 3)), (height / 3, width / 3), order=1, mode="nearest")
    shade = np.clip(shade[:height, :width], 0.0, 1.0)
    cube = np.einsum("kb,khw->bhw", spectra, weights) * shade
    cube = np.clip(cube, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return SpectralCube(grid, cube)


@dataclass
class Triple:
    input: RgbStack
    css: CssMatrix
    truth: SpectralCube
    illum_labels: list[str]
    meta: dict = field(default_factory=dict)


def discrete_stack(R: SpectralCube, S: CssMatrix, illums: Sequence[IlluminationSpectrum]) -> np.ndarray:
    """Band-grid render of every light, scaled so a unit reflectance reads 1.0 in the brightest channel."""
    H = np.concatenate([S.data * L.values[None, :] for L in illums])
    scale = max(float(np.max(S.data @ L.values)) for L in illums)
    return (H @ R.matrix / scale).reshape((-1, R.height, R.width))


def synth_triple(
    R: SpectralCube,
    S: CssMatrix,
    illums: Sequence[IlluminationSpectrum],
    fine_grid: SamplingGrid | None = None,
) -> Triple:
    """Upsample to the fine grid, render each illumination, stack to ``3M`` channels.

    All lights of the triple share one white-reference scale, so relative
    intensities survive. ``meta['discretization_gap']`` holds the relative
    L2 gap to the band-grid render normalized the same way.
    """
    if not illums:
        raise ValueError("no illuminations given")
    band = R.grid
    for x in (S.grid, *(L.grid for L in illums)):
        if not band.same_as(x):
            raise ValueError("triple inputs must share the band grid")
    fine = fine_grid or SamplingGrid.cells(band)
    R_f = SpectralCube(fine, resample_rows(R.data, band, fine))
    S_f = CssMatrix(fine, resample_rows(S.data.T, band, fine).T)
    L_f = [IlluminationSpectrum(fine, resample_rows(L.values, band, fine), label=L.label) for L in illums]
    scale = white_scale(S_f, L_f)
    stack = np.concatenate([render_fine(R_f, S_f, L, scale=scale).data for L in L_f])
    stack = stack.astype(np.float32).astype(np.float64)
    disc = discrete_stack(R, S, illums)
    gap = float(np.linalg.norm(stack - disc) / max(np.linalg.norm(disc), 1e-300))
    return Triple(
        input=RgbStack(stack),
        css=S,
        truth=R,
        illum_labels=[L.label for L in illums],
        meta={"discretization_gap": gap, "white_scale": scale},
    )


def crop_patches(array, patch: int, stride: int) -> list[np.ndarray]:
    """Row-major list of ``patch x patch`` views over the last two axes."""
    arr = np.asarray(getattr(array, "data", array))
    h, w = arr.shape[-2:]
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be positive")
    return [
        arr[..., y : y + patch, x : x + patch]
        for y in range(0, h - patch + 1, stride)
        for x in range(0, w - patch + 1, stride)
    ]


def augment_flips(*arrays: np.ndarray, seed=None):
    """Flip every array the same way: horizontal and vertical each with p = 1/2.

    ``seed`` may be an int or a ``numpy.random.Generator``. Returns one array
    when one is passed, else a tuple.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    out = []
    for a in arrays:
        a = np.asarray(a)
        if flip_h:
            a = a[..., :, ::-1]
        if flip_v:
            a = a[..., ::-1, :]
        out.append(a)
    return out[0] if len(out) == 1 else tuple(out)


@dataclass
class CorpusSplit:
    train: list[Triple]
    test: list[Triple]
    seed: int
    illuminations: list[IlluminationSpectrum] = field(default_factory=list)


def make_split(
    reflectances: Sequence[SpectralCube],
    css_library: Sequence[CssMatrix],
    illums: Sequence[IlluminationSpectrum],
    ratio: float = 0.75,
    seed: int = 0,
    n_test_css: int | None = None,
) -> CorpusSplit:
    """Seeded image and CSS split; test triples only use held-out cameras.

    ``ceil(ratio * n)`` images go to training. Every training image is paired
    with every training CSS, every test image with every held-out CSS.
    """
    if len(reflectances) < 2 or len(css_library) < 2:
        raise ValueError("need at least 2 reflectance images and 2 CSS curves")
    if not illums:
        raise ValueError("no illuminations given")
    rng = np.random.default_rng(seed)
    img_order = rng.permutation(len(reflectances))
    css_order = rng.permutation(len(css_library))
    n_train = min(len(reflectances) - 1, math.ceil(ratio * len(reflectances)))
    n_test_css = n_test_css if n_test_css is not None else max(1, len(css_library) // 3)
    test_css = sorted(int(i) for i in css_order[:n_test_css])
    train_css = sorted(int(i) for i in css_order[n_test_css:])
    train_img = sorted(int(i) for i in img_order[:n_train])
    test_img = sorted(int(i) for i in img_order[n_train:])

    def build(images, cameras):
        out = []
        for i in images:
            for c in cameras:
                t = synth_triple(reflectances[i], css_library[c], illums)
                t.meta.update(image_index=i, css_index=c)
                out.append(t)
        return out

    return CorpusSplit(build(train_img, train_css), build(test_img, test_css), seed, list(illums))


def make_corpus(n_images: int = 16, size: int = 32, m_illums: int = 2, seed: int = 0, n_css: int = 6) -> CorpusSplit:
    """Desk-scale corpus from procedural reflectance and the bundled CSS/lights."""
    grid = SamplingGrid.bands()
    cubes = [smooth_reflectance(size, size, np.random.default_rng([seed, i]), grid) for i in range(n_images)]
    return make_split(cubes, css_library(n_css, grid=grid), bundled_illuminations(m_illums, grid), seed=seed)
