import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specrec.spectral import CssMatrix, IlluminationSpectrum, SamplingGrid, SpectralCube, build_system_matrix
from specrec.synth import (
    amber_led,
    augment_flips,
    bundled_illuminations,
    crop_patches,
    css_library,
    discrete_stack,
    make_corpus,
    make_split,
    normalize_illuminations,
    smooth_reflectance,
    synth_triple,
)

BANDS = SamplingGrid.bands()


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(n_images=16, size=16, m_illums=2, seed=0)


def light(values, label=None):
    return IlluminationSpectrum(BANDS, values, label=label)


# illumination normalization


def test_normalize_joint_max():
    w = light(np.linspace(0, 2.0, 31))
    a = light(np.linspace(1.0, 0, 31))
    nw, na = normalize_illuminations([w, a])
    assert nw.values.max() == 1.0 and na.values.max() == 0.5


def test_normalize_single_and_idempotent():
    (one,) = normalize_illuminations([light(np.linspace(0.1, 3.0, 31))])
    assert one.values.max() == 1.0
    twice = normalize_illuminations(normalize_illuminations([light(np.linspace(0.1, 3.0, 31)), amber_led()]))
    once = normalize_illuminations([light(np.linspace(0.1, 3.0, 31)), amber_led()])
    for a, b in zip(once, twice):
        np.testing.assert_array_equal(a.values, b.values)


def test_normalize_errors():
    with pytest.raises(ValueError):
        normalize_illuminations([])
    with pytest.raises(ValueError):
        normalize_illuminations([light(np.zeros(31))])


def test_bundled_illuminations_order():
    labels = [L.label for L in bundled_illuminations(3)]
    assert labels == ["white", "amber", "halogen"]
    with pytest.raises(ValueError):
        bundled_illuminations(4)


# triple synthesis


def test_band_constant_triple_matches_discrete(rng):
    # constant spectra survive interpolation unchanged, so both render paths agree
    R = SpectralCube(BANDS, np.broadcast_to(rng.uniform(0, 1, (1, 3, 3)), (31, 3, 3)).copy())
    S = CssMatrix(BANDS, np.broadcast_to(rng.uniform(0.1, 1, (3, 1)), (3, 31)).copy())
    illums = [light(np.full(31, 0.7))]
    t = synth_triple(R, S, illums)
    np.testing.assert_allclose(t.input.data, discrete_stack(R, S, illums), rtol=1e-6, atol=1e-7)


def test_triple_channel_count():
    R = smooth_reflectance(8, 8, np.random.default_rng(0))
    t = synth_triple(R, css_library(1)[0], bundled_illuminations(2))
    assert t.input.data.shape == (6, 8, 8)
    assert np.all(np.isfinite(t.input.data)) and np.all(t.input.data >= 0)


def test_smooth_triple_has_discretization_gap():
    R = smooth_reflectance(8, 8, np.random.default_rng(1))
    S = css_library(1)[0]
    illums = bundled_illuminations(2)
    t = synth_triple(R, S, illums)
    disc = discrete_stack(R, S, illums)
    gap = np.linalg.norm(t.input.data - disc) / np.linalg.norm(disc)
    assert gap > 1e-3
    assert abs(t.meta["discretization_gap"] - gap) <= 1e-6


def test_triple_grid_mismatch():
    R = smooth_reflectance(4, 4, np.random.default_rng(0))
    other = IlluminationSpectrum(SamplingGrid(425.0, 10.0, 31), np.ones(31))
    with pytest.raises(ValueError):
        synth_triple(R, css_library(1)[0], [other])
    with pytest.raises(ValueError):
        synth_triple(R, css_library(1)[0], [])


# cropping and flips


def test_crop_counts():
    img = np.zeros((3, 128, 128))
    assert len(crop_patches(img, 128, 64)) == 1
    assert len(crop_patches(img, 16, 8)) == 225


def test_crop_content_and_order(rng):
    img = rng.uniform(0, 1, (2, 20, 24))
    patches = crop_patches(img, 8, 6)
    assert len(patches) == 3 * 3
    np.testing.assert_array_equal(patches[1], img[:, 0:8, 6:14])
    np.testing.assert_array_equal(patches[3], img[:, 6:14, 0:8])


def test_crop_errors():
    with pytest.raises(ValueError):
        crop_patches(np.zeros((3, 8, 8)), 9, 1)
    with pytest.raises(ValueError):
        crop_patches(np.zeros((3, 8, 8)), 4, 0)


def _no_flip_seed():
    for s in range(100):
        r = np.random.default_rng(s)
        if r.random() >= 0.5 and r.random() >= 0.5:
            return s
    raise AssertionError


def test_flip_identity_seed(rng):
    x = rng.uniform(0, 1, (3, 4, 5))
    np.testing.assert_array_equal(augment_flips(x, seed=_no_flip_seed()), x)


def test_double_flip_is_identity(rng):
    x = rng.uniform(0, 1, (3, 4, 5))
    np.testing.assert_array_equal(x[..., ::-1][..., ::-1], x)
    for s in range(8):
        once = augment_flips(x, seed=s)
        np.testing.assert_array_equal(augment_flips(once, seed=s), x)


def test_flipped_input_renders_from_flipped_truth():
    R = smooth_reflectance(6, 6, np.random.default_rng(3))
    S = css_library(1)[0]
    illums = bundled_illuminations(2)
    stack = discrete_stack(R, S, illums)
    for s in range(8):
        fs, fr = augment_flips(stack, R.data, seed=s)
        np.testing.assert_allclose(discrete_stack(SpectralCube(BANDS, fr.copy()), S, illums), fs, rtol=0, atol=1e-14)


def test_flip_probability():
    flips = [augment_flips(np.arange(2.0).reshape(1, 1, 2), seed=s)[0, 0, 0] == 1.0 for s in range(2000)]
    assert 0.45 < np.mean(flips) < 0.55


# splits


def test_split_sizes(corpus):
    train_imgs = {t.meta["image_index"] for t in corpus.train}
    test_imgs = {t.meta["image_index"] for t in corpus.test}
    assert len(train_imgs) == 12 and len(test_imgs) == 4
    assert not train_imgs & test_imgs


def test_split_css_disjoint(corpus):
    train_css = {t.css.label for t in corpus.train}
    test_css = {t.css.label for t in corpus.test}
    assert len(train_css) == 4 and len(test_css) == 2
    assert not train_css & test_css


@given(st.integers(0, 10_000), st.integers(2, 9), st.integers(2, 7))
def test_split_disjoint_any_seed(seed, n_img, n_css):
    cubes = [SpectralCube(BANDS, np.full((31, 1, 1), 0.1 * (i + 1))) for i in range(n_img)]
    split = make_split(cubes, css_library(n_css), bundled_illuminations(1), seed=seed)
    tr_i = {t.meta["image_index"] for t in split.train}
    te_i = {t.meta["image_index"] for t in split.test}
    tr_c = {t.meta["css_index"] for t in split.train}
    te_c = {t.meta["css_index"] for t in split.test}
    assert tr_i and te_i and tr_c and te_c
    assert not tr_i & te_i and not tr_c & te_c


def test_split_deterministic():
    a = make_corpus(n_images=4, size=8, m_illums=1, seed=5)
    b = make_corpus(n_images=4, size=8, m_illums=1, seed=5)
    assert [t.meta for t in a.train] == [t.meta for t in b.train]
    for x, y in zip(a.train + a.test, b.train + b.test):
        np.testing.assert_array_equal(x.input.data, y.input.data)


def test_split_errors():
    with pytest.raises(ValueError):
        make_split([], css_library(2), bundled_illuminations(1))
    with pytest.raises(ValueError):
        make_split([smooth_reflectance(4, 4, np.random.default_rng(0))] * 2, css_library(1), bundled_illuminations(1))


def test_resynthesis_bit_exact(corpus):
    for t in corpus.test[:3]:
        again = synth_triple(t.truth, t.css, corpus.illuminations)
        assert again.input.data.tobytes() == t.input.data.tobytes()


def test_corpus_inputs_valid(corpus):
    for t in corpus.train + corpus.test:
        assert t.input.data.shape[0] == 6
        assert np.all(np.isfinite(t.input.data)) and np.all(t.input.data >= 0)


def test_white_reflector_reads_one():
    S = css_library(1)[0]
    illums = bundled_illuminations(2)
    t = synth_triple(SpectralCube(BANDS, np.ones((31, 2, 2))), S, illums)
    assert abs(t.input.data.max() - 1.0) <= 1e-6
    H = build_system_matrix(S, illums).data
    assert abs(discrete_stack(SpectralCube(BANDS, np.ones((31, 1, 1))), S, illums).max() - 1.0) <= 1e-12
    assert H.shape == (6, 31)
