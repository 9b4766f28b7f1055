import json

import numpy as np
import pytest

from specrec.corpus import CorpusError, load_corpus, read_manifest, verify_corpus, write_corpus
from specrec.io import read_css_csv, read_curve_csv, read_spc, sha256_file, write_css_csv, write_curve_csv, write_spc
from specrec.spectral import CssMatrix, IlluminationSpectrum, SamplingGrid
from specrec.synth import make_corpus
from specrec.tinynet import checkpoint
from specrec.tinynet.net import NetConfig, ParamSet, init_params

BANDS = SamplingGrid.bands()


def test_curve_csv_round_trip(tmp_path, rng):
    L = IlluminationSpectrum(BANDS, rng.uniform(0, 1, 31), label="x")
    write_curve_csv(tmp_path / "l.csv", L, comment="test light")
    back = read_curve_csv(tmp_path / "l.csv")
    assert back.grid.same_as(BANDS) and back.label == "l"
    np.testing.assert_array_equal(back.values, L.values)


def test_css_csv_round_trip(tmp_path, rng):
    S = CssMatrix(BANDS, rng.uniform(0, 1, (3, 31)))
    write_css_csv(tmp_path / "s.csv", S)
    back = read_css_csv(tmp_path / "s.csv", label="cam")
    assert back.label == "cam"
    np.testing.assert_array_equal(back.data, S.data)


def test_csv_header_and_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("wavelength,value\n420,0.1\n430,0.2\n")
    assert read_curve_csv(p).values.tolist() == [0.1, 0.2]
    p.write_text("420,0.1\n430,0.2,0.3\n")
    with pytest.raises(ValueError, match="columns"):
        read_curve_csv(p)
    p.write_text("420,0.1\n425,0.2\n440,0.3\n")
    with pytest.raises(ValueError, match="uniformly"):
        read_curve_csv(p)
    p.write_text("430,0.1\n420,0.2\n")
    with pytest.raises(ValueError, match="ascending"):
        read_curve_csv(p)


def test_spc_round_trip(tmp_path, rng):
    a = rng.uniform(0, 1, (6, 5, 4)).astype(np.float32).astype(np.float64)
    write_spc(tmp_path / "a.spc", a)
    np.testing.assert_array_equal(read_spc(tmp_path / "a.spc"), a)
    raw = (tmp_path / "a.spc").read_bytes()
    assert raw[:4] == b"SPC1" and len(raw) == 16 + 4 * a.size


def test_spc_errors(tmp_path):
    with pytest.raises(ValueError):
        write_spc(tmp_path / "x.spc", np.zeros((2, 2)))
    (tmp_path / "bad.spc").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError, match="SPC1"):
        read_spc(tmp_path / "bad.spc")
    write_spc(tmp_path / "t.spc", np.zeros((1, 2, 2)))
    (tmp_path / "t.spc").write_bytes((tmp_path / "t.spc").read_bytes()[:-1])
    with pytest.raises(ValueError, match="payload"):
        read_spc(tmp_path / "t.spc")


# corpus directories


@pytest.fixture(scope="module")
def small_split():
    return make_corpus(n_images=4, size=12, m_illums=2, seed=3, n_css=3)


def test_corpus_round_trip(tmp_path, small_split):
    manifest = write_corpus(small_split, tmp_path, params={"n": 4})
    assert manifest["seed"] == 3 and manifest["params"] == {"n": 4}
    assert verify_corpus(tmp_path) == []
    back = load_corpus(tmp_path)
    assert len(back.train) == len(small_split.train) and len(back.test) == len(small_split.test)
    for a, b in zip(small_split.train + small_split.test, back.train + back.test):
        assert a.input.data.tobytes() == b.input.data.tobytes()
        assert a.truth.data.tobytes() == b.truth.data.tobytes()
        np.testing.assert_array_equal(a.css.data, b.css.data)
        assert a.illum_labels == b.illum_labels
        assert b.meta["id"].startswith(("train", "test"))
    for a, b in zip(small_split.illuminations, back.illuminations):
        np.testing.assert_array_equal(a.values, b.values)


def test_corpus_flipped_byte_detected(tmp_path, small_split):
    write_corpus(small_split, tmp_path)
    target = tmp_path / "test" / "test000.truth.spc"
    raw = bytearray(target.read_bytes())
    raw[40] ^= 0x01
    target.write_bytes(bytes(raw))
    assert verify_corpus(tmp_path) == ["test/test000.truth.spc"]
    with pytest.raises(CorpusError, match="hash mismatch"):
        load_corpus(tmp_path)
    assert len(load_corpus(tmp_path, verify=False).test) == len(small_split.test)


def test_corpus_missing_file_and_bad_manifest(tmp_path, small_split):
    write_corpus(small_split, tmp_path)
    (tmp_path / "css" / f"{small_split.train[0].css.label}.csv").unlink()
    assert len(verify_corpus(tmp_path)) == 1
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CorpusError, match="JSON"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(CorpusError, match="format"):
        read_manifest(tmp_path)


def test_corpus_write_deterministic(tmp_path, small_split):
    write_corpus(small_split, tmp_path / "a")
    write_corpus(small_split, tmp_path / "b")
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    assert sha256_file(tmp_path / "a/train/train000.input.spc") == sha256_file(tmp_path / "b/train/train000.input.spc")


# checkpoints


def f32_params(config, seed=0):
    p = init_params(config, seed)
    return ParamSet({k: v.astype(np.float32).astype(np.float64) for k, v in p.tensors.items()}, p.partitions)


def test_checkpoint_round_trip(tmp_path):
    config = NetConfig(m_illums=2, base_channels=4, fuse="zero_m")
    params = f32_params(config)
    checkpoint.save(tmp_path / "m.tnw", params, config, extra={"seed": 7})
    back, cfg, extra = checkpoint.load(tmp_path / "m.tnw")
    assert cfg == config and extra == {"seed": 7}
    assert back.equals(params)
    assert list(back.tensors) == list(params.tensors)


def test_checkpoint_encode_deterministic():
    config = NetConfig(base_channels=4)
    p = f32_params(config)
    assert checkpoint.encode(p, config) == checkpoint.encode(p.copy(), config)


def test_checkpoint_rounds_to_float32():
    config = NetConfig(base_channels=4)
    p = init_params(config, 1)
    back, _, _ = checkpoint.decode(checkpoint.encode(p, config))
    for name in p.names():
        np.testing.assert_array_equal(back[name], p[name].astype(np.float32).astype(np.float64))


def test_checkpoint_corruption():
    config = NetConfig(base_channels=4)
    blob = checkpoint.encode(f32_params(config), config)
    with pytest.raises(checkpoint.CheckpointError, match="TNW1"):
        checkpoint.decode(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(blob[:-3])
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.decode(blob + b"\0")


def test_checkpoint_config_mismatch():
    small = NetConfig(base_channels=4)
    wide = NetConfig(base_channels=8)
    with pytest.raises(checkpoint.CheckpointError, match="match"):
        checkpoint.check_compatible(f32_params(small), wide)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(checkpoint.encode(f32_params(small), wide))
