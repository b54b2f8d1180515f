import shutil
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flroute import data
from flroute.data import ClientData, CorpusConfig, Dataset
from flroute.errors import ConfigurationError, FormatError

from oracles import rudy_loops


def small_config(**kw) -> CorpusConfig:
    base = dict(clients=3, families=(1, 2, 4), designs_per_client=(3, 3, 4),
                placements_per_design={1: 2, 2: 2, 3: 2, 4: 2})
    base.update(kw)
    return CorpusConfig(**base)


@pytest.fixture(scope="module")
def small_corpus():
    return data.generate_corpus(small_config())


def corpora_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for ca, cb in zip(a, b):
        if (ca.client_id, ca.family_id) != (cb.client_id, cb.family_id):
            return False
        for sa, sb in ((ca.train, cb.train), (ca.test, cb.test)):
            if sa.x.tobytes() != sb.x.tobytes() or sa.y.tobytes() != sb.y.tobytes():
                return False
            if sa.design_ids != sb.design_ids or sa.x.dtype != sb.x.dtype or sa.y.dtype != sb.y.dtype:
                return False
    return True


# -- RUDY ---------------------------------------------------------------------------


def test_rudy_no_nets():
    assert np.all(data.rudy_map([], 4, 4) == 0)


def test_rudy_single_2x2():
    out = data.rudy_map([(1, 1, 3, 3)], 4, 4)
    expect = np.zeros((4, 4))
    expect[1:3, 1:3] = 1.0
    assert np.array_equal(out, expect)


def test_rudy_zero_area_is_one_cell():
    out = data.rudy_map([(2, 1, 2, 1)], 4, 4)
    assert out[1, 2] == 2.0 and out.sum() == 2.0


def test_rudy_rejects_out_of_grid():
    with pytest.raises(ConfigurationError):
        data.rudy_map([(0, 0, 5, 2)], 4, 4)


rects = st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 4), st.integers(0, 4)).map(
    lambda t: (t[0], t[1], min(t[0] + t[2], 8), min(t[1] + t[3], 8))
)


@given(st.lists(rects, max_size=6))
def test_rudy_matches_oracle_and_is_additive(nets):
    out = data.rudy_map(nets, 8, 8)
    np.testing.assert_allclose(out, rudy_loops(nets, 8, 8), rtol=1e-15)
    parts = sum((data.rudy_map([n], 8, 8) for n in nets), np.zeros((8, 8)))
    np.testing.assert_allclose(out, parts, rtol=1e-14)


# -- generation ---------------------------------------------------------------------


def test_generation_is_deterministic(small_corpus):
    assert corpora_equal(small_corpus, data.generate_corpus(small_config()))
    assert not corpora_equal(small_corpus, data.generate_corpus(small_config(seed=1)))


def test_default_corpus_shape():
    corpus = data.generate_corpus(CorpusConfig())
    assert len(corpus) == 9
    assert [c.family_id for c in corpus] == list(data.DEFAULT_FAMILIES)
    for client in corpus:
        assert client.train.x.shape[1:] == (4, 16, 16)
        assert len(client.train) >= 1 and len(client.test) >= 1
        for ds in (client.train, client.test):
            rates = ds.y.reshape(len(ds), -1).mean(axis=1)
            assert rates.min() >= data.MIN_HOTSPOT_RATE and rates.max() <= data.MAX_HOTSPOT_RATE
            assert np.all(np.isfinite(ds.x)) and ds.x.min() >= 0
            assert set(np.unique(ds.y)) <= {0, 1}
    data.check_leakage(corpus)


def test_design_level_split_fraction(small_corpus):
    for client in small_corpus:
        n = len(client.train.designs) + len(client.test.designs)
        assert len(client.train.designs) == max(1, min(n - 1, round(0.7 * n)))


def test_homogeneous_limit_shares_one_rule():
    rules = data.make_family_rules(small_config(heterogeneity=0.0, label_noise=0.0))
    first = rules[1]
    for rule in rules.values():
        assert np.array_equal(rule.coef, first.coef) and rule.interaction == first.interaction
        assert np.array_equal(rule.feature_scale, first.feature_scale)
        assert np.array_equal(rule.feature_offset, first.feature_offset)
        assert rule.threshold == first.threshold


def test_labels_follow_rule_without_noise():
    config = small_config(label_noise=0.0)
    rules = data.make_family_rules(config)
    rule = rules[1]
    rng = np.random.default_rng(0)
    bp = data._make_blueprint(rng, "probe", rule, config.grid)
    x, y = data._placement(bp, rule, config, rng)
    # label is a deterministic function of the visible features for noise 0
    score = data._hidden_score(x - rule.feature_shift[:, None, None], rule, bp.coef_offset)
    assert np.array_equal(y, (score > rule.threshold).astype(np.uint8))


def test_calibration_shift_is_invisible_to_the_rule(monkeypatch):
    monkeypatch.setattr(data, "_FAMILY_SHIFT_SPREAD", 3.0)
    config = small_config(label_noise=0.0)
    shifted = data.make_family_rules(config)
    monkeypatch.setattr(data, "_FAMILY_SHIFT_SPREAD", 0.0)
    plain = data.make_family_rules(config)
    for fam in plain:
        assert shifted[fam].threshold == plain[fam].threshold
        assert np.all(shifted[fam].feature_shift > 0) and not np.any(plain[fam].feature_shift)
        bp = data._make_blueprint(np.random.default_rng(fam), "probe", plain[fam], config.grid)
        x0, y0 = data._placement(bp, plain[fam], config, np.random.default_rng(1))
        x1, y1 = data._placement(bp, shifted[fam], config, np.random.default_rng(1))
        assert np.array_equal(y0, y1)
        np.testing.assert_allclose(x1 - x0, np.broadcast_to(shifted[fam].feature_shift[:, None, None], x0.shape))


def test_leakage_check_catches_shared_design(small_corpus):
    a = small_corpus[0]
    moved = ClientData(a.client_id, a.family_id, a.train, Dataset.concat([a.test, a.train]))
    with pytest.raises(ConfigurationError):
        data.check_leakage([moved] + small_corpus[1:])


@pytest.mark.parametrize("kw", [
    dict(clients=2),
    dict(families=(1, 2, 5)),
    dict(label_noise=0.5),
    dict(grid=4),
    dict(channels=5),
    dict(train_fraction=1.0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        small_config(**kw).validate()


# -- on-disk format ------------------------------------------------------------------


def test_sample_header_layout():
    x = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    y = (np.arange(12).reshape(3, 4) % 2).astype(np.uint8)
    buf = data.encode_sample(x, y)
    assert buf[:4] == b"FGRD"
    assert struct.unpack("<iiii", buf[4:20]) == (1, 4, 3, 2)
    # x fastest, then y, then channel
    assert struct.unpack("<d", buf[20 + 8:28 + 8])[0] == x[0, 0, 1]
    assert struct.unpack("<d", buf[20 + 8 * 4:28 + 8 * 4])[0] == x[0, 1, 0]
    assert struct.unpack("<d", buf[20 + 8 * 12:28 + 8 * 12])[0] == x[1, 0, 0]
    assert buf[-12:] == y.tobytes()
    assert len(buf) == 20 + 8 * 24 + 12


def test_corpus_round_trip_bit_exact(tmp_path, small_corpus):
    data.save_corpus(small_corpus, tmp_path / "c", small_config())
    assert corpora_equal(small_corpus, data.load_corpus(tmp_path / "c"))
    info = data.corpus_config_from_manifest(tmp_path / "c")
    assert info["seed"] == "0" and info["families"] == "1,2,4"


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), c=st.integers(1, 4), g=st.integers(8, 12))
def test_random_corpus_round_trip(tmp_path_factory, seed, c, g):
    rng = np.random.default_rng(seed)

    def ds(prefix, n):
        return Dataset(rng.normal(size=(n, c, g, g)) * 1e3, rng.integers(0, 2, (n, g, g)).astype(np.uint8),
                       [f"{prefix}{i % 2}" for i in range(n)])

    corpus = [ClientData(1, 3, ds("a", 3), ds("b", 2)), ClientData(2, 1, ds("c", 2), ds("d", 1))]
    out = tmp_path_factory.mktemp("rt")
    data.save_corpus(corpus, out)
    assert corpora_equal(corpus, data.load_corpus(out))


def test_empty_client_rejected_at_save(tmp_path, small_corpus):
    a = small_corpus[0]
    empty = Dataset(np.zeros((0, 4, 16, 16)), np.zeros((0, 16, 16), np.uint8), [])
    with pytest.raises(ConfigurationError):
        data.save_corpus([ClientData(1, 1, empty, a.test)], tmp_path / "c")


def test_header_fuzz_always_format_error(tmp_path, small_corpus):
    root = data.save_corpus(small_corpus[:1], tmp_path / "c")
    cdir = root / "client_01"
    victim = sorted(cdir.glob("*.fgrd"))[0]
    pristine = victim.read_bytes()
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pos = int(rng.integers(0, data.SAMPLE_HEADER.size))
        value = int(rng.integers(0, 255))
        value += value >= pristine[pos]  # never a no-op
        corrupt = bytearray(pristine)
        corrupt[pos] = value
        victim.write_bytes(bytes(corrupt))
        with pytest.raises(FormatError) as err:
            data.load_corpus(root)
        assert str(victim) in str(err.value) and err.value.offset is not None
    victim.write_bytes(pristine)
    assert corpora_equal(small_corpus[:1], data.load_corpus(root))


def test_truncation_and_bad_labels(tmp_path, small_corpus):
    root = data.save_corpus(small_corpus[:1], tmp_path / "c")
    victim = sorted((root / "client_01").glob("*.fgrd"))[0]
    good = victim.read_bytes()
    for bad in (good[:-1], good + b"\0", good[:10]):
        victim.write_bytes(bad)
        with pytest.raises(FormatError):
            data.load_corpus(root)
    victim.write_bytes(good[:-1] + b"\x02")
    with pytest.raises(FormatError, match="label"):
        data.load_corpus(root)
    nan = bytearray(good)
    nan[20:28] = struct.pack("<d", float("nan"))
    victim.write_bytes(bytes(nan))
    with pytest.raises(FormatError, match="non-finite"):
        data.load_corpus(root)


def test_missing_manifest_and_sample(tmp_path, small_corpus):
    root = data.save_corpus(small_corpus[:1], tmp_path / "c")
    victim = sorted((root / "client_01").glob("*.fgrd"))[0]
    victim.unlink()
    with pytest.raises(FormatError, match="missing"):
        data.load_corpus(root)
    shutil.rmtree(root / "client_01")
    with pytest.raises(FormatError):
        data.load_corpus(root)


def test_saved_directories_are_byte_identical(tmp_path, small_corpus):
    a = data.save_corpus(small_corpus, tmp_path / "a", small_config())
    b = data.save_corpus(data.generate_corpus(small_config()), tmp_path / "b", small_config())
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files_a)
