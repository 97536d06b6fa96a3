import numpy as np
import pytest

from slavtag import autodiff as ad
from slavtag import embeddings as emb


def random_emb(rng, m=3, t=4, d=5, tokens=None):
    tokens = tokens or [f"tok{i}" for i in range(t)]
    return emb.LayeredEmbeddings(tokens=tokens, values=rng.uniform(-1, 1, (m, len(tokens), d)))


def test_lemb_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(1)
    original = random_emb(rng, m=12, t=7, d=16, tokens=["[CLS]", "a", "b", "ċ", "d", "e", "[PAD]"])
    path = tmp_path / "x.lemb"
    emb.write_embedding_file(path, original)
    loaded = emb.load_embedding_file(path)
    assert loaded.tokens == original.tokens
    assert (loaded.m, loaded.dim) == (12, 16)
    # values survive exactly at 32-bit precision
    np.testing.assert_array_equal(
        loaded.values.astype(np.float32), original.values.astype(np.float32))


def test_lemb_dimensions(tmp_path):
    rng = np.random.default_rng(2)
    original = random_emb(rng, m=12, t=7, d=768 // 8)
    path = tmp_path / "y.lemb"
    emb.write_embedding_file(path, original)
    loaded = emb.load_embedding_file(path)
    assert loaded.values.shape == (12, 7, 96)


def test_lemb_corrupted_byte(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "z.lemb"
    emb.write_embedding_file(path, random_emb(rng))
    blob = bytearray(path.read_bytes())
    blob[-6] ^= 0xFF  # inside payload
    path.write_bytes(bytes(blob))
    with pytest.raises(emb.LembError, match="checksum"):
        emb.load_embedding_file(path)


def test_lemb_truncated(tmp_path):
    rng = np.random.default_rng(4)
    path = tmp_path / "t.lemb"
    emb.write_embedding_file(path, random_emb(rng))
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(emb.LembError, match="truncated"):
        emb.load_embedding_file(path)


def test_lemb_bad_magic(tmp_path):
    path = tmp_path / "bad.lemb"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(emb.LembError, match="magic"):
        emb.load_embedding_file(path)


def test_synthetic_repeated_token_identical():
    e = emb.synthetic_embeddings(["a", "b", "a"], m=4, dim=6, seed=9)
    np.testing.assert_array_equal(e.values[:, 0, :], e.values[:, 2, :])
    assert not np.array_equal(e.values[:, 0, :], e.values[:, 1, :])


def test_synthetic_deterministic():
    a = emb.synthetic_embeddings(["x", "y"], m=3, dim=4, seed=5)
    b = emb.synthetic_embeddings(["x", "y"], m=3, dim=4, seed=5)
    np.testing.assert_array_equal(a.values, b.values)


def test_synthetic_seed_changes_values():
    a = emb.synthetic_embeddings(["x", "y", "z"], m=3, dim=4, seed=5)
    b = emb.synthetic_embeddings(["x", "y", "z"], m=3, dim=4, seed=6)
    assert not np.array_equal(a.values, b.values)


def test_synthetic_range():
    e = emb.synthetic_embeddings(["q"], m=2, dim=100, seed=0)
    assert (np.abs(e.values) <= 1.0).all()


def test_aggregate_one_hot_layer():
    rng = np.random.default_rng(6)
    e = random_emb(rng, m=3)
    w = np.array([1.0, 0.0, 0.0])
    out = emb.aggregate(e, emb.AggregationParams(gamma=1.0, layer_weights=w))
    np.testing.assert_allclose(out, e.values[0], atol=1e-15)


def test_aggregate_constant_layers():
    c = np.arange(5.0)
    values = np.tile(c, (4, 3, 1))
    e = emb.LayeredEmbeddings(tokens=["a", "b", "c"], values=values)
    out = emb.aggregate(e, emb.AggregationParams(gamma=2.0, layer_weights=np.full(4, 0.25)))
    np.testing.assert_allclose(out, np.tile(2 * c, (3, 1)), atol=1e-15)


def test_aggregate_matches_double_loop():
    rng = np.random.default_rng(7)
    e = random_emb(rng, m=3, t=2, d=4)
    params = emb.AggregationParams(gamma=rng.normal(), layer_weights=rng.normal(size=3))
    out = emb.aggregate(e, params)
    expected = np.zeros((2, 4))
    for t in range(2):
        for i in range(3):
            expected[t] += params.layer_weights[i] * e.values[i, t]
        expected[t] *= params.gamma
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_aggregate_layer_count_mismatch():
    rng = np.random.default_rng(8)
    e = random_emb(rng, m=3)
    with pytest.raises(ValueError, match="mismatch"):
        emb.aggregate(e, emb.AggregationParams(gamma=1.0, layer_weights=np.ones(4)))


def test_aggregate_linearity():
    rng = np.random.default_rng(9)
    e = random_emb(rng, m=3)
    w1, w2 = rng.normal(size=3), rng.normal(size=3)
    a = emb.aggregate(e, emb.AggregationParams(1.0, w1))
    b = emb.aggregate(e, emb.AggregationParams(1.0, w2))
    both = emb.aggregate(e, emb.AggregationParams(1.0, w1 + w2))
    np.testing.assert_allclose(both, a + b, atol=1e-12)
    doubled = emb.aggregate(e, emb.AggregationParams(2.0, w1))
    np.testing.assert_allclose(doubled, 2 * a, atol=1e-12)


def test_aggregate_gradients():
    rng = np.random.default_rng(10)
    e = random_emb(rng, m=3, t=2, d=3)
    layers = [ad.inp(f"layer{i}", (2, 3)) for i in range(3)]
    gamma, w = ad.param("gamma", ()), ad.param("w", (3,))
    root = ad.sum_all(emb.aggregate_expr(layers, gamma, w))
    bindings = {f"layer{i}": e.values[i] for i in range(3)}
    bindings.update({"gamma": 1.3, "w": rng.normal(size=3)})
    report = ad.check_gradients(root, bindings, eps=1e-5)
    assert max(report.values()) < 1e-7
    # d(sum)/d(gamma) equals sum of weighted layers
    grads = ad.gradients(root, bindings)
    expected = sum(bindings["w"][i] * e.values[i].sum() for i in range(3))
    assert float(grads["gamma"]) == pytest.approx(expected)


def test_sources(tmp_path):
    from slavtag.corpus import SubwordVocab, build_tagged_sentence

    vocab = SubwordVocab(frozenset({"[UNK]", "[CLS]", "a"}))
    sent, _ = build_tagged_sentence(["a"], ["O"], vocab, max_len=4,
                                    language="pl", doc_id="d", topic="t")
    synth = emb.SyntheticSource(seed=1, m=2, dim=3)
    e = synth.get(sent)
    assert e.values.shape == (2, 4, 3)

    lemb_dir = tmp_path / "emb"
    lemb_dir.mkdir()
    emb.write_embedding_file(lemb_dir / "t__pl__d__0.lemb", e)
    src = emb.LembDirSource(lemb_dir)
    loaded = src.get(sent)
    assert loaded.tokens == sent.subtokens
    assert emb.source_from_description(src.describe()).directory == lemb_dir
    assert emb.source_from_description(synth.describe()).seed == 1

    # token mismatch between file and sentence is fatal
    wrong = emb.LayeredEmbeddings(tokens=["[CLS]", "x", "[PAD]", "[PAD]"],
                                  values=e.values)
    emb.write_embedding_file(lemb_dir / "t__pl__d__0.lemb", wrong)
    with pytest.raises(emb.LembError, match="token list"):
        emb.LembDirSource(lemb_dir).get(sent)

    # missing file
    with pytest.raises(emb.LembError, match="missing"):
        emb.LembDirSource(tmp_path / "empty").get(sent)
