import numpy as np
import pytest

from slavtag import autodiff as ad
from slavtag import lang_clf as lc


def test_concat_pool_example():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = lc.concat_pool(h, None)
    np.testing.assert_array_equal(out, [1, 2, 3, 4, 2, 3])


def test_concat_pool_t1():
    h = np.array([[5.0, -1.0]])
    out = lc.concat_pool(h, [1])
    np.testing.assert_array_equal(out, [5, -1, 5, -1, 5, -1])


def test_concat_pool_ignores_padded_rows():
    h = np.array([[1.0, 2.0], [3.0, 4.0], [1e6, -1e6]])
    out = lc.concat_pool(h, [1, 1, 0])
    np.testing.assert_array_equal(out, lc.concat_pool(h[:2], None))


def test_concat_pool_all_masked_error():
    with pytest.raises(ValueError, match="masked"):
        lc.concat_pool(np.ones((2, 2)), [0, 0])


def test_concat_pool_permutation_invariance_of_pools():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(5, 3))
    shuffled = h.copy()
    shuffled[1:] = shuffled[1:][rng.permutation(4)]
    a, b = lc.concat_pool(h, None), lc.concat_pool(shuffled, None)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_classify_uniform_when_zero():
    params = lc.LangClfParams(weight=np.zeros((6, 4)), bias=np.zeros(4),
                              languages=["bg", "cs", "pl", "ru"])
    logits = lc.classify(np.ones((2, 2)), None, params)
    np.testing.assert_array_equal(logits, np.zeros(4))
    hot = ad.const(np.eye(4)[1])
    loss = ad.evaluate(lc.cross_entropy_expr(ad.inp("l", (4,)), hot), {"l": logits})
    assert float(loss) == pytest.approx(np.log(4), abs=1e-12)


def test_classify_bias_dominates():
    bias = np.zeros(4)
    bias[2] = 20.0
    params = lc.LangClfParams(weight=np.zeros((6, 4)), bias=bias)
    logits = lc.classify(np.random.default_rng(1).normal(size=(3, 2)), None, params)
    assert int(np.argmax(logits)) == 2


def test_classify_matches_direct_matvec():
    rng = np.random.default_rng(2)
    params = lc.LangClfParams(weight=rng.normal(size=(6, 4)), bias=rng.normal(size=4))
    h = rng.normal(size=(3, 2))
    logits = lc.classify(h, None, params)
    pooled = np.concatenate([h[0], h.max(axis=0), h.mean(axis=0)])
    np.testing.assert_allclose(logits, pooled @ params.weight + params.bias, atol=1e-12)


def test_classifier_gradients():
    rng = np.random.default_rng(3)
    h = ad.param("h", (4, 3))
    mask = ad.inp("mask", (4,))
    w = ad.param("w", (9, 4))
    b = ad.param("b", (4,))
    logits = lc.classify_expr(h, mask, w, b)
    loss = lc.cross_entropy_expr(logits, ad.const(np.eye(4)[0]))
    bindings = {"h": rng.normal(size=(4, 3)), "mask": np.array([1.0, 1, 1, 0]),
                "w": rng.normal(size=(9, 4)), "b": rng.normal(size=4)}
    report = ad.check_gradients(loss, bindings, eps=1e-5)
    assert max(report.values()) <= 1e-6, report


def test_masked_row_values_do_not_matter():
    rng = np.random.default_rng(4)
    params = lc.LangClfParams(weight=rng.normal(size=(6, 3)), bias=rng.normal(size=3))
    h = rng.normal(size=(3, 2))
    mask = [1, 1, 0]
    zeroed = h.copy()
    zeroed[2] = 0.0
    np.testing.assert_allclose(lc.classify(h, mask, params),
                               lc.classify(zeroed, mask, params), atol=1e-12)


def test_softmax_probs():
    p = lc.softmax_probs(np.array([0.0, 0.0]))
    np.testing.assert_allclose(p, [0.5, 0.5])
    assert lc.softmax_probs(np.array([1e4, 0.0]))[0] == pytest.approx(1.0)
