import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mffnet.classifier import (Classifier, DegenerateInputError, WeightedFeatures, bce_loss, classify,
                               cosine_sim, normalize_sim, weight_features)
from mffnet.tensor import Tensor, grad_check

from conftest import randt

vec = arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10, allow_nan=False))


def test_cosine_examples(rng):
    v = rng.standard_normal(5)
    np.testing.assert_allclose(cosine_sim(Tensor(v), Tensor(v)).data, 1.0)
    assert cosine_sim(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 1.0]))).item() == 0.0
    assert cosine_sim(Tensor(np.array([1.0, 0.0])), Tensor(np.array([-1.0, 0.0]))).item() == -1.0


def test_cosine_zero_norm(caplog):
    z, v = Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3)))
    with pytest.raises(DegenerateInputError):
        cosine_sim(z, v)
    out = cosine_sim(z, v, strict=False)
    np.testing.assert_array_equal(out.data, [0.0, 0.0])
    assert "zero-norm" in caplog.text


def test_normalize_anchors():
    assert normalize_sim(Tensor(np.array(-1.0))).item() == 0.0
    assert normalize_sim(Tensor(np.array(0.0))).item() == 0.5
    assert normalize_sim(Tensor(np.array(1.0))).item() == 1.0


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_sim_in_unit_interval(data):
    a = data.draw(vec)
    b = data.draw(arrays(np.float64, a.shape, elements=st.floats(-10, 10, allow_nan=False)))
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    s = normalize_sim(cosine_sim(Tensor(a), Tensor(b))).item()
    assert 0.0 <= s <= 1.0 + 1e-15


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), arrays(np.float64, 4, elements=st.floats(-5, 5, allow_nan=False)))
def test_weighting_identities(s, f):
    sim = Tensor(np.array([s]))
    RI, RT, RM = (Tensor(f[None] * k) for k in (1.0, 2.0, 3.0))
    w = weight_features(sim, RI, RT, RM)
    np.testing.assert_array_equal(w.R_If.data, s * RI.data)
    np.testing.assert_array_equal(w.R_Tf.data, s * RT.data)
    np.testing.assert_array_equal(w.R_Mf.data, (1.0 - s) * RM.data)


def test_weighting_examples(rng):
    RI, RT, RM = randt(rng, 1, 4), randt(rng, 1, 4), randt(rng, 1, 4)
    w1 = weight_features(Tensor(np.array([1.0])), RI, RT, RM)
    np.testing.assert_array_equal(w1.R_Mf.data, np.zeros((1, 4)))
    w0 = weight_features(Tensor(np.array([0.0])), RI, RT, RM)
    np.testing.assert_array_equal(w0.R_If.data, np.zeros((1, 4)))
    np.testing.assert_array_equal(w0.R_Tf.data, np.zeros((1, 4)))
    wh = weight_features(Tensor(np.array([0.5])), RI, RT, RM)
    for got, src in ((wh.R_If, RI), (wh.R_Tf, RT), (wh.R_Mf, RM)):
        np.testing.assert_array_equal(got.data, src.data / 2)


def test_weighting_skips_missing_features(rng):
    w = weight_features(Tensor(np.array([0.3])), None, randt(rng, 1, 4), None)
    assert len(w.present()) == 1


def _zeroed_classifier(rng):
    clf = Classifier(6, 4, rng)
    for p in clf.parameters():
        p.data[...] = 0.0
    return clf


def _features(rng, batch=3):
    return WeightedFeatures(randt(rng, batch, 2), randt(rng, batch, 2), randt(rng, batch, 2),
                            Tensor(np.full(batch, 0.5)))


def test_zero_classifier_gives_half(rng):
    out = classify(_features(rng), _zeroed_classifier(rng)).data
    np.testing.assert_array_equal(out, [0.5, 0.5, 0.5])


def test_output_bias_is_monotone(rng):
    clf = Classifier(6, 4, rng)
    feats = _features(rng)
    prev = classify(feats, clf).data
    for _ in range(5):
        clf.out.bias.data += 0.3
        cur = classify(feats, clf).data
        assert np.all(cur > prev)
        prev = cur


def test_bce_examples():
    assert bce_loss([1.0], Tensor(np.array([1 - 1e-7]))).item() < 1e-6
    np.testing.assert_allclose(bce_loss([0.0], Tensor(np.array([0.5]))).item(), math.log(2))
    np.testing.assert_allclose(bce_loss([1.0], Tensor(np.array([0.25]))).item(), math.log(4))
    np.testing.assert_allclose(bce_loss([0.0, 1.0], Tensor(np.array([0.5, 0.25]))).item(),
                               (math.log(2) + math.log(4)) / 2)


def test_bce_is_finite_at_saturation():
    out = bce_loss([1.0, 0.0], Tensor(np.array([0.0, 1.0]))).item()
    np.testing.assert_allclose(out, -math.log(1e-7), rtol=1e-6)


def test_classify_bce_gradient(rng):
    clf = Classifier(6, 4, rng)
    feats = _features(rng)
    labels = np.array([0.0, 1.0, 1.0])
    params = clf.parameters() + [feats.R_If, feats.R_Tf, feats.R_Mf]
    assert grad_check(lambda: bce_loss(labels, classify(feats, clf)), params,
                      max_coords=None, floor=1e-6) < 1e-4
