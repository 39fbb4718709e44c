import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import camfuse.cam as cam
from camfuse.cam import (channel_masks, grad_cam, normalize_map, score_cam, score_cam_weights,
                         weighted_channel_map)
from camfuse.kernels import bilinear_resize
from camfuse.model import MicroCNN, forward
from camfuse.preprocess import preprocess
from oracle import score_cam_weights_naive


def test_normalize_examples():
    assert normalize_map([1.0, 3.0]).tolist() == [0.0, 1.0]
    assert not normalize_map(np.full((3, 3), 7.0)).any()
    m = np.array([[0.0, 0.25], [1.0, 0.5]])
    assert np.array_equal(normalize_map(m), m)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6)))
def test_normalize_bounds(m):
    out = normalize_map(m)
    assert out.min() >= 0 and out.max() <= 1
    assert out.max() == 1.0 or not out.any()


# Grad-CAM ------------------------------------------------------------------

def test_toy_two_channel_map():
    acts = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    out = weighted_channel_map(acts, [1.0, 0.5], (2, 2))
    assert out.tolist() == [[1.0, 0.0], [0.0, 0.5]]


def test_single_channel_map(rng):
    a = rng.normal(size=(4, 4))
    out = weighted_channel_map(a[None], [0.7], (16, 16))
    expected = normalize_map(bilinear_resize(np.maximum(a, 0), 16, 16))
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_positive_gradient_scaling_is_invisible(lam):
    r = np.random.default_rng(0)
    acts, alphas = r.random((16, 8, 8)), r.normal(size=16)
    a = weighted_channel_map(acts, alphas, (32, 32))
    b = weighted_channel_map(acts, lam * alphas, (32, 32))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_zero_dense_gives_zero_map(golden_model, test_image):
    params = list(golden_model.params)
    params[7] = (np.zeros((4, 16)), np.zeros(4))
    assert not grad_cam(MicroCNN(tuple(params)), test_image, 0).any()


def test_grad_cam_shape_range_determinism(golden_model, test_image):
    a = grad_cam(golden_model, test_image, 1)
    b = grad_cam(golden_model, test_image.copy(), 1)
    assert a.shape == (32, 32)
    assert a.min() >= 0 and a.max() == 1.0
    assert a.tobytes() == b.tobytes()


def test_non_spatial_layer_rejected(golden_model, test_image):
    for layer in (6, 7, 8):
        with pytest.raises(ValueError):
            grad_cam(golden_model, test_image, 0, layer=layer)
        with pytest.raises(ValueError):
            score_cam(golden_model, test_image, 0, layer=layer)


# Score-CAM -----------------------------------------------------------------

def test_score_cam_weights_match_brute_force(golden_model, test_image, oracle_values):
    c, layer = oracle_values["label"], oracle_values["layer"]
    weights, masks = score_cam_weights(golden_model, test_image, c, layer)
    assert len(masks) == 16 and masks[0].shape == (32, 32)
    live = score_cam_weights_naive(golden_model.params, test_image, c, layer)
    np.testing.assert_allclose(weights, live, rtol=0, atol=1e-12)
    np.testing.assert_allclose(weights, oracle_values["score_cam_weights"], rtol=0, atol=1e-12)


def test_constant_channel_contributes_nothing(golden_model, test_image):
    params = list(golden_model.params)
    w, b = (np.array(t) for t in params[3])
    w[0], b[0] = 0.0, 0.5  # channel 0 of the second conv block is the constant 0.5
    params[3] = (w, b)
    model = MicroCNN(tuple(params))
    weights, masks = score_cam_weights(model, test_image, 1)
    assert not masks[0].any()
    assert weights[0] == 0.0


def _identical_channel_model(seed=3):
    r = np.random.default_rng(seed)
    w1 = np.broadcast_to(r.normal(size=(1, 3, 3, 3)), (8, 3, 3, 3)).copy()
    w2 = np.broadcast_to(r.normal(size=(1, 8, 3, 3)), (16, 8, 3, 3)).copy()
    return MicroCNN(((w1, np.zeros(8)), (), (), (w2, np.full(16, 0.1)), (), (), (),
                     (r.normal(size=(4, 16)), np.zeros(4))))


def test_identical_channels_give_the_shared_channel(test_image):
    model = _identical_channel_model()
    # any class whose confidence rises over the black baseline
    c = max(range(4), key=lambda k: score_cam_weights(model, test_image, k)[0][0])
    weights, masks = score_cam_weights(model, test_image, c)
    assert weights[0] > 0 and np.all(weights == weights[0])
    np.testing.assert_allclose(score_cam(model, test_image, c), masks[0], rtol=0, atol=1e-12)


class _Counter:
    def __init__(self, monkeypatch):
        self.black = self.other = 0
        real = cam.forward

        def counting(model, x):
            black = preprocess(np.zeros((3, 32, 32)))
            if np.array_equal(x, black):
                self.black += 1
            else:
                self.other += 1
            return real(model, x)

        monkeypatch.setattr(cam, "forward", counting)


def test_score_cam_forward_pass_budget(golden_model, test_image, monkeypatch):
    trace = forward(golden_model, preprocess(test_image))
    counter = _Counter(monkeypatch)
    score_cam(golden_model, test_image, 1, trace=trace)
    assert (counter.black, counter.other) == (1, 16)  # K masked + one cached black pass

    counter = _Counter(monkeypatch)
    score_cam(golden_model, test_image, 1)
    assert (counter.black, counter.other) == (1, 17)  # plus the activation pass

    counter = _Counter(monkeypatch)
    score_cam(golden_model, test_image, 1, trace=trace, baseline=0.0)
    assert (counter.black, counter.other) == (0, 16)


def test_score_cam_shape_range_determinism(golden_model, test_image):
    a = score_cam(golden_model, test_image, 1)
    b = score_cam(golden_model, test_image.copy(), 1)
    assert a.shape == (32, 32) and a.min() >= 0 and a.max() <= 1
    assert a.tobytes() == b.tobytes()


def test_channel_masks_are_normalized(golden_model, test_image):
    acts = forward(golden_model, preprocess(test_image)).activations[4]
    for m in channel_masks(acts, (32, 32)):
        assert m.shape == (32, 32) and m.min() >= 0 and m.max() <= 1
