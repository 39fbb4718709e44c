import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from camfuse.cam import grad_cam, normalize_map, score_cam
from camfuse.fusion import (FusionConfig, FusionError, ablation_map, black_baseline, combine,
                            contribution_weight, denoise, fuse, fuse_raw, fusion_cam, reweight,
                            similarity)
from camfuse.model import forward
from camfuse.preprocess import preprocess
from oracle import contribution_weight_naive, denoise_naive

TENTHS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
unit_maps = arrays(np.float64, (4, 5), elements=st.floats(0, 1))


# denoise -------------------------------------------------------------------

def test_denoise_zero_is_identity(rng):
    m = rng.random((6, 6))
    assert np.array_equal(denoise(m, 0), m)


def test_denoise_twenty_percent():
    out = denoise(TENTHS, 20)
    assert out.tolist() == [0.0, 0.0] + TENTHS[2:]
    assert np.array_equal(out, denoise_naive(TENTHS, 20))


def test_denoise_ninety_percent():
    out = denoise(TENTHS, 90)
    assert out.tolist() == [0.0] * 9 + [1.0]
    assert np.array_equal(out, denoise_naive(TENTHS, 90))


def test_denoise_keeps_ties_at_threshold():
    out = denoise([0.1, 0.5, 0.5, 0.5, 0.9], 20)
    assert out.tolist() == [0.0, 0.5, 0.5, 0.5, 0.9]


@pytest.mark.parametrize("theta", [-1, 100, 150])
def test_denoise_rejects_theta(theta):
    with pytest.raises(ValueError):
        denoise(TENTHS, theta)
    with pytest.raises(ValueError):
        FusionConfig(theta=theta)


@settings(max_examples=100, deadline=None)
@given(unit_maps, st.integers(0, 99))
def test_denoise_matches_sort_and_count(m, theta):
    assert np.array_equal(denoise(m, theta), denoise_naive(m, theta))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0.001, 1), unique=True),
       st.floats(0, 99.9), st.floats(0, 99.9))
def test_denoise_monotone_and_exact_count(m, t1, t2):
    t1, t2 = sorted((t1, t2))
    a, b = denoise(m, t1), denoise(m, t2)
    assert np.all((b != 0) <= (a != 0))
    assert np.all((b == 0) | (b == m))
    assert int(np.sum(b == 0)) == math.floor(t2 * m.size / 100)


# combine / reweight / similarity / fuse ------------------------------------

def test_combine_examples(rng):
    deg, reg = rng.random((3, 3)), rng.random((3, 3))
    assert np.array_equal(combine(deg, reg, 0.0, 1.0), reg)
    np.testing.assert_allclose(combine(deg, deg, 0.5, 0.5), deg, rtol=0, atol=1e-15)
    np.testing.assert_allclose(combine([1.0, 0.0], [0.0, 1.0], 0.3, 0.6), [0.3, 0.6], rtol=0, atol=1e-15)


def test_combine_negative_betas_fall_back_to_average():
    out = combine([1.0, 0.0], [0.0, 0.5], -0.2, -0.1)
    assert out.tolist() == [0.5, 0.25]
    out = combine([1.0, 0.0], [0.0, 0.5], -0.2, 0.4)
    np.testing.assert_allclose(out, [0.0, 0.2], atol=1e-15)
    unclamped = combine([1.0, 0.0], [0.0, 0.5], -0.2, 0.4, clamp=False)
    np.testing.assert_allclose(unclamped, [-0.2, 0.2], atol=1e-15)


def test_combine_shape_mismatch():
    with pytest.raises(ValueError):
        combine(np.zeros((2, 2)), np.zeros((2, 3)), 1, 1)


def test_reweight_examples(rng):
    a, b = rng.random((4, 4)), rng.random((4, 4))
    a[0, 0] = b[1, 1] = 1.0
    l1, l2 = reweight(a, b, 1.0, 1.0)
    assert np.array_equal(l1, a) and np.array_equal(l2, b)
    l1, l2 = reweight(a, b, -0.3, 0.0)
    assert not l1.any() and not l2.any()
    l1, l2 = reweight([0.4], [0.8], 0.5, 0.25)
    assert (l1.item(), l2.item()) == (1.0, 1.0)


def test_similarity_examples():
    assert np.all(similarity([0.3, 0.7], [0.3, 0.7]) == 1.0)
    assert similarity([1.0], [0.0]).item() == 0.0
    assert similarity([0.8], [0.6]).item() == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("bad", [[-0.1], [1.5]])
def test_similarity_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        similarity(bad, [0.5])


def test_fuse_examples(rng):
    l1, l2 = rng.random((3, 3)), rng.random((3, 3))
    assert np.array_equal(fuse_raw(l1, l2, np.ones((3, 3))), np.maximum(l1, l2))
    assert np.array_equal(fuse_raw(l1, l2, np.zeros((3, 3))), (l1 + l2) / 2)
    assert fuse_raw(0.8, 0.6, 0.8) == pytest.approx(0.78, abs=1e-15)
    out = fuse(l1, l2, similarity(l1, l2))
    assert out.min() == 0.0 and out.max() == 1.0


@settings(max_examples=200, deadline=None)
@given(unit_maps, unit_maps)
def test_fuse_bounded_between_average_and_max(l1, l2):
    out = fuse_raw(l1, l2, similarity(l1, l2))
    tol = 1e-15
    assert np.all(out >= (l1 + l2) / 2 - tol)
    assert np.all(out <= np.maximum(l1, l2) + tol)
    assert np.all(out >= np.minimum(l1, l2) - tol)


@settings(max_examples=200, deadline=None)
@given(unit_maps, unit_maps)
def test_fuse_symmetric(l1, l2):
    a = fuse(l1, l2, similarity(l1, l2))
    b = fuse(l2, l1, similarity(l2, l1))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=200, deadline=None)
@given(unit_maps)
def test_fuse_idempotent(l1):
    assert np.array_equal(fuse_raw(l1, l1, similarity(l1, l1)), l1)


@settings(max_examples=100, deadline=None)
@given(unit_maps, unit_maps, st.floats(-1, 1), st.floats(-1, 1))
def test_reweight_bounds_similarity_inputs(a, b, b1, b2):
    assume(a.max() > 0 or b.max() > 0)
    l1, l2 = reweight(a, b, b1, b2)
    for m in (l1, l2):
        assert m.min() >= 0 and m.max() <= 1
    s = similarity(l1, l2)
    assert s.min() >= 0 and s.max() <= 1


# contribution weights ------------------------------------------------------

def test_contribution_weight_identity_and_empty_masks(golden_model, test_image):
    c = 1
    base = black_baseline(golden_model, test_image, c)
    full = forward(golden_model, preprocess(test_image)).probs[c]
    assert contribution_weight(golden_model, test_image, np.ones((32, 32)), c) == full - base
    assert contribution_weight(golden_model, test_image, np.zeros((32, 32)), c) == 0.0


def test_contribution_weight_matches_brute_force(golden_model, test_image, oracle_values):
    c = oracle_values["label"]
    gmap = grad_cam(golden_model, test_image, c)
    beta = contribution_weight(golden_model, test_image, gmap, c)
    assert beta == pytest.approx(contribution_weight_naive(golden_model.params, test_image, gmap, c), abs=1e-12)
    assert beta == pytest.approx(oracle_values["grad_cam_beta"], abs=1e-12)


def test_contribution_weight_shape_mismatch(golden_model, test_image):
    with pytest.raises(ValueError):
        contribution_weight(golden_model, test_image, np.ones((16, 16)), 0)


# pipeline ------------------------------------------------------------------

def test_fusion_cam_contract(golden_model, test_image):
    out, diag = fusion_cam(golden_model, test_image, 1)
    assert diag is None
    assert out.shape == (32, 32) and out.min() >= 0 and out.max() <= 1
    again, _ = fusion_cam(golden_model, test_image.copy(), 1)
    assert out.tobytes() == again.tobytes()


def test_diagnostics_agree_with_standalone_calls(golden_model, test_image):
    out, diag = fusion_cam(golden_model, test_image, 1, FusionConfig(record_diagnostics=True))
    region = score_cam(golden_model, test_image, 1)
    assert np.array_equal(diag.region, region)
    assert diag.betas.beta_region == contribution_weight(golden_model, test_image, region, 1)
    assert diag.betas.beta_degrad == contribution_weight(golden_model, test_image, diag.degrad, 1)
    assert np.array_equal(diag.grad, grad_cam(golden_model, test_image, 1))
    assert np.array_equal(diag.degrad, denoise(diag.grad, 10))
    assert set(diag.timings) >= {"grad_cam", "denoise", "score_cam", "weights", "fuse"}
    assert np.array_equal(out, fuse(diag.w_gradregion, diag.w_region, diag.similarity))


def test_theta_zero_equals_skipping_denoise(golden_model, test_image):
    a, _ = fusion_cam(golden_model, test_image, 1, FusionConfig(theta=0))
    b, _ = fusion_cam(golden_model, test_image, 1, FusionConfig(theta=0), denoise_stage=False)
    assert a.tobytes() == b.tobytes()


def test_stage_errors_are_labelled(golden_model):
    with pytest.raises(FusionError) as err:
        fusion_cam(golden_model, np.zeros((1, 32, 32)), 0)
    assert err.value.stage == "preprocess"
    with pytest.raises(FusionError) as err:
        fusion_cam(golden_model, np.zeros((3, 32, 32)), 0, FusionConfig(layer=7))
    assert err.value.stage == "grad_cam"


def test_ablation_settings(golden_model, test_image):
    grad = grad_cam(golden_model, test_image, 1)
    region = score_cam(golden_model, test_image, 1)
    assert np.array_equal(ablation_map(golden_model, test_image, 1, 1), normalize_map(grad + region))
    assert np.array_equal(ablation_map(golden_model, test_image, 1, 2),
                          normalize_map(denoise(grad, 10) + region))
    assert np.array_equal(ablation_map(golden_model, test_image, 1, 4),
                          fusion_cam(golden_model, test_image, 1)[0])
    with pytest.raises(ValueError):
        ablation_map(golden_model, test_image, 1, 5)
