"""Grad-CAM and Score-CAM saliency maps at input resolution."""
from __future__ import annotations

import numpy as np

from .kernels import bilinear_resize
from .model import DEFAULT_CAM_LAYER, MicroCNN, forward, grad_wrt_layer
from .preprocess import MICRO_PROFILE, preprocess


def normalize_map(m) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return np.clip((m - lo) / (hi - lo), 0.0, 1.0)


def _check_spatial(model: MicroCNN, trace, layer):
    if not 0 <= layer < len(model.layers) or trace.activations[layer].ndim != 3:
        raise ValueError(f"layer {layer} has no spatial activations")


def weighted_channel_map(activations, weights, out_size) -> np.ndarray:
    """ReLU of ``sum_k weights[k] * activations[k]``, upsampled and normalized."""
    raw = np.zeros(activations.shape[1:])
    for w, a in zip(weights, activations):
        raw += w * a
    raw = np.maximum(raw, 0.0)
    return normalize_map(bilinear_resize(raw, *out_size))


def _trace(model, image_raw, prep, trace):
    return trace if trace is not None else forward(model, preprocess(image_raw, prep))


def grad_cam(model: MicroCNN, image_raw, c: int, layer: int = DEFAULT_CAM_LAYER,
             prep=MICRO_PROFILE, trace=None) -> np.ndarray:
    """Gradient-weighted channel sum; channel weights are spatially averaged
    gradients of ``probs[c]``. ``trace`` may reuse a forward pass of the image."""
    trace = _trace(model, image_raw, prep, trace)
    _check_spatial(model, trace, layer)
    grads = grad_wrt_layer(model, trace, c, layer)
    alphas = grads.mean(axis=(1, 2))
    return weighted_channel_map(trace.activations[layer], alphas, np.shape(image_raw)[1:])


def channel_masks(activations, out_size):
    """Each channel upsampled to ``out_size`` and min-max normalized."""
    return [normalize_map(bilinear_resize(a, *out_size)) for a in activations]


def score_cam_weights(model: MicroCNN, image_raw, c: int, layer: int = DEFAULT_CAM_LAYER,
                      prep=MICRO_PROFILE, baseline=None, trace=None):
    """Per-channel confidence gains and the masks they were measured with.

    ``w_k = f_c(H_k * I0) - f_c(I_b)``. ``baseline`` may carry a cached
    ``f_c(I_b)`` and ``trace`` a forward pass of the unmasked image; with
    both supplied exactly K forward passes run.
    """
    image_raw = np.asarray(image_raw, dtype=np.float64)
    trace = _trace(model, image_raw, prep, trace)
    _check_spatial(model, trace, layer)
    masks = channel_masks(trace.activations[layer], image_raw.shape[1:])
    if baseline is None:
        baseline = forward(model, preprocess(np.zeros_like(image_raw), prep)).probs[c]
    weights = np.empty(len(masks))
    for k, h in enumerate(masks):
        weights[k] = forward(model, preprocess(h[None] * image_raw, prep)).probs[c] - baseline
    return weights, masks


def score_cam(model: MicroCNN, image_raw, c: int, layer: int = DEFAULT_CAM_LAYER,
              prep=MICRO_PROFILE, baseline=None, trace=None) -> np.ndarray:
    weights, masks = score_cam_weights(model, image_raw, c, layer, prep, baseline, trace)
    raw = np.zeros(masks[0].shape)
    for w, h in zip(weights, masks):
        raw += w * h
    return normalize_map(np.maximum(raw, 0.0))
