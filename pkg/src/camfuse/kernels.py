"""Forward/backward numeric kernels for the micro-CNN.

Every kernel works on float64 numpy arrays. Spatial kernels take a leading
batch axis, ``(N, C, H, W)``; the explanation path always uses ``N == 1``.
All functions are pure: they never mutate their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("conv2d", "relu", "maxpool2", "gap", "dense")


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""

    def __init__(self, message, layer_index=None, expected=None, actual=None):
        self.layer_index = layer_index
        self.expected = expected
        self.actual = actual
        where = f"layer {layer_index}: " if layer_index is not None else ""
        detail = ""
        if expected is not None or actual is not None:
            detail = f" (expected {expected}, got {actual})"
        super().__init__(f"{where}{message}{detail}")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("conv2d kernel size must be odd")
            if self.stride < 1 or self.padding < 0:
                raise ValueError("conv2d needs stride >= 1 and padding >= 0")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def param_shapes(self):
        if self.kind == "conv2d":
            k = self.kernel_size
            return (self.out_channels, self.in_channels, k, k), (self.out_channels,)
        if self.kind == "dense":
            return (self.out_features, self.in_features), (self.out_features,)
        return ()

    def output_shape(self, in_shape, index=None):
        """Shape of the layer output for an unbatched input shape."""
        in_shape = tuple(in_shape)
        if self.kind == "relu":
            return in_shape
        if self.kind == "dense":
            if in_shape != (self.in_features,):
                raise ShapeError("dense input", index, (self.in_features,), in_shape)
            return (self.out_features,)
        if len(in_shape) != 3:
            raise ShapeError(f"{self.kind} needs a C×H×W input", index, "rank 3", in_shape)
        c, h, w = in_shape
        if self.kind == "conv2d":
            if c != self.in_channels:
                raise ShapeError("conv2d input channels", index, self.in_channels, c)
            k, s, p = self.kernel_size, self.stride, self.padding
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeError("conv2d input too small", index, f">= {k - 2 * p}", (h, w))
            return (self.out_channels, ho, wo)
        if self.kind == "maxpool2":
            if h < 2 or w < 2:
                raise ShapeError("maxpool2 input too small", index, ">= 2×2", (h, w))
            return (c, h // 2, w // 2)
        return (c,)  # gap


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D cross-correlation. ``x``: (N, C, H, W); ``weight``: (O, C, k, k)."""
    k = weight.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]


def conv2d_backward(x, weight, upstream, stride=1, padding=0):
    """Returns ``(dx, dweight, dbias)``."""
    k = weight.shape[-1]
    n, _, ho, wo = upstream.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    dweight = np.tensordot(upstream, win, axes=([0, 2, 3], [0, 2, 3]))
    dbias = upstream.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(upstream, weight[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    h, w = x.shape[2:]
    dx = dxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(dx), dweight, dbias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    return np.where(x > 0.0, upstream, 0.0)


def _pool_windows(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    # window order (0,0), (0,1), (1,0), (1,1): row-major inside the window
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)


def maxpool2(x):
    return _pool_windows(x).max(axis=-1)


def maxpool2_backward(x, upstream):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    idx = _pool_windows(x).argmax(axis=-1)  # first maximum wins ties
    routed = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(routed, idx[..., None], upstream[..., None], axis=-1)
    routed = routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros_like(x)
    dx[:, :, :2 * ho, :2 * wo] = routed.reshape(n, c, 2 * ho, 2 * wo)
    return dx


def gap(x):
    return x.mean(axis=(2, 3))


def gap_backward(x, upstream):
    h, w = x.shape[2:]
    return np.broadcast_to(upstream[:, :, None, None] / (h * w), x.shape).copy()


def dense(x, weight, bias):
    return x @ weight.T + bias


def dense_backward(x, weight, upstream):
    return upstream @ weight, upstream.T @ x, upstream.sum(axis=0)


def layer_forward(spec: LayerSpec, params, x, index=None):
    """Apply one layer to a batched input ``x``.

    ``params`` is ``(weight, bias)`` for parametric layers and ignored otherwise.
    """
    spec.output_shape(x.shape[1:], index)
    if spec.kind == "conv2d":
        return conv2d(x, params[0], params[1], spec.stride, spec.padding)
    if spec.kind == "relu":
        return relu(x)
    if spec.kind == "maxpool2":
        return maxpool2(x)
    if spec.kind == "gap":
        return gap(x)
    return dense(x, params[0], params[1])


def layer_backward(spec: LayerSpec, params, x, upstream, index=None):
    """Backward pass of one layer.

    Returns ``(input_grad, param_grads)`` where ``param_grads`` is
    ``(dweight, dbias)`` for parametric layers and ``()`` otherwise.
    """
    out_shape = spec.output_shape(x.shape[1:], index)
    if upstream.shape != (x.shape[0],) + tuple(out_shape):
        raise ShapeError("upstream gradient", index, (x.shape[0],) + tuple(out_shape), upstream.shape)
    if spec.kind == "conv2d":
        dx, dw, db = conv2d_backward(x, params[0], upstream, spec.stride, spec.padding)
        return dx, (dw, db)
    if spec.kind == "relu":
        return relu_backward(x, upstream), ()
    if spec.kind == "maxpool2":
        return maxpool2_backward(x, upstream), ()
    if spec.kind == "gap":
        return gap_backward(x, upstream), ()
    dx, dw, db = dense_backward(x, params[0], upstream)
    return dx, (dw, db)


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("softmax of an empty vector")
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _axis_samples(src, out):
    coord = (np.arange(out) + 0.5) * (src / out) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coord - lo


def bilinear_resize(image, out_h, out_w):
    """Half-pixel-centre bilinear resampling of the last two axes.

    Source coordinates are clamped to the valid grid, so the output never
    leaves the input's value range and constant inputs stay constant.
    """
    image = np.asarray(image, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}×{out_w}")
    if image.ndim < 2 or image.shape[-1] < 1 or image.shape[-2] < 1:
        raise ValueError(f"cannot resize array of shape {image.shape}")
    src_h, src_w = image.shape[-2:]
    if (src_h, src_w) == (out_h, out_w):
        return image.copy()
    y0, y1, wy = _axis_samples(src_h, out_h)
    x0, x1, wx = _axis_samples(src_w, out_w)
    wy = wy[:, None]
    top_l = image[..., y0[:, None], x0]
    top_r = image[..., y0[:, None], x1]
    bot_l = image[..., y1[:, None], x0]
    bot_r = image[..., y1[:, None], x1]
    # lerp form keeps a == b exact
    top = top_l + wx * (top_r - top_l)
    bot = bot_l + wx * (bot_r - bot_l)
    out = top + wy * (bot - top)
    lo = image.min(axis=(-2, -1), keepdims=True)
    hi = image.max(axis=(-2, -1), keepdims=True)
    return np.clip(out, lo, hi)
