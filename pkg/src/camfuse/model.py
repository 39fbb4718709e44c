"""The fixed micro-CNN: forward pass, backprop, weight files and SGD training."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SplitMix64
from .kernels import LayerSpec, ShapeError, layer_backward, layer_forward, softmax
from .preprocess import MICRO_PROFILE, preprocess

MAGIC = b"CAMF"
FORMAT_VERSION = 1
# second conv layer after its ReLU: 16×16×16 for a 32×32 input
DEFAULT_CAM_LAYER = 4


def architecture(num_classes: int = 4):
    return (
        LayerSpec("conv2d", in_channels=3, out_channels=8, kernel_size=3, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool2"),
        LayerSpec("conv2d", in_channels=8, out_channels=16, kernel_size=3, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool2"),
        LayerSpec("gap"),
        LayerSpec("dense", in_features=16, out_features=num_classes),
    )


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class ArchitectureMismatchError(WeightFileError):
    pass


@dataclass(frozen=True)
class MicroCNN:
    """Parameters of the fixed architecture.

    ``params[i]`` is ``(weight, bias)`` for parametric layer ``i`` and ``()``
    for the rest. Arrays are made read-only on construction.
    """

    params: tuple
    num_classes: int = 4
    input_size: tuple = (32, 32)
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        layers = architecture(self.num_classes)
        if len(self.params) != len(layers):
            raise ArchitectureMismatchError(
                f"expected {len(layers)} layer parameter entries, got {len(self.params)}")
        frozen = []
        for i, (spec, p) in enumerate(zip(layers, self.params)):
            expected = spec.param_shapes()
            got = tuple(np.shape(a) for a in p)
            if got != expected:
                raise ArchitectureMismatchError(
                    f"layer {i} ({spec.kind}): expected parameter shapes {expected}, got {got}")
            arrays = []
            for a in p:
                a = np.array(a, dtype=np.float64)
                a.setflags(write=False)
                arrays.append(a)
            frozen.append(tuple(arrays))
        object.__setattr__(self, "params", tuple(frozen))

    @property
    def layers(self):
        return architecture(self.num_classes)

    def flat_params(self):
        """Parameter arrays in file order: weight then bias per parametric layer."""
        return [a for p in self.params for a in p]


@dataclass
class ForwardTrace:
    input: np.ndarray
    activations: list
    logits: np.ndarray
    probs: np.ndarray

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probs))


def init_params(num_classes: int = 4, seed: int = 42):
    """Uniform in ``[-s, s]``, ``s = sqrt(6 / (fan_in + fan_out))``; zero biases."""
    rng = SplitMix64(seed)
    params = []
    for spec in architecture(num_classes):
        if not spec.has_params:
            params.append(())
            continue
        wshape, bshape = spec.param_shapes()
        if spec.kind == "conv2d":
            k2 = spec.kernel_size ** 2
            fan_in, fan_out = spec.in_channels * k2, spec.out_channels * k2
        else:
            fan_in, fan_out = spec.in_features, spec.out_features
        s = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.doubles(int(np.prod(wshape))).reshape(wshape)
        params.append(((2.0 * u - 1.0) * s, np.zeros(bshape)))
    return tuple(params)


def zero_model(num_classes: int = 4) -> MicroCNN:
    params = tuple(tuple(np.zeros(s) for s in spec.param_shapes()) for spec in architecture(num_classes))
    return MicroCNN(params, num_classes)


def _forward_batch(model: MicroCNN, x):
    outs = []
    for i, (spec, p) in enumerate(zip(model.layers, model.params)):
        x = layer_forward(spec, p, x, i)
        outs.append(x)
    return outs


def forward(model: MicroCNN, image) -> ForwardTrace:
    """Run the network on one preprocessed 3×H×W image."""
    image = np.asarray(image, dtype=np.float64)
    expected = (3,) + tuple(model.input_size)
    if image.shape != expected:
        raise ShapeError("network input", 0, expected, image.shape)
    outs = _forward_batch(model, image[None])
    acts = [a[0] for a in outs]
    logits = acts[-1]
    return ForwardTrace(image, acts, logits, softmax(logits))


def class_prob(model: MicroCNN, image_raw, c: int, prep=MICRO_PROFILE) -> float:
    """``f_c`` of a raw [0, 1] image: softmax probability of class ``c``."""
    return float(forward(model, preprocess(image_raw, prep)).probs[c])


def backward(model: MicroCNN, layer_inputs, upstream, stop_at: int = 0):
    """Backpropagate ``upstream`` (gradient at the logits) down to layer ``stop_at``.

    ``layer_inputs[i]`` is the batched input of layer ``i``. Returns
    ``(act_grads, param_grads)``: ``act_grads[i]`` is the gradient at the
    output of layer ``i`` for ``i >= stop_at``; ``param_grads[i]`` the
    parameter gradients of layer ``i`` (``()`` when not reached).
    """
    layers = model.layers
    act_grads = {}
    param_grads = [()] * len(layers)
    g = upstream
    for i in range(len(layers) - 1, stop_at - 1, -1):
        act_grads[i] = g
        if i == stop_at and stop_at > 0:
            break
        g, pg = layer_backward(layers[i], model.params[i], layer_inputs[i], g, i)
        param_grads[i] = pg
    return act_grads, param_grads


def _layer_inputs(trace: ForwardTrace):
    return [trace.input[None]] + [a[None] for a in trace.activations[:-1]]


def _prob_upstream(trace: ForwardTrace, c: int):
    p = trace.probs
    if not 0 <= c < p.size:
        raise IndexError(f"class index {c} out of range for {p.size} classes")
    onehot = np.zeros_like(p)
    onehot[c] = 1.0
    return (p[c] * (onehot - p))[None]


def grad_wrt_layer(model: MicroCNN, trace: ForwardTrace, c: int, layer: int) -> np.ndarray:
    """``∂probs[c] / ∂activations[layer]`` for one traced image."""
    if not 0 <= layer < len(model.layers):
        raise IndexError(f"layer index {layer} out of range [0, {len(model.layers)})")
    act_grads, _ = backward(model, _layer_inputs(trace), _prob_upstream(trace, c), stop_at=layer)
    return act_grads[layer][0]


def grad_wrt_params(model: MicroCNN, trace: ForwardTrace, c: int):
    """``∂probs[c] / ∂θ`` for every parameter array, in ``flat_params`` order."""
    _, pg = backward(model, _layer_inputs(trace), _prob_upstream(trace, c), stop_at=0)
    return [g for layer in pg for g in layer]


# weight files -------------------------------------------------------------

def save_weights(model: MicroCNN, path) -> None:
    parametric = [p for p in model.params if p]
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(parametric))]
    for layer in parametric:
        for a in layer:
            chunks.append(struct.pack("<I", a.ndim))
            chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
            chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> MicroCNN:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFileError(f"{path}: truncated weight file")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic (not a CAMF weight file)")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version mismatch (file {version}, supported {FORMAT_VERSION})")
    tensors = []
    for _ in range(2 * count):
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        tensors.append(np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64))
    if pos != len(buf):
        raise WeightFileError(f"{path}: {len(buf) - pos} trailing bytes")
    if count != 3 or tensors[-2].ndim != 2:
        raise ArchitectureMismatchError(f"{path}: architecture mismatch ({count} parametric layers)")
    num_classes = tensors[-2].shape[0]
    layers = architecture(num_classes)
    params, it = [], iter(tensors)
    for i, spec in enumerate(layers):
        if not spec.has_params:
            params.append(())
            continue
        w, b = next(it), next(it)
        if (w.shape, b.shape) != spec.param_shapes():
            raise ArchitectureMismatchError(
                f"{path}: architecture mismatch at layer {i} ({spec.kind}): "
                f"expected {spec.param_shapes()}, file declares {(w.shape, b.shape)}")
        params.append((w, b))
    return MicroCNN(tuple(params), num_classes)


# training -----------------------------------------------------------------

def _loss_and_grads(model: MicroCNN, x, y):
    outs = _forward_batch(model, x)
    probs = softmax(outs[-1])
    n = x.shape[0]
    loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()
    upstream = probs.copy()
    upstream[np.arange(n), y] -= 1.0
    upstream /= n
    _, pg = backward(model, [x] + outs[:-1], upstream)
    return loss, pg


def train_sgd(dataset, epochs: int = 30, learning_rate: float = 0.05, batch_size: int = 16,
              seed: int = 42, num_classes: int = 4, prep=MICRO_PROFILE) -> MicroCNN:
    """Mini-batch SGD on mean cross-entropy.

    Initialization and per-epoch shuffling are drawn from one splitmix64
    stream seeded with ``seed``. The returned model's ``history`` holds the
    mean training loss of each epoch.
    """
    if len(dataset.images) == 0:
        raise ValueError("cannot train on an empty dataset")
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    x_all = np.stack([preprocess(img, prep) for img in dataset.images])
    y_all = np.asarray(dataset.labels, dtype=np.intp)
    params = [tuple(np.array(a) for a in p) for p in init_params(num_classes, seed)]
    rng = SplitMix64(seed ^ 0x5EED)
    history = []
    model = MicroCNN(tuple(params), num_classes)
    for _ in range(epochs):
        order = rng.permutation(len(y_all))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = _loss_and_grads(model, x_all[idx], y_all[idx])
            total += loss * len(idx)
            params = [tuple(a - learning_rate * g for a, g in zip(p, gp)) if p else ()
                      for p, gp in zip(params, grads)]
            model = MicroCNN(tuple(params), num_classes)
        history.append(total / len(y_all))
    return MicroCNN(tuple(params), num_classes, history=tuple(history))


def accuracy(model: MicroCNN, images, labels, prep=MICRO_PROFILE) -> float:
    hits = sum(forward(model, preprocess(img, prep)).predicted == int(lab)
               for img, lab in zip(images, labels))
    return hits / len(labels)
