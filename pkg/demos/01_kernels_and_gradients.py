"""
Layer kernels and their gradients
=================================

Every layer of the micro-CNN has a hand-written forward and backward pass.
Here we push one random batch through a convolution and check the backward
pass against a central finite difference.
"""
import numpy as np

from camfuse.kernels import LayerSpec, bilinear_resize, layer_backward, layer_forward, softmax

rng = np.random.default_rng(0)

# %% a 3x3 convolution, two input channels, four output channels
conv = LayerSpec("conv2d", in_channels=2, out_channels=4, kernel_size=3, padding=1)
w, b = rng.normal(size=conv.param_shapes()[0]), rng.normal(size=conv.param_shapes()[1])
x = rng.normal(size=(1, 2, 6, 6))
y = layer_forward(conv, (w, b), x)
print("conv output", y.shape)

# %% backward pass for the scalar loss sum(y * g)
g = rng.normal(size=y.shape)
dx, (dw, db) = layer_backward(conv, (w, b), x, g)


def loss(xx):
    return float(np.sum(layer_forward(conv, (w, b), xx) * g))


h = 1e-6
idx = (0, 1, 2, 3)
xp, xm = x.copy(), x.copy()
xp[idx] += h
xm[idx] -= h
print("analytic", dx[idx], "numeric", (loss(xp) - loss(xm)) / (2 * h))

# %% max pooling sends the gradient to the first maximum of each window
pool = LayerSpec("maxpool2")
tie = np.array([[5.0, 5.0], [5.0, 1.0]]).reshape(1, 1, 2, 2)
print(layer_backward(pool, (), tie, np.ones((1, 1, 1, 1)))[0].reshape(2, 2))

# %% softmax survives huge logits
print(softmax([1000.0, -1000.0, 0.0]))

# %% bilinear upsampling with half-pixel centres
print(bilinear_resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4).round(3))
