"""Input preprocessing: resize then per-channel mean/std normalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import bilinear_resize

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class Preprocessing:
    resize_to: tuple = (32, 32)
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError("std components must be positive")
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have one entry per channel")


MICRO_PROFILE = Preprocessing()


def preprocess(image_raw, p: Preprocessing = MICRO_PROFILE) -> np.ndarray:
    """Map a raw C×H×W image in [0, 1] to the network input."""
    image_raw = np.asarray(image_raw, dtype=np.float64)
    if image_raw.ndim != 3 or image_raw.shape[0] != len(p.mean) or min(image_raw.shape[1:]) < 1:
        raise ValueError(f"expected a {len(p.mean)}×H×W image, got shape {image_raw.shape}")
    x = bilinear_resize(image_raw, *p.resize_to)
    mean = np.asarray(p.mean)[:, None, None]
    std = np.asarray(p.std)[:, None, None]
    return (x - mean) / std
