"""Seeded synthetic shapes dataset with ground-truth object masks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = ("square", "disk", "cross", "triangle")

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 generator; doubles are ``(z >> 11) / 2**53``."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) / 9007199254740992.0

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_double()

    def randint(self, n: int) -> int:
        """Integer in ``[0, n)``."""
        return min(int(self.next_double() * n), n - 1)

    def doubles(self, n: int) -> np.ndarray:
        """The next ``n`` doubles as an array; same stream as ``next_double``."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK64
        return (z >> np.uint64(11)).astype(np.float64) / 9007199254740992.0

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


@dataclass
class ShapesDataset:
    images: list
    labels: list
    masks: list
    seed: int
    noise_level: float = 0.0
    colors: list = field(default_factory=list)  # (foreground, background) per image

    def __len__(self):
        return len(self.images)

    def subset(self, start, stop):
        return ShapesDataset(self.images[start:stop], self.labels[start:stop],
                             self.masks[start:stop], self.seed, self.noise_level,
                             self.colors[start:stop])


def rasterize(label: int, cx: float, cy: float, r: float, size: int = 32) -> np.ndarray:
    """Boolean mask of one shape, sampled at pixel centres."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - cx, ys - cy
    if label == 0:
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if label == 1:
        return dx * dx + dy * dy <= r * r
    if label == 2:
        arm = r / 3.0
        return (((np.abs(dx) <= r) & (np.abs(dy) <= arm))
                | ((np.abs(dx) <= arm) & (np.abs(dy) <= r)))
    if label == 3:
        # apex up, base at cy + r
        depth = dy + r
        return (depth >= 0) & (depth <= 2 * r) & (np.abs(dx) <= depth / 2)
    raise ValueError(f"unknown shape class {label}")


def _draw_colors(rng: SplitMix64):
    # light shape on dark ground; mixed polarity does not train in 30 epochs
    fg = np.array([rng.uniform(0.55, 1.0) for _ in range(3)])
    bg = np.array([rng.uniform(0.0, 0.35) for _ in range(3)])
    return fg, bg


def gen_shapes_dataset(n: int, seed: int = 42, noise_level: float = 0.1, size: int = 32) -> ShapesDataset:
    """Generate ``n`` images, one shape each, classes assigned round-robin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= noise_level <= 0.5:
        raise ValueError("noise_level must lie in [0, 0.5]")
    rng = SplitMix64(seed)
    images, labels, masks, colors = [], [], [], []
    for i in range(n):
        label = i % len(CLASS_NAMES)
        r = rng.uniform(0.18 * size, 0.32 * size)
        cx = rng.uniform(r + 1, size - r - 1)
        cy = rng.uniform(r + 1, size - r - 1)
        fg, bg = _draw_colors(rng)
        mask = rasterize(label, cx, cy, r, size)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        if noise_level > 0:
            noise = rng.doubles(3 * size * size).reshape(3, size, size)
            img = np.clip(img + noise_level * (2.0 * noise - 1.0), 0.0, 1.0)
        images.append(img)
        labels.append(label)
        masks.append(mask)
        colors.append((fg, bg))
    return ShapesDataset(images, labels, masks, seed, noise_level, colors)
