"""Faithfulness metrics: Average Drop/Increase, insertion/deletion AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MicroCNN, forward
from .preprocess import MICRO_PROFILE, preprocess

N_STEPS = 100
FRACTIONS = np.arange(N_STEPS + 1) / N_STEPS


@dataclass(frozen=True)
class ScorePair:
    y: float  # class probability on the full image
    o: float  # class probability on the map-masked image


@dataclass
class PerturbationCurve:
    mode: str
    fractions: np.ndarray
    scores: np.ndarray

    @property
    def auc(self) -> float:
        return trapezoid_auc(self.fractions, self.scores)


def average_drop(pairs) -> float:
    """Mean relative confidence loss, in percent."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("average_drop needs at least one score pair")
    total = 0.0
    for p in pairs:
        if p.y <= 0:
            raise ValueError(f"baseline score must be positive, got {p.y}")
        total += max(0.0, p.y - p.o) / p.y
    return total / len(pairs) * 100


def average_increase(pairs) -> float:
    """Percentage of pairs whose masked score strictly exceeds the baseline."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("average_increase needs at least one score pair")
    return sum(p.o > p.y for p in pairs) / len(pairs) * 100


def trapezoid_auc(x, y) -> float:
    return float(np.trapezoid(np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)))


def pixel_ranking(m) -> np.ndarray:
    """Flat pixel indices by descending saliency; ties keep row-major order."""
    return np.argsort(-np.asarray(m, dtype=np.float64).ravel(), kind="stable")


def perturbation_curve(model: MicroCNN, image_raw, m, c: int, mode: str,
                       prep=MICRO_PROFILE) -> PerturbationCurve:
    """Class probability as the top-ranked pixels are blackened or revealed in 1% steps.

    ``deletion`` starts from the full image and blackens; ``insertion``
    starts from black and reveals. Pixels leave/enter with all channels.
    """
    if mode not in ("deletion", "insertion"):
        raise ValueError(f"mode must be 'deletion' or 'insertion', got {mode!r}")
    image_raw = np.asarray(image_raw, dtype=np.float64)
    m = np.asarray(m)
    if m.shape != image_raw.shape[1:]:
        raise ValueError(f"map shape {m.shape} does not match image {image_raw.shape[1:]}")
    order = pixel_ranking(m)
    n = order.size
    flat = image_raw.reshape(image_raw.shape[0], n)
    scores = np.empty(N_STEPS + 1)
    for step in range(N_STEPS + 1):
        top = order[: step * n // N_STEPS]
        if mode == "deletion":
            cur = flat.copy()
            cur[:, top] = 0.0
        else:
            cur = np.zeros_like(flat)
            cur[:, top] = flat[:, top]
        scores[step] = forward(model, preprocess(cur.reshape(image_raw.shape), prep)).probs[c]
    return PerturbationCurve(mode, FRACTIONS.copy(), scores)


def overall_score(insertion_auc: float, deletion_auc: float) -> float:
    return insertion_auc - deletion_auc


def localization_mass(m, mask) -> float:
    """Fraction of total saliency falling inside ``mask``."""
    m = np.asarray(m, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if m.shape != mask.shape:
        raise ValueError(f"map shape {m.shape} does not match mask {mask.shape}")
    total = m.sum()
    if total <= 0:
        raise ValueError("localization mass of an all-zero map is undefined")
    return float(m[mask].sum() / total)
