"""Fusion-CAM: denoise, confidence-weighted union, similarity-aware fusion."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cam import grad_cam, normalize_map, score_cam
from .model import DEFAULT_CAM_LAYER, MicroCNN, forward
from .preprocess import MICRO_PROFILE, preprocess


class FusionError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"fusion stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class FusionConfig:
    theta: float = 10.0
    layer: int = DEFAULT_CAM_LAYER
    beta_clamp: bool = True
    record_diagnostics: bool = False

    def __post_init__(self):
        if not 0 <= self.theta < 100:
            raise ValueError(f"theta must lie in [0, 100), got {self.theta}")


@dataclass
class ContributionWeights:
    beta_degrad: float
    beta_region: float
    beta_gradregion: float


@dataclass
class FusionDiagnostics:
    grad: np.ndarray
    degrad: np.ndarray
    region: np.ndarray
    gradregion: np.ndarray
    w_gradregion: np.ndarray
    w_region: np.ndarray
    similarity: np.ndarray
    betas: ContributionWeights
    timings: dict = field(default_factory=dict)


def denoise(m, theta: float) -> np.ndarray:
    """Zero the bottom ``theta`` percent of pixel intensities.

    The threshold is the nearest-rank lower percentile over all pixels: with
    ``k = floor(theta/100 * N)`` it is the ``(k+1)``-th smallest value, and
    everything at or above it is kept untouched.
    """
    if not 0 <= theta < 100:
        raise ValueError(f"theta must lie in [0, 100), got {theta}")
    m = np.asarray(m, dtype=np.float64)
    if theta == 0:
        return m.copy()
    k = math.floor(theta * m.size / 100)
    threshold = np.partition(m.ravel(), k)[k]
    return np.where(m >= threshold, m, 0.0)


def black_baseline(model: MicroCNN, image_raw, c: int, prep=MICRO_PROFILE) -> float:
    """``f_c(I_b)`` for an all-zero raw image of the same size."""
    return float(forward(model, preprocess(np.zeros_like(image_raw), prep)).probs[c])


def masked_prob(model: MicroCNN, image_raw, m, c: int, prep=MICRO_PROFILE) -> float:
    """``f_c(m * I0)``: every colour channel multiplied by the map in raw pixel space."""
    image_raw = np.asarray(image_raw, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != image_raw.shape[1:]:
        raise ValueError(f"map shape {m.shape} does not match image {image_raw.shape[1:]}")
    return float(forward(model, preprocess(m[None] * image_raw, prep)).probs[c])


def contribution_weight(model: MicroCNN, image_raw, m, c: int, prep=MICRO_PROFILE,
                        baseline=None) -> float:
    """``beta = f_c(m * I0) - f_c(I_b)``."""
    if baseline is None:
        baseline = black_baseline(model, image_raw, c, prep)
    return masked_prob(model, image_raw, m, c, prep) - baseline


def _clamped(beta, clamp):
    return max(beta, 0.0) if clamp else beta


def combine(deg, reg, beta_deg: float, beta_reg: float, clamp: bool = True) -> np.ndarray:
    """Weighted union of the two maps (not normalized).

    When both effective weights are zero the plain average is returned.
    """
    deg = np.asarray(deg, dtype=np.float64)
    reg = np.asarray(reg, dtype=np.float64)
    if deg.shape != reg.shape:
        raise ValueError(f"map shapes differ: {deg.shape} vs {reg.shape}")
    bd, br = _clamped(beta_deg, clamp), _clamped(beta_reg, clamp)
    if bd == 0 and br == 0:
        return (deg + reg) / 2
    return bd * deg + br * reg


def reweight(combined, region, beta_gradregion: float, beta_region: float, clamp: bool = True):
    """Scale both maps by their betas, then jointly by their common maximum.

    The joint rescale keeps the beta-induced relative scale while bounding
    both maps for the similarity step.
    """
    l1 = _clamped(beta_gradregion, clamp) * np.asarray(combined, dtype=np.float64)
    l2 = _clamped(beta_region, clamp) * np.asarray(region, dtype=np.float64)
    m = max(np.abs(l1).max(), np.abs(l2).max())
    if m == 0:
        return np.zeros_like(l1), np.zeros_like(l2)
    return l1 / m, l2 / m


def similarity(l1, l2) -> np.ndarray:
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    for name, m in (("L1", l1), ("L2", l2)):
        if m.min() < 0 or m.max() > 1:
            raise ValueError(f"{name} leaves [0, 1] (range {m.min()}..{m.max()})")
    return 1.0 - np.abs(l1 - l2)


def fuse_raw(l1, l2, s) -> np.ndarray:
    """Per pixel: ``S * max(L1, L2) + (1 - S) * (L1 + L2) / 2``."""
    return s * np.maximum(l1, l2) + (1.0 - s) * ((l1 + l2) / 2)


def fuse(l1, l2, s) -> np.ndarray:
    return normalize_map(fuse_raw(l1, l2, s))


class _Stages:
    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except FusionError:
            raise
        except Exception as exc:
            raise FusionError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


def fusion_cam(model: MicroCNN, image_raw, c: int, config: FusionConfig = FusionConfig(),
               prep=MICRO_PROFILE, denoise_stage: bool = True):
    """Run the full pipeline. Returns ``(map, diagnostics-or-None)``.

    ``denoise_stage=False`` bypasses denoising altogether (the gradient map
    feeds the union directly).
    """
    image_raw = np.asarray(image_raw, dtype=np.float64)
    st = _Stages()
    x = st.run("preprocess", preprocess, image_raw, prep)
    trace = st.run("forward", forward, model, x)
    l_grad = st.run("grad_cam", grad_cam, model, image_raw, c, config.layer, prep, trace=trace)
    l_degrad = st.run("denoise", denoise, l_grad, config.theta) if denoise_stage else l_grad
    base = st.run("baseline", black_baseline, model, image_raw, c, prep)
    l_region = st.run("score_cam", score_cam, model, image_raw, c, config.layer, prep,
                      baseline=base, trace=trace)
    b_deg = st.run("weights", contribution_weight, model, image_raw, l_degrad, c, prep, base)
    b_reg = st.run("weights", contribution_weight, model, image_raw, l_region, c, prep, base)
    l_gr = st.run("combine", combine, l_degrad, l_region, b_deg, b_reg, config.beta_clamp)
    l_gr = normalize_map(l_gr)
    b_gr = st.run("weights", contribution_weight, model, image_raw, l_gr, c, prep, base)
    l1, l2 = st.run("reweight", reweight, l_gr, l_region, b_gr, b_reg, config.beta_clamp)
    s = st.run("similarity", similarity, l1, l2)
    out = st.run("fuse", fuse, l1, l2, s)
    if not config.record_diagnostics:
        return out, None
    diag = FusionDiagnostics(l_grad, l_degrad, l_region, l_gr, l1, l2, s,
                             ContributionWeights(b_deg, b_reg, b_gr), st.timings)
    return out, diag


ABLATION_SETTINGS = {
    1: "baseline: unweighted sum of Grad-CAM and Score-CAM",
    2: "baseline + denoising",
    3: "baseline + weighted union",
    4: "full pipeline",
}


def ablation_map(model: MicroCNN, image_raw, c: int, setting: int,
                 config: FusionConfig = FusionConfig(), prep=MICRO_PROFILE) -> np.ndarray:
    """Saliency map for one of the four progressive ablation settings."""
    if setting not in ABLATION_SETTINGS:
        raise ValueError(f"unknown ablation setting {setting}")
    if setting == 4:
        return fusion_cam(model, image_raw, c, config, prep)[0]
    image_raw = np.asarray(image_raw, dtype=np.float64)
    trace = forward(model, preprocess(image_raw, prep))
    l_grad = grad_cam(model, image_raw, c, config.layer, prep, trace=trace)
    base = black_baseline(model, image_raw, c, prep)
    l_region = score_cam(model, image_raw, c, config.layer, prep, baseline=base, trace=trace)
    if setting == 1:
        return normalize_map(combine(l_grad, l_region, 1.0, 1.0, config.beta_clamp))
    l_degrad = denoise(l_grad, config.theta)
    if setting == 2:
        return normalize_map(combine(l_degrad, l_region, 1.0, 1.0, config.beta_clamp))
    b_deg = contribution_weight(model, image_raw, l_degrad, c, prep, base)
    b_reg = contribution_weight(model, image_raw, l_region, c, prep, base)
    return normalize_map(combine(l_degrad, l_region, b_deg, b_reg, config.beta_clamp))
