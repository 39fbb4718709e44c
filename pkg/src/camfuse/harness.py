"""Dataset directories, explanation artifacts and evaluation runs."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import report
from .cam import grad_cam, score_cam
from .fusion import ABLATION_SETTINGS, FusionConfig, ablation_map, fusion_cam
from .imaging import ImageFormatError, load_image, load_mask, save_heatmap, save_image, save_mask
from .metrics import (ScorePair, average_drop, average_increase, localization_mass,
                      overall_score, perturbation_curve)
from .model import MicroCNN, forward
from .preprocess import MICRO_PROFILE, preprocess

METHODS = ("grad-cam", "score-cam", "fusion-cam")
SWEEP_THETAS = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90)
LABELS_FILE = "labels.tsv"


class DatasetError(ValueError):
    def __init__(self, message, files=()):
        self.files = list(files)
        if self.files:
            message += ": " + ", ".join(self.files)
        super().__init__(message)


@dataclass
class Sample:
    id: str
    image: np.ndarray
    label: int
    mask: np.ndarray | None = None


def write_dataset(ds, directory) -> None:
    """Images as PNG, ``labels.tsv`` and ``masks/`` beside them."""
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (img, lab, mask) in enumerate(zip(ds.images, ds.labels, ds.masks)):
        name = f"img_{i:05d}.png"
        save_image(img, directory / name)
        save_mask(mask, directory / "masks" / name)
        lines.append(f"{name}\t{lab}\n")
    (directory / LABELS_FILE).write_text("".join(lines), encoding="utf-8")


def read_dataset(directory) -> list:
    directory = Path(directory)
    labels_path = directory / LABELS_FILE
    if not labels_path.is_file():
        raise DatasetError(f"no {LABELS_FILE} in {directory}")
    samples, bad = [], []
    for lineno, line in enumerate(labels_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].strip().lstrip("-").isdigit():
            bad.append(f"{LABELS_FILE}:{lineno}")
            continue
        name, label = parts[0], int(parts[1])
        try:
            image = load_image(directory / name)
            mask_path = directory / "masks" / name
            mask = load_mask(mask_path) if mask_path.is_file() else None
        except (ImageFormatError, OSError):
            bad.append(name)
            continue
        samples.append(Sample(name, image, label, mask))
    if bad:
        raise DatasetError("unreadable dataset entries", bad)
    if not samples:
        raise DatasetError(f"{directory} lists no images")
    return samples


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def method_map(model: MicroCNN, image, c, method: str, config: FusionConfig):
    if method == "grad-cam":
        return grad_cam(model, image, c, config.layer)
    if method == "score-cam":
        return score_cam(model, image, c, config.layer)
    if method == "fusion-cam":
        return fusion_cam(model, image, c, config)[0]
    if method.startswith("ablation-"):
        return ablation_map(model, image, c, int(method.split("-", 1)[1]), config)
    raise ValueError(f"unknown method {method!r}")


def _predict(model, image):
    return forward(model, preprocess(image, MICRO_PROFILE))


def evaluate_map(model: MicroCNN, sample: Sample, c: int, m) -> dict:
    """Faithfulness record of one saliency map."""
    y = float(_predict(model, sample.image).probs[c])
    o = float(_predict(model, m[None] * sample.image).probs[c])
    ins = perturbation_curve(model, sample.image, m, c, "insertion").auc
    dele = perturbation_curve(model, sample.image, m, c, "deletion").auc
    rec = {"y": y, "o": o, "insertion_auc": ins, "deletion_auc": dele,
           "overall": overall_score(ins, dele), "localization_mass": None}
    if sample.mask is not None and m.sum() > 0:
        rec["localization_mass"] = localization_mass(m, sample.mask)
    return rec


def aggregate(records) -> dict:
    """Aggregates recomputed purely from per-image records (in record order)."""
    pairs = [ScorePair(r["y"], r["o"]) for r in records]
    masses = [r["localization_mass"] for r in records if r["localization_mass"] is not None]
    n = len(records)
    return {
        "n": n,
        "average_drop": average_drop(pairs),
        "average_increase": average_increase(pairs),
        "mean_insertion_auc": sum(r["insertion_auc"] for r in records) / n,
        "mean_deletion_auc": sum(r["deletion_auc"] for r in records) / n,
        "mean_overall": sum(r["overall"] for r in records) / n,
        "mean_localization_mass": sum(masses) / len(masses) if masses else None,
    }


def evaluate(model: MicroCNN, samples, methods=METHODS, config: FusionConfig = FusionConfig()):
    """Returns ``(results, timings)``; ``results[method]`` holds records and aggregates.

    Each image is explained for its ground-truth label. Wall-clock timings
    are kept apart from the results so the results stay reproducible.
    """
    results, timings = {}, {}
    for method in methods:
        records, seconds = [], []
        for s in sorted(samples, key=lambda s: s.id):
            trace = _predict(model, s.image)
            start = time.perf_counter()
            m = method_map(model, s.image, s.label, method, config)
            seconds.append(time.perf_counter() - start)
            rec = {"image_id": s.id, "label": s.label, "predicted_class": trace.predicted}
            rec.update(evaluate_map(model, s, s.label, m))
            records.append(rec)
        results[method] = {"records": records, "aggregate": aggregate(records)}
        timings[method] = {"per_image_seconds": dict(zip((r["image_id"] for r in records), seconds)),
                           "mean_seconds_per_map": sum(seconds) / len(seconds)}
    return results, timings


def build_report(results, config: dict) -> dict:
    return {"format_version": report.REPORT_FORMAT_VERSION, "config": config, "methods": results}


def sweep_theta(model: MicroCNN, samples, config: FusionConfig = FusionConfig(), thetas=SWEEP_THETAS):
    rows = []
    for theta in thetas:
        cfg = FusionConfig(theta=theta, layer=config.layer, beta_clamp=config.beta_clamp)
        results, _ = evaluate(model, samples, ("fusion-cam",), cfg)
        agg = results["fusion-cam"]["aggregate"]
        rows.append({"theta": theta, "average_drop": agg["average_drop"],
                     "average_increase": agg["average_increase"], "mean_overall": agg["mean_overall"]})
    return rows


def ablate(model: MicroCNN, samples, config: FusionConfig = FusionConfig()):
    rows = []
    for setting, description in ABLATION_SETTINGS.items():
        results, _ = evaluate(model, samples, (f"ablation-{setting}",), config)
        agg = results[f"ablation-{setting}"]["aggregate"]
        rows.append({"setting": setting, "description": description,
                     "average_drop": agg["average_drop"], "average_increase": agg["average_increase"],
                     "mean_overall": agg["mean_overall"]})
    return rows


DIAGNOSTIC_PNGS = ("grad_cam", "degrad", "score_cam", "combined", "similarity")


def explain(model: MicroCNN, image, out_dir, c=None, config: FusionConfig = FusionConfig(),
            diagnostics: bool = False, run_config=None) -> dict:
    """Write the fused heatmap (plus diagnostics on request) and a JSON sidecar.

    The sidecar carries the fused map itself at full precision; its
    ``timings`` entry is the only part that differs between runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = _predict(model, image)
    target = trace.predicted if c is None else int(c)
    if not 0 <= target < model.num_classes:
        raise ValueError(f"class {target} out of range for {model.num_classes} classes")
    cfg = FusionConfig(config.theta, config.layer, config.beta_clamp, record_diagnostics=True)
    start = time.perf_counter()
    fused, diag = fusion_cam(model, image, target, cfg)
    total = time.perf_counter() - start
    save_heatmap(fused, image, out_dir / "fused.png")
    if diagnostics:
        maps = {"grad_cam": diag.grad, "degrad": diag.degrad, "score_cam": diag.region,
                "combined": diag.gradregion, "similarity": diag.similarity}
        for name in DIAGNOSTIC_PNGS:
            save_heatmap(maps[name], image, out_dir / f"{name}.png")
        save_image(image, out_dir / "input.png")
    sidecar = {
        "format_version": report.REPORT_FORMAT_VERSION,
        "config": run_config or {},
        "class": target,
        "predicted_class": trace.predicted,
        "probs": trace.probs.tolist(),
        "theta": config.theta,
        "layer": config.layer,
        "beta_degrad": diag.betas.beta_degrad,
        "beta_region": diag.betas.beta_region,
        "beta_gradregion": diag.betas.beta_gradregion,
        "fused_map": fused.tolist(),
        "timings": {"total_seconds": total, "stages": diag.timings},
    }
    report.write_json(sidecar, out_dir / "explain.json")
    return sidecar


def ablation_maps(model: MicroCNN, image, out_dir, c=None, config: FusionConfig = FusionConfig(),
                  run_config=None):
    """Per-setting maps of one image: a heatmap PNG each, and all maps at full
    precision in ``ablation_maps.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = _predict(model, image).predicted if c is None else int(c)
    maps = {}
    for setting in ABLATION_SETTINGS:
        m = ablation_map(model, image, target, setting, config)
        save_heatmap(m, image, out_dir / f"ablation_setting{setting}.png")
        maps[setting] = m
    doc = {"format_version": report.REPORT_FORMAT_VERSION, "config": run_config or {}, "class": target,
           "maps": {str(k): v.tolist() for k, v in maps.items()}}
    report.write_json(doc, out_dir / "ablation_maps.json")
    return target, maps

