"""``camfuse`` command-line tool.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, report
from .data import ShapesDataset, gen_shapes_dataset
from .fusion import FusionConfig
from .imaging import ImageFormatError, load_image
from .model import DEFAULT_CAM_LAYER, WeightFileError, accuracy, load_weights, save_weights, train_sgd

log = logging.getLogger("camfuse")

DEFAULTS = {
    "theta": 10.0,
    "layer": DEFAULT_CAM_LAYER,
    "seed": 42,
    "methods": ",".join(harness.METHODS),
    "diagnostics": False,
    "n_train": 800,
    "n_test": 100,
    "noise": 0.1,
    "epochs": 30,
    "lr": 0.05,
    "batch_size": 16,
    "out_dir": ".",
}

COMMON = ("config", "out_dir", "seed")
COMMAND_KEYS = {
    "gen-data": COMMON + ("n_train", "n_test", "noise"),
    "train": COMMON + ("data_dir", "weights", "epochs", "lr", "batch_size"),
    "explain": COMMON + ("weights", "image", "theta", "layer", "class_", "diagnostics"),
    "evaluate": COMMON + ("weights", "data_dir", "theta", "layer", "methods"),
    "sweep-theta": COMMON + ("weights", "data_dir", "layer"),
    "ablate": COMMON + ("weights", "data_dir", "image", "theta", "layer", "class_"),
}
CASTS = {"theta": float, "layer": int, "seed": int, "class_": int, "n_train": int, "n_test": int,
         "noise": float, "epochs": int, "lr": float, "batch_size": int}


class UsageError(Exception):
    pass


def _add(p, key):
    flag = "--" + key.rstrip("_").replace("_", "-")
    kw = {"dest": key, "default": None}
    if key == "diagnostics":
        p.add_argument(flag, action="store_true", **kw)
        return
    if key in CASTS:
        kw["type"] = CASTS[key]
    p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camfuse", description="Fusion-CAM saliency maps for a micro-CNN")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name)
        for key in keys:
            _add(p, key)
    return parser


def read_config_file(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment. Keys may use dashes."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "class":
            key = "class_"
        out[key] = value
    return out


def resolve(args) -> dict:
    """Flags override the config file, which overrides defaults."""
    keys = COMMAND_KEYS[args.command]
    file_values = {}
    if args.config:
        try:
            file_values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
    cfg = {}
    for key in keys:
        if key == "config":
            continue
        value = getattr(args, key)
        if value is None or value is False:
            if key in file_values:
                value = file_values[key]
                try:
                    if key == "diagnostics":
                        value = value.lower() in ("1", "true", "yes", "on")
                    elif key in CASTS:
                        value = CASTS[key](value)
                except ValueError as exc:
                    raise UsageError(f"config value for {key}: {exc}") from exc
            elif value is None:
                value = DEFAULTS.get(key)
        cfg[key] = value
    if "theta" in cfg and not 0 <= cfg["theta"] < 100:
        raise UsageError(f"--theta must lie in [0, 100), got {cfg['theta']}")
    if "methods" in cfg:
        methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
        unknown = [m for m in methods if m not in harness.METHODS]
        if unknown or not methods:
            raise UsageError(f"--methods must be drawn from {','.join(harness.METHODS)}")
        cfg["methods"] = methods
    return cfg


def _require(cfg, *keys):
    missing = ["--" + k.rstrip("_").replace("_", "-") for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _require_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def _fusion_config(cfg) -> FusionConfig:
    return FusionConfig(theta=cfg.get("theta", DEFAULTS["theta"]), layer=cfg["layer"])


def _report_config(cfg) -> dict:
    # out_dir is where the report lives; leaving it out keeps reports portable
    return {k.rstrip("_"): v for k, v in cfg.items() if k != "out_dir"}


def cmd_gen_data(cfg):
    out = Path(cfg["out_dir"])
    n_train, n_test = cfg["n_train"], cfg["n_test"]
    if n_train < 1 or n_test < 0:
        raise UsageError("--n-train must be >= 1 and --n-test >= 0")
    ds = gen_shapes_dataset(n_train + n_test, cfg["seed"], cfg["noise"])
    harness.write_dataset(ds.subset(0, n_train), out / "train")
    if n_test:
        harness.write_dataset(ds.subset(n_train, n_train + n_test), out / "test")
    report.write_json({"format_version": report.REPORT_FORMAT_VERSION, "config": _report_config(cfg)},
                      out / "dataset.json")
    log.info("wrote %d train / %d test images to %s", n_train, n_test, out)


def cmd_train(cfg):
    _require(cfg, "data_dir", "weights")
    samples = harness.read_dataset(cfg["data_dir"])
    ds = _as_dataset(samples)
    model = train_sgd(ds, cfg["epochs"], cfg["lr"], cfg["batch_size"], cfg["seed"])
    Path(cfg["weights"]).parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, cfg["weights"])
    summary = {"format_version": report.REPORT_FORMAT_VERSION, "config": _report_config(cfg),
               "epoch_loss": list(model.history),
               "train_accuracy": accuracy(model, ds.images, ds.labels)}
    report.write_json(summary, Path(cfg["out_dir"]) / "train_log.json")
    log.info("final epoch loss %.6f", model.history[-1] if model.history else float("nan"))


def _as_dataset(samples):
    return ShapesDataset([s.image for s in samples], [s.label for s in samples],
                         [s.mask for s in samples], seed=0)


def cmd_explain(cfg):
    _require(cfg, "weights", "image")
    _require_file(cfg["weights"], "weight file")
    _require_file(cfg["image"], "image")
    model = load_weights(cfg["weights"])
    image = load_image(cfg["image"])
    rc = _report_config(cfg)
    rc["weights_sha256"] = harness.file_digest(cfg["weights"])
    harness.explain(model, image, cfg["out_dir"], cfg.get("class_"), _fusion_config(cfg),
                    diagnostics=cfg["diagnostics"], run_config=rc)


def _load_eval_inputs(cfg):
    _require(cfg, "weights", "data_dir")
    _require_file(cfg["weights"], "weight file")
    model = load_weights(cfg["weights"])
    samples = harness.read_dataset(cfg["data_dir"])
    rc = _report_config(cfg)
    rc["weights_sha256"] = harness.file_digest(cfg["weights"])
    return model, samples, rc


def cmd_evaluate(cfg):
    model, samples, rc = _load_eval_inputs(cfg)
    results, timings = harness.evaluate(model, samples, cfg["methods"], _fusion_config(cfg))
    out = Path(cfg["out_dir"])
    report.write_json(harness.build_report(results, rc), out / "report.json")
    report.write_json(timings, out / "timings.json")
    for method, res in results.items():
        agg = res["aggregate"]
        log.info("%s: AD %.2f AI %.2f overall %.4f", method, agg["average_drop"],
                 agg["average_increase"], agg["mean_overall"])


def cmd_sweep_theta(cfg):
    model, samples, rc = _load_eval_inputs(cfg)
    rows = harness.sweep_theta(model, samples, _fusion_config(cfg))
    out = Path(cfg["out_dir"])
    report.write_json({"format_version": report.REPORT_FORMAT_VERSION, "config": rc, "rows": rows},
                      out / "sweep_theta.json")
    lines = ["theta\tAD\tAI\tmean_overall\n"]
    lines += [f"{r['theta']}\t{r['average_drop']:.17g}\t{r['average_increase']:.17g}\t{r['mean_overall']:.17g}\n"
              for r in rows]
    (out / "sweep_theta.tsv").write_text("".join(lines), encoding="utf-8")


def cmd_ablate(cfg):
    if cfg.get("image"):
        _require(cfg, "weights")
        _require_file(cfg["weights"], "weight file")
        _require_file(cfg["image"], "image")
        model = load_weights(cfg["weights"])
        rc = _report_config(cfg)
        rc["weights_sha256"] = harness.file_digest(cfg["weights"])
        harness.ablation_maps(model, load_image(cfg["image"]), cfg["out_dir"], cfg.get("class_"),
                              _fusion_config(cfg), run_config=rc)
        return
    model, samples, rc = _load_eval_inputs(cfg)
    rows = harness.ablate(model, samples, _fusion_config(cfg))
    report.write_json({"format_version": report.REPORT_FORMAT_VERSION, "config": rc, "rows": rows},
                      Path(cfg["out_dir"]) / "ablation.json")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "sweep-theta": cmd_sweep_theta,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve(args)
        Path(cfg["out_dir"]).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"camfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, WeightFileError, ImageFormatError, harness.DatasetError,
            ValueError, OSError) as exc:
        print(f"camfuse {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
