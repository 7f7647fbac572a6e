"""Command-line entry point: ``uaed synth | train | predict | eval | plot``.

Every successful run ends by writing ``manifest.json`` into its output
directory (``plot_manifest.json`` for plots, which share their target's
directory). When OUT is omitted, outputs go to ``$UAED_OUTPUT_ROOT/<command>``
(default ``./runs/<command>``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .annotations import InvalidInputError, load_image, read_index
from .checkpoint import ArchiveError, config_hash, file_digest

log = logging.getLogger("uaed")

OUTPUT_ROOT_ENV = "UAED_OUTPUT_ROOT"
UNCERTAINTY_SCALE = 0.25  # variance mapped to full 16-bit range
U16 = 65535


class CLIError(Exception):
    pass


def _output_dir(arg: str | None, command: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise CLIError(f"{path}: expected a JSON object")
    return data


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_manifest(
    out_dir: Path, command: str, config: dict, seed, inputs: dict, outputs: list, started: float, name="manifest.json", **extra
):
    missing = [str(p) for p in outputs if not Path(p).exists()]
    if missing:
        raise CLIError(f"declared outputs missing: {missing}")
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
        "version": __version__,
        "duration_s": round(time.monotonic() - started, 3),
        **extra,
    }
    _write_json_atomic(out_dir / name, manifest)
    return manifest


def save_u16(path: Path, values: np.ndarray) -> None:
    arr = np.round(np.clip(values, 0.0, 1.0) * U16).astype(np.uint16)
    Image.fromarray(arr).save(path)


# --- subcommands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthdata import SynthConfig, write_dataset

    started = time.monotonic()
    data = _read_json(args.config)
    cfg = SynthConfig.from_dict(data)
    out = _output_dir(args.out, "synth")
    write_dataset(cfg, out)
    index = out / "index.json"
    write_manifest(out, "synth", cfg.to_dict(), cfg.seed, {"config": args.config}, [index], started, n_images=cfg.n_images)
    print(f"wrote {cfg.n_images} images to {out}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, fit

    started = time.monotonic()
    cfg = TrainConfig.from_dict(_read_json(args.config))
    if not (Path(args.data) / "index.json").is_file():
        raise CLIError(f"no dataset index under {args.data}")
    out = _output_dir(args.out, "train")
    if args.resume and not Path(args.resume).is_file():
        raise CLIError(f"checkpoint not found: {args.resume}")
    result = fit(args.data, cfg, out, resume=args.resume)
    ckpts = sorted(out.glob("epoch_*.ckpt"))
    write_manifest(
        out,
        "train",
        cfg.to_dict(),
        cfg.seed,
        {"config": args.config, "data": args.data},
        [result.checkpoint, result.log_path, *ckpts],
        started,
        steps=len(result.records),
        checkpoint_sha256=file_digest(result.checkpoint),
    )
    print(f"trained {len(result.records)} steps, checkpoint {result.checkpoint}")
    return 0


def _prediction_inputs(path: Path) -> list[tuple[str, Path]]:
    """A single image, a dataset directory (index.json) or a directory of PNGs."""
    if path.is_file():
        return [(path.stem, path)]
    if (path / "index.json").is_file():
        entries = read_index(path)
        return [(i, path / entries[i]["image"]) for i in sorted(entries)]
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if files:
            return [(f.stem, f) for f in files]
    raise CLIError(f"no input images at {path}")


def cmd_predict(args) -> int:
    from .training import load_checkpoint, predict

    started = time.monotonic()
    if not Path(args.checkpoint).is_file():
        raise CLIError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    inputs = _prediction_inputs(Path(args.image))
    out = _output_dir(args.out, "predict")
    written = []
    for i, (image_id, path) in enumerate(inputs):
        edge, var = predict(ckpt.model, load_image(path), args.mode, seed=args.seed + i)
        d = out / image_id
        d.mkdir(parents=True, exist_ok=True)
        save_u16(d / "edge.png", edge)
        save_u16(d / "uncertainty.png", var / UNCERTAINTY_SCALE)
        written += [d / "edge.png", d / "uncertainty.png"]
    config = {"checkpoint": file_digest(args.checkpoint), "mode": args.mode}
    write_manifest(
        out,
        "predict",
        config,
        args.seed,
        {"checkpoint": args.checkpoint, "image": args.image},
        written,
        started,
        mode=args.mode,
        scaling={
            "edge.png": "uint16 / 65535 = edge probability",
            "uncertainty.png": f"uint16 / 65535 * {UNCERTAINTY_SCALE} = predicted variance (clipped at {UNCERTAINTY_SCALE})",
        },
        uncertainty_scale=UNCERTAINTY_SCALE,
    )
    print(f"wrote predictions for {len(inputs)} image(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import EvalConfig, evaluate_predictions, write_eval_outputs

    started = time.monotonic()
    cfg = EvalConfig(tolerance=args.tolerance, n_thresholds=args.thresholds, matcher=args.matcher, thin=args.thin)
    for p in (args.pred, args.data):
        if not Path(p).is_dir():
            raise CLIError(f"directory not found: {p}")
    result, counts = evaluate_predictions(args.pred, args.data, cfg, apply_nms=not args.no_nms, workers=args.workers)
    out = _output_dir(args.out, "eval")
    paths = write_eval_outputs(out, result, cfg, extra={"nms": not args.no_nms})
    config = {"tolerance": cfg.tolerance, "n_thresholds": cfg.n_thresholds, "matcher": cfg.matcher, "thin": cfg.thin}
    write_manifest(out, "eval", config, None, {"pred": args.pred, "data": args.data}, paths, started)
    print(f"ODS {result.ods_f:.4f}  OIS {result.ois_f:.4f}  AP {result.ap:.4f}")
    return 0


def _plot_pr(eval_json: Path, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = _read_json(eval_json)
    pts = data.get("pr_points")
    if not pts:
        raise CLIError(f"{eval_json}: missing key 'pr_points'")
    r = [p["recall"] for p in pts]
    p = [p["precision"] for p in pts]
    plt.rcParams["svg.hashsalt"] = "uaed"
    fig, ax = plt.subplots(figsize=(5, 5))
    # iso-F contours
    grid = np.linspace(0.01, 1, 200)
    for f in np.arange(0.1, 1.0, 0.1):
        rr = grid[grid > f / (2 - f)]
        ax.plot(rr, f * rr / (2 * rr - f), color="0.85", lw=0.6)
    ax.plot(r, p, lw=2, label=f"ODS={data['ods_f']:.3f}  AP={data['ap']:.3f}")
    ax.plot([data["ods_recall"]], [data["ods_precision"]], "o", color="C3")
    ax.set(xlim=(0, 1), ylim=(0, 1), xlabel="Recall", ylabel="Precision")
    ax.legend(loc="lower left")
    ax.grid(alpha=0.3)
    path = out / "pr.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [path]


def _plot_overlays(pred_dir: Path, data_dir: Path | None) -> list[Path]:
    from matplotlib import colormaps

    cmap = colormaps["inferno"]
    images = {}
    if data_dir is not None:
        entries = read_index(data_dir)
        images = {i: data_dir / e["image"] for i, e in entries.items()}
    written = []
    for unc in sorted(pred_dir.glob("*/uncertainty.png")):
        image_id = unc.parent.name
        var = np.asarray(Image.open(unc), dtype=np.float64) / U16
        color = cmap(var)[..., :3]
        if image_id in images:
            base = load_image(images[image_id]).astype(np.float64) / 255.0
            gray = base.mean(axis=2, keepdims=True)
            alpha = np.clip(var, 0.0, 1.0)[..., None] ** 0.5
            color = (1 - alpha) * gray + alpha * color
        path = unc.parent / "uncertainty_overlay.png"
        Image.fromarray(np.round(color * 255).astype(np.uint8)).save(path)
        written.append(path)
    if not written:
        raise CLIError(f"no */uncertainty.png under {pred_dir}")
    return written


def cmd_plot(args) -> int:
    started = time.monotonic()
    target = Path(args.target)
    if target.is_file():
        out = Path(args.out) if args.out else target.parent
        out.mkdir(parents=True, exist_ok=True)
        written = _plot_pr(target, out)
    elif target.is_dir():
        out = target
        data = Path(args.data) if args.data else None
        written = _plot_overlays(target, data)
    else:
        raise CLIError(f"not found: {target}")
    digest = hashlib.sha256(target.read_bytes()).hexdigest()[:16] if target.is_file() else None
    config = {"target": str(target), "digest": digest}
    write_manifest(out, "plot", config, None, {"target": target}, written, started, name="plot_manifest.json")
    print(f"wrote {len(written)} plot(s)")
    return 0


# --- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uaed", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"uaed {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-annotator dataset")
    p.add_argument("config")
    p.add_argument("out", nargs="?")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("out", nargs="?")
    p.add_argument("--resume", help="continue from a checkpoint written with the same config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="edge and uncertainty maps for an image, a PNG directory or a dataset")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("out", nargs="?")
    p.add_argument("--mode", choices=("stochastic", "mean"), default="stochastic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="benchmark predictions against a dataset")
    p.add_argument("pred")
    p.add_argument("data")
    p.add_argument("out", nargs="?")
    p.add_argument("--tolerance", type=float, default=0.0075, help="match radius as a fraction of the image diagonal")
    p.add_argument("--thresholds", type=int, default=99)
    p.add_argument("--matcher", choices=("greedy", "exact"), default="greedy")
    p.add_argument("--thin", action="store_true", help="morphologically thin each binarized map")
    p.add_argument("--no-nms", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="PR curve from eval.json, or uncertainty overlays for a prediction directory")
    p.add_argument("target")
    p.add_argument("--out")
    p.add_argument("--data", help="dataset directory for overlay backgrounds")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .training import ConfigMismatchError, NonFiniteLossError

    try:
        return args.func(args)
    except (CLIError, InvalidInputError, ArchiveError, ConfigMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"error: non-finite value: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
