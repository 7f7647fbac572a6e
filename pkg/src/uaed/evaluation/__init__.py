"""Boundary benchmark: NMS thinning, tolerance matching, ODS / OIS / AP."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from ..annotations import AnnotationSet, InvalidInputError, load_annotation_dir, read_index
from .kernels import BACKEND_NAME
from .matching import Correspondence, correspond, match_exact, match_greedy, max_distance
from .metrics import EvalConfig, EvalResult, MatchCounts, compute_metrics, f_measure, sweep
from .nms import nms_thin

__all__ = [
    "BACKEND_NAME",
    "Correspondence",
    "EvalConfig",
    "EvalResult",
    "MatchCounts",
    "compute_metrics",
    "correspond",
    "evaluate_image",
    "evaluate_predictions",
    "match_exact",
    "match_greedy",
    "max_distance",
    "nms_thin",
    "read_probability_png",
    "sweep",
    "write_eval_outputs",
]


def read_probability_png(path) -> np.ndarray:
    """8-bit PNGs scale by 1/255, 16-bit by 1/65535."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32, np.int16) or img.mode.startswith("I"):
        return np.clip(arr.astype(np.float64) / 65535.0, 0.0, 1.0)
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def evaluate_image(prob: np.ndarray, annotations: AnnotationSet, config: EvalConfig, apply_nms: bool = True):
    thinned = nms_thin(prob) if apply_nms else np.asarray(prob, dtype=np.float64)
    return sweep(thinned, annotations, config)


def _find_prediction(pred_dir: Path, image_id: str) -> Path:
    for candidate in (pred_dir / image_id / "edge.png", pred_dir / f"{image_id}.png"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no prediction for {image_id} under {pred_dir}")


def _eval_job(args):
    pred_path, ann_dir, image_id, config, apply_nms = args
    prob = read_probability_png(pred_path)
    ann = load_annotation_dir(image_id, ann_dir)
    return evaluate_image(prob, ann, config, apply_nms)


def evaluate_predictions(
    pred_dir, data_dir, config: EvalConfig | None = None, apply_nms: bool = True, workers: int | None = None
) -> tuple[EvalResult, list[MatchCounts]]:
    """Evaluate ``<pred_dir>/<image_id>/edge.png`` (or ``<image_id>.png``) against a dataset index."""
    config = config or EvalConfig()
    pred_dir = Path(pred_dir)
    data_dir = Path(data_dir)
    entries = read_index(data_dir)
    if not entries:
        raise InvalidInputError(f"dataset at {data_dir} is empty")
    jobs = [
        (_find_prediction(pred_dir, image_id), data_dir / entries[image_id]["annotations"], image_id, config, apply_nms)
        for image_id in sorted(entries)
    ]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            counts = list(pool.map(_eval_job, jobs))
    else:
        counts = [_eval_job(j) for j in jobs]
    return compute_metrics(counts), counts


def write_eval_outputs(out_dir, result: EvalResult, config: EvalConfig, extra: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = [result.ods_f, result.ois_f, result.ap]
    if not all(math.isfinite(v) for v in values):
        raise FloatingPointError(f"non-finite metric in {values}")
    payload = result.to_dict()
    payload["config"] = {
        "tolerance": config.tolerance,
        "n_thresholds": config.n_thresholds,
        "matcher": config.matcher,
        "thin": config.thin,
    }
    payload["tolerance"] = config.tolerance
    if extra:
        payload.update(extra)
    eval_path = out_dir / "eval.json"
    tmp = eval_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, eval_path)

    pr_path = out_dir / "pr.csv"
    with open(pr_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["threshold", "precision", "recall", "f"])
        for r, p, t in result.pr_points:
            writer.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}", f"{float(f_measure(p, r)):.6f}"])
    return [eval_path, pr_path]
