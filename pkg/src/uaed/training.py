"""Training loop, checkpoints and inference for the uncertainty-aware edge detector."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .annotations import (
    InvalidInputError,
    Sample,
    fuse_majority,
    fused_training_label,
    label_variance,
    load_dataset,
    weight_map,
)
from .checkpoint import ArchiveError, config_hash, load_archive, save_archive
from .losses import WEIGHTING_MODES, LossConfig, LossReport, balanced_bce, total_loss
from .model import EncoderConfig, UAEDNet, image_to_tensor, sample_prediction

log = logging.getLogger(__name__)

METHODS = ("uaed", "baseline")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, dump_path: Path | None = None):
        super().__init__(message)
        self.dump_path = dump_path


class ConfigMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    seed: int = 0
    crop_size: int | None = 64
    weighting_mode: str = "progressive"
    method: str = "uaed"
    fusion_threshold: float = 0.3
    augment: bool = True
    eps_clamp: float = 1e-6
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if not (self.learning_rate > 0 and self.weight_decay >= 0):
            raise InvalidInputError("learning_rate must be positive and weight_decay non-negative")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise InvalidInputError(f"unknown weighting_mode {self.weighting_mode!r}")
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}")
        stride = self.encoder_config().stride
        if self.crop_size is not None and (self.crop_size < 32 or self.crop_size % stride):
            raise InvalidInputError(f"crop_size {self.crop_size} must be >= 32 and divisible by {stride}")

    def encoder_config(self) -> EncoderConfig:
        kw = dict(self.model)
        kw.setdefault("seed", self.seed)
        return EncoderConfig(**kw)

    def loss_config(self) -> LossConfig:
        return LossConfig(total_epochs=self.epochs, weighting_mode=self.weighting_mode, eps_clamp=self.eps_clamp)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown key {sorted(unknown)[0]!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from None

    def hash(self) -> str:
        # epoch count is excluded so a finished run can be extended
        d = self.to_dict()
        d.pop("epochs")
        return config_hash(d)


def build_model(config: TrainConfig) -> UAEDNet:
    return UAEDNet(config.encoder_config(), with_variance=config.method == "uaed")


def make_optimizer(model: UAEDNet, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)


# --- batches ---------------------------------------------------------------------


@dataclass
class Batch:
    images: torch.Tensor  # (B, 3, H, W)
    labels: torch.Tensor  # (B, H, W)
    var_targets: torch.Tensor  # (B, H, W)
    weights: torch.Tensor  # (B, H, W)
    image_ids: list[str]
    selections: list[int]  # sampled annotation index per image (-1 for fused)


def augment_sample(image: np.ndarray, maps: np.ndarray, crop: int | None, rng: np.random.Generator, flips: bool):
    """Random crop, flips and 90-degree rotations applied identically to the image and all annotations."""
    H, W = maps.shape[1:]
    if crop is not None:
        if H < crop or W < crop:
            raise InvalidInputError(f"image {H}x{W} smaller than crop {crop}")
        r0 = int(rng.integers(0, H - crop + 1))
        c0 = int(rng.integers(0, W - crop + 1))
        image = image[r0 : r0 + crop, c0 : c0 + crop]
        maps = maps[:, r0 : r0 + crop, c0 : c0 + crop]
    if flips:
        if rng.random() < 0.5:
            image, maps = image[:, ::-1], maps[:, :, ::-1]
        if rng.random() < 0.5:
            image, maps = image[::-1], maps[:, ::-1]
        square = image.shape[0] == image.shape[1]
        k = int(rng.integers(4)) if square else 2 * int(rng.integers(2))
        image = np.rot90(image, k, axes=(0, 1))
        maps = np.rot90(maps, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(maps)


def make_batch(samples: Sequence[Sample], config: TrainConfig, rng: np.random.Generator) -> Batch | None:
    """Augment, sample one annotation per image and build the supervision maps.

    Crops whose supervision has no positive pixel are skipped; returns None
    if nothing is left.
    """
    images, labels, targets, weights, ids, picks = [], [], [], [], [], []
    for s in samples:
        image, maps = augment_sample(s.image, s.annotations.maps, config.crop_size, rng, config.augment)
        if config.method == "baseline":
            label, w = fused_training_label(fuse_majority(maps, config.fusion_threshold))
            k = -1
            degenerate = not label.any()
        else:
            k = int(rng.integers(maps.shape[0]))
            label = maps[k]
            w = weight_map(label).weights
            degenerate = not label.any()
        if degenerate:
            continue
        images.append(image_to_tensor(image))
        labels.append(torch.from_numpy(label.astype(np.float32)))
        targets.append(torch.from_numpy(label_variance(maps).astype(np.float32)))
        weights.append(torch.from_numpy(w.astype(np.float32)))
        ids.append(s.image_id)
        picks.append(k)
    if not images:
        return None
    return Batch(
        images=torch.stack(images),
        labels=torch.stack(labels),
        var_targets=torch.stack(targets),
        weights=torch.stack(weights),
        image_ids=ids,
        selections=picks,
    )


# --- one step -------------------------------------------------------------------


def compute_report(model: UAEDNet, batch: Batch, t: float, config: TrainConfig, generator: torch.Generator):
    loss_cfg = config.loss_config()
    pred = model(batch.images)
    if config.method == "baseline":
        y_hat = torch.sigmoid(pred.mu)
        l_edge = balanced_bce(y_hat, batch.labels, batch.weights, config.eps_clamp)
        zero = torch.zeros((), dtype=l_edge.dtype)
        return pred, LossReport(l_bvar=zero, l_edge=l_edge, l_uedge=l_edge, total=l_edge, beta_t=loss_cfg.beta(t))
    eps = torch.randn(pred.mu.shape, generator=generator, dtype=pred.mu.dtype)
    y_hat = sample_prediction(pred.mu, pred.var, eps)
    report = total_loss(y_hat, pred.var, batch.labels, batch.var_targets, batch.weights, t, loss_cfg)
    return pred, report


def _dump_nonfinite(dump_dir: Path | None, batch: Batch, pred, report: LossReport, step: int) -> Path | None:
    if dump_dir is None:
        return None
    dump_dir.mkdir(parents=True, exist_ok=True)
    var = pred.var.detach()
    info = {
        "step": step,
        "image_ids": batch.image_ids,
        "selections": batch.selections,
        "losses": {k: v for k, v in report.to_record().items()},
        "var_pred": {
            "min": float(var.min()),
            "max": float(var.max()),
            "mean": float(var.mean()),
            "n_nonfinite": int((~torch.isfinite(var)).sum()),
        },
        "mu_nonfinite": int((~torch.isfinite(pred.mu.detach())).sum()),
    }
    path = dump_dir / f"nonfinite_step{step:06d}.json"
    path.write_text(json.dumps(info, indent=2, default=str))
    return path


def train_step(
    model: UAEDNet,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    t: float,
    config: TrainConfig,
    generator: torch.Generator,
    step: int = 0,
    dump_dir: Path | None = None,
) -> LossReport:
    """Forward pass with a fresh epsilon, loss, one optimizer update."""
    model.train()
    pred, report = compute_report(model, batch, t, config, generator)
    if not report.is_finite():
        path = _dump_nonfinite(dump_dir, batch, pred, report, step)
        raise NonFiniteLossError(f"non-finite loss at step {step}: {report.to_record()}", path)
    optimizer.zero_grad(set_to_none=True)
    report.total.backward()
    optimizer.step()
    return report


# --- checkpoints ------------------------------------------------------------------


def save_checkpoint(
    path,
    model: UAEDNet,
    optimizer: torch.optim.Optimizer | None,
    config: TrainConfig,
    epoch: int,
    step: int,
    rng: np.random.Generator | None = None,
    generator: torch.Generator | None = None,
) -> Path:
    tensors = {f"model/{n}": p for n, p in model.state_dict().items()}
    optim_meta = None
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        state = optimizer.state_dict()
        for idx, st in state["state"].items():
            for key, value in st.items():
                tensors[f"optim/{names[idx]}/{key}"] = value
        optim_meta = {"param_groups": state["param_groups"], "names": names}
    if generator is not None:
        tensors["rng/torch"] = generator.get_state()
    meta = {
        "kind": "uaed-checkpoint",
        "train_config": config.to_dict(),
        "config_hash": config.hash(),
        "model_config": config.encoder_config().to_dict(),
        "with_variance": model.with_variance,
        "epoch": epoch,
        "step": step,
        "numpy_rng": rng.bit_generator.state if rng is not None else None,
        "optimizer": optim_meta,
    }
    return save_archive(path, meta, tensors)


@dataclass
class LoadedCheckpoint:
    meta: dict
    model: UAEDNet
    config: TrainConfig
    tensors: dict

    @property
    def epoch(self) -> int:
        return self.meta["epoch"]

    @property
    def step(self) -> int:
        return self.meta["step"]

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        om = self.meta["optimizer"]
        if om is None:
            return
        names = om["names"]
        state = {}
        for idx, name in enumerate(names):
            prefix = f"optim/{name}/"
            entry = {k[len(prefix) :]: torch.from_numpy(v) for k, v in self.tensors.items() if k.startswith(prefix)}
            if entry:
                state[idx] = entry
        optimizer.load_state_dict({"state": state, "param_groups": om["param_groups"]})

    def restore_rng(self) -> tuple[np.random.Generator, torch.Generator]:
        rng = np.random.default_rng()
        rng.bit_generator.state = self.meta["numpy_rng"]
        gen = torch.Generator()
        gen.set_state(torch.from_numpy(self.tensors["rng/torch"]))
        return rng, gen


def load_checkpoint(path, expected: TrainConfig | None = None) -> LoadedCheckpoint:
    meta, tensors = load_archive(path)
    if meta.get("kind") != "uaed-checkpoint":
        raise ArchiveError(f"{path} is not a model checkpoint")
    config = TrainConfig.from_dict(meta["train_config"])
    if expected is not None and expected.hash() != meta["config_hash"]:
        raise ConfigMismatchError(
            f"checkpoint {path} was written with config {meta['config_hash']}, current config is {expected.hash()}"
        )
    model = UAEDNet(EncoderConfig(**meta["model_config"]), with_variance=meta["with_variance"])
    state = {k[len("model/") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state, strict=True)
    return LoadedCheckpoint(meta=meta, model=model, config=config, tensors=tensors)


# --- fit ----------------------------------------------------------------------------


@dataclass
class FitResult:
    model: UAEDNet
    checkpoint: Path
    log_path: Path
    records: list[dict]


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def fit(
    dataset,
    config: TrainConfig,
    out_dir,
    resume: str | Path | None = None,
    stop_after_epoch: int | None = None,
) -> FitResult:
    """Train for ``config.epochs`` epochs, writing ``epoch_XXX.ckpt``, ``last.ckpt`` and ``train_log.jsonl``.

    ``dataset`` is a dataset directory or a list of samples. ``resume``
    continues from a checkpoint written with the same configuration;
    ``stop_after_epoch`` ends early (to exercise resuming).
    """
    samples = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if not samples:
        raise InvalidInputError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    torch.use_deterministic_algorithms(True, warn_only=True)

    if resume is not None:
        ckpt = load_checkpoint(resume, expected=config)
        model = ckpt.model
        model.cfg = config.encoder_config()
        optimizer = make_optimizer(model, config)
        ckpt.restore_optimizer(optimizer)
        rng, generator = ckpt.restore_rng()
        start_epoch, step = ckpt.epoch, ckpt.step
        records = []
        if log_path.exists():
            for line in log_path.read_text().splitlines():
                rec = json.loads(line)
                if rec["step"] <= step:
                    records.append(rec)
    else:
        model = build_model(config)
        optimizer = make_optimizer(model, config)
        rng = np.random.default_rng(config.seed)
        generator = torch.Generator().manual_seed(config.seed)
        start_epoch, step = 0, 0
        records = []

    with open(log_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    last = out_dir / "last.ckpt"
    end_epoch = config.epochs if stop_after_epoch is None else min(config.epochs, stop_after_epoch)
    for epoch in range(start_epoch, end_epoch):
        perm = rng.permutation(len(samples))
        for idx in _batches(len(samples), config.batch_size, perm):
            batch = make_batch([samples[i] for i in idx], config, rng)
            if batch is None:
                log.warning("epoch %d: every crop in a batch was degenerate, skipping", epoch)
                continue
            report = train_step(model, optimizer, batch, epoch, config, generator, step, dump_dir=out_dir)
            rec = {"step": step, "epoch": epoch, **report.to_record()}
            rec["selections"] = [[i, k] for i, k in zip(batch.image_ids, batch.selections)]
            rec["n_skipped"] = len(idx) - len(batch.image_ids)
            records.append(rec)
            with open(log_path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            step += 1
        epoch_path = out_dir / f"epoch_{epoch + 1:03d}.ckpt"
        save_checkpoint(epoch_path, model, optimizer, config, epoch + 1, step, rng, generator)
        save_checkpoint(last, model, optimizer, config, epoch + 1, step, rng, generator)
        log.info("epoch %d done, %d steps", epoch + 1, step)
    return FitResult(model=model, checkpoint=last, log_path=log_path, records=records)


# --- inference ----------------------------------------------------------------------


@torch.no_grad()
def predict_distribution(model: UAEDNet, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean logits and variance for an (H, W, 3) image of any size (reflect-padded to the stride)."""
    model.eval()
    x = image_to_tensor(np.asarray(image))[None]
    H, W = x.shape[-2:]
    stride = model.cfg.stride
    Hp = max(32, -(-H // stride) * stride)
    Wp = max(32, -(-W // stride) * stride)
    if (Hp, Wp) != (H, W):
        mode = "reflect" if Hp - H < H and Wp - W < W else "replicate"
        x = F.pad(x, (0, Wp - W, 0, Hp - H), mode=mode)
    pred = model(x)
    return pred.mu[0, :H, :W].numpy().astype(np.float64), pred.var[0, :H, :W].numpy().astype(np.float64)


def predict(model: UAEDNet, image: np.ndarray, mode: str = "mean", seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Edge probability map and uncertainty (predicted variance).

    ``mean`` uses epsilon = 0; ``stochastic`` draws epsilon from a generator seeded with ``seed``.
    """
    if mode not in ("mean", "stochastic"):
        raise InvalidInputError(f"unknown prediction mode {mode!r}")
    mu, var = predict_distribution(model, image)
    mu_t = torch.from_numpy(mu)
    var_t = torch.from_numpy(var)
    if mode == "mean":
        edge = sample_prediction(mu_t, var_t, 0)
    else:
        gen = torch.Generator().manual_seed(int(seed))
        eps = torch.randn(mu_t.shape, generator=gen, dtype=torch.float64)
        edge = sample_prediction(mu_t, var_t, eps)
    return edge.numpy(), var
