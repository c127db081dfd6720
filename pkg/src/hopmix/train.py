"""Seeded training and frozen evaluation of Mixer models."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import Config, config_for_model
from .data import Dataset
from .imlp import fixed_point_iterate, local_lipschitz
from .mixer import MixerConfig, MixerModel
from .nn_core import AdamW, Tensor, backward, cross_entropy, named_rng, no_grad
from .nn_core.functional import log_softmax_np

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"]
KAPPA_HEADER = ["epoch", "layer_index", "kappa"]


class TrainingDiverged(RuntimeError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: MixerConfig = field(default_factory=MixerConfig)
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    label_smoothing: float = 0.1
    eval_every: int = 1
    out_dir: str | None = None
    record_time: bool = False
    kappa_samples: int = 4

    def __post_init__(self):
        # lr = 0 is allowed so a run can be checked to leave weights untouched.
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, epochs >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainConfig":
        return cls(
            model=cfg.model_config(),
            lr=cfg["train.lr"],
            betas=(cfg["train.beta1"], cfg["train.beta2"]),
            eps=cfg["train.eps"],
            weight_decay=cfg["train.weight_decay"],
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            seed=cfg["seed"],
            label_smoothing=cfg["train.label_smoothing"],
            eval_every=cfg["train.eval_every"],
            out_dir=cfg["train.out_dir"],
            record_time=cfg["train.record_time"],
            kappa_samples=cfg["train.kappa_samples"],
        )


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float | None = None

    def as_list(self) -> list:
        return [self.epoch, repr(self.train_loss), repr(self.train_acc), repr(self.val_loss),
                repr(self.val_acc), "" if self.seconds is None else f"{self.seconds:.3f}"]


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    per_class: np.ndarray  # NaN for classes absent from the data
    predictions: np.ndarray


@dataclass
class TrainResult:
    model: MixerModel
    history: list[MetricsRow]
    kappa: list[tuple[int, int, float]]
    best: Checkpoint
    last: Checkpoint
    best_epoch: int
    timing: list[tuple[int, float]]


def check_compatible(cfg: MixerConfig, ds: Dataset) -> None:
    want = (cfg.channels_in, cfg.image_size, cfg.image_size)
    if ds.dims != want:
        raise ConfigMismatch(f"dataset images are {ds.dims}, model expects {want}")
    if ds.num_classes != cfg.num_classes:
        raise ConfigMismatch(f"dataset has {ds.num_classes} classes, model expects {cfg.num_classes}")


def evaluate(model: MixerModel, ds: Dataset, batch_size: int = 250) -> EvalResult:
    """Frozen-inference loss (no smoothing), top-1 accuracy and per-class accuracy."""
    check_compatible(model.cfg, ds)
    was_training = model.training
    model.freeze()
    try:
        n = len(ds)
        nll = np.empty(n)
        pred = np.empty(n, dtype=np.int64)
        labels = ds.labels.astype(np.int64)
        with no_grad():
            for i in range(0, n, batch_size):
                logits = model(model.prepare(ds.images[i:i + batch_size])).data
                logp = log_softmax_np(logits)
                idx = np.arange(len(logits))
                nll[i:i + batch_size] = -logp[idx, labels[i:i + batch_size]]
                pred[i:i + batch_size] = logits.argmax(axis=1)
    finally:
        if was_training:
            model.unfreeze()
    hit = pred == labels
    per_class = np.full(ds.num_classes, np.nan)
    for k in range(ds.num_classes):
        mask = labels == k
        if mask.any():
            per_class[k] = hit[mask].mean()
    # summing in sorted order makes the loss independent of sample order
    loss = float(np.sum(np.sort(nll))) / n if n else float("nan")
    return EvalResult(loss, float(hit.mean()) if n else float("nan"), per_class, pred)


def measure_kappa(model: MixerModel, images: np.ndarray) -> list[float]:
    """Largest local Lipschitz constant of each block's contractive map along its iterates."""
    was_training = model.training
    model.freeze()
    try:
        zs: list[np.ndarray] = []
        with no_grad():
            model(model.prepare(images), capture=zs)
            out = []
            for block, z in zip(model.imlp_blocks(), zs):
                _, its = fixed_point_iterate(block.contractive_f, Tensor(z), max(block.n_iter, 1), record=True)
                out.append(max(local_lipschitz(block, x) for x in its))
    finally:
        if was_training:
            model.unfreeze()
    return out


def _grad_norms(model: MixerModel) -> list[tuple[str, float]]:
    return [(n, float(np.linalg.norm(p.grad)) if p.grad is not None else float("nan"))
            for n, p in model.named_parameters()]


def _diverged(msg: str, model: MixerModel, lr: float, epoch: int, step: int) -> TrainingDiverged:
    norms = sorted(_grad_norms(model), key=lambda t: -np.nan_to_num(t[1], nan=np.inf))[:5]
    detail = ", ".join(f"{n}={g:.3g}" for n, g in norms)
    return TrainingDiverged(f"{msg} at epoch {epoch} step {step}; lr={lr}; largest grad norms: {detail}")


def train(cfg: TrainConfig, train_set: Dataset, val_set: Dataset, config_text: str = "",
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of AdamW on shuffled mini-batches.

    Metrics rows come from frozen evaluation passes at the end of each
    evaluated epoch. The ``seconds`` column stays empty unless
    ``cfg.record_time`` so that metrics files are reproducible byte for byte.
    """
    check_compatible(cfg.model, train_set)
    check_compatible(cfg.model, val_set)
    if not config_text:
        config_text = config_for_model(cfg.model.with_(seed=cfg.seed)).echo()
    model = MixerModel(cfg.model.with_(seed=cfg.seed))
    model.set_input_stats(*train_set.normalization_stats())
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay,
                decay=[p for p in params if p.ndim >= 2])
    shuffle = named_rng(cfg.seed, "shuffle")
    x_all = model.prepare(train_set.images)
    y_all = train_set.labels.astype(np.int64)
    probe_images = val_set.images[:cfg.kappa_samples]

    history: list[MetricsRow] = []
    kappa_rows: list[tuple[int, int, float]] = []
    timing: list[tuple[int, float]] = []
    best = Checkpoint.from_model(model, config_text)
    best_epoch, best_acc = 0, -1.0
    n = len(train_set)
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        model.unfreeze()
        order = shuffle.permutation(n)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = cross_entropy(model(x_all[idx]), y_all[idx], cfg.label_smoothing)
                if not np.isfinite(loss.item()):
                    raise _diverged("non-finite loss", model, cfg.lr, epoch, step)
                backward(loss)
                opt.step()
            except FloatingPointError as exc:  # includes NonFiniteError
                raise _diverged(f"non-finite value ({exc})", model, cfg.lr, epoch, step) from None
        elapsed = time.perf_counter() - t0
        timing.append((epoch, elapsed))
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            continue
        tr = evaluate(model, train_set)
        va = evaluate(model, val_set)
        row = MetricsRow(epoch, tr.loss, tr.accuracy, va.loss, va.accuracy,
                         elapsed if cfg.record_time else None)
        history.append(row)
        if len(probe_images):
            for layer, k in enumerate(measure_kappa(model, probe_images)):
                kappa_rows.append((epoch, layer, k))
        if va.accuracy > best_acc:
            best_acc, best_epoch = va.accuracy, epoch
            best = Checkpoint.from_model(model, config_text)
        if log:
            log(f"epoch {epoch:3d}  train {tr.loss:.4f}/{tr.accuracy:.4f}  val {va.loss:.4f}/{va.accuracy:.4f}")
    model.freeze()
    result = TrainResult(model, history, kappa_rows, best, Checkpoint.from_model(model, config_text),
                         best_epoch, timing)
    if cfg.out_dir:
        write_outputs(result, cfg.out_dir)
    return result


def write_metrics(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(r.as_list() for r in rows)


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [MetricsRow(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                           float(r["val_loss"]), float(r["val_acc"]),
                           float(r["seconds"]) if r["seconds"] else None) for r in rd]


def write_outputs(result: TrainResult, out_dir) -> Path:
    from .plotting import plot_kappa, plot_metrics

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(result.history, out / "metrics.csv")
    with open(out / "kappa.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KAPPA_HEADER)
        w.writerows((e, layer, repr(k)) for e, layer, k in result.kappa)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "seconds"])
        w.writerows((e, f"{s:.3f}") for e, s in result.timing)
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.last, out / "last.ckpt")
    if result.history:
        plot_metrics(result.history, out / "metrics.png")
    plot_kappa(result.kappa, out / "kappa.png")
    return out
