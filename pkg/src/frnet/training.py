"""Dice loss and metrics, Adam, the training loop, and evaluation."""

import csv
import gc
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ConfigError, ContractError, DataError, DimensionError, TrainError
from .models import save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 300
    batch_size: int = 2
    seed: int = 0
    smooth_eps: float = 1.0
    threshold: float = 0.5
    eval_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.smooth_eps < 0:
            raise ConfigError(f"smooth_eps must be >= 0, got {self.smooth_eps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    val_dice: float
    val_acc: float
    wall_time_s: float

    def __post_init__(self):
        if not 0.0 <= self.val_dice <= 1.0:
            raise ContractError(f"val_dice must lie in [0, 1], got {self.val_dice}")
        if not 0.0 <= self.val_acc <= 1.0:
            raise ContractError(f"val_acc must lie in [0, 1], got {self.val_acc}")


def _as_binary(arr, what):
    a = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    if a.size == 0:
        raise ContractError(f"{what} is empty")
    if not np.all((a == 0) | (a == 1)):
        raise ContractError(f"{what} must be binary (0/1)")
    return a


def dice_loss(pred, target, smooth_eps=1.0):
    """1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), summed globally."""
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    t = _as_binary(target, "target")
    if pred.data.size == 0:
        raise ContractError("pred is empty")
    if pred.data.shape != t.shape:
        raise DimensionError(
            "shape", f"pred {pred.data.shape} and target {t.shape} differ"
        )
    t = Tensor(t.astype(pred.data.dtype))
    inter = (pred * t).sum()
    sums = pred.sum() + t.sum()
    return 1.0 - (2.0 * inter + smooth_eps) / (sums + smooth_eps)


def dice_score(pred_mask, target_mask):
    """2|X & Y| / (|X| + |Y|); 1.0 when both masks are empty."""
    x = _as_binary(pred_mask, "pred_mask")
    y = _as_binary(target_mask, "target_mask")
    if x.shape != y.shape:
        raise DimensionError("shape", f"masks {x.shape} and {y.shape} differ")
    total = x.sum() + y.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(x, y).sum() / total)


def accuracy(pred_mask, target_mask):
    """Fraction of matching pixels."""
    x = _as_binary(pred_mask, "pred_mask")
    y = _as_binary(target_mask, "target_mask")
    if x.shape != y.shape:
        raise DimensionError("shape", f"masks {x.shape} and {y.shape} differ")
    return float((x == y).mean())


def adam_step(params, grads, state, hyper=None, t=1):
    """Bias-corrected Adam update, in place; epsilon sits outside the
    square root. Rejects the whole step when any gradient is non-finite."""
    h = {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
    if hyper:
        h.update(hyper)
    if t < 1:
        raise ConfigError(f"step counter must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = h["beta1"], h["beta2"]
    scale = h["lr"] * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params.items():
        g = grads[name]
        s = state[name]
        s["m"] *= b1
        s["m"] += (1.0 - b1) * g
        s["v"] *= b2
        s["v"] += (1.0 - b2) * g * g
        p.data -= scale * s["m"] / (np.sqrt(s["v"]) + h["eps"] * np.sqrt(1.0 - b2 ** t))
    return params, state


class Adam:
    """Holds moments and the step counter for a parameter tree."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.hyper = {"lr": lr, "beta1": beta1, "beta2": beta2, "eps": eps}
        self.state = {
            name: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            for name, p in self.params.items()
        }
        self.t = 0

    def step(self):
        self.t += 1
        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }
        adam_step(self.params, grads, self.state, self.hyper, self.t)


def _sample_arrays(sample):
    # Duck-typed: data-module Samples carry [1,H,W] .image/.mask; bare [H,W] pairs work too.
    if hasattr(sample, "image"):
        image, mask = sample.image, sample.mask
    else:
        image, mask = sample
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    return image, mask


def _stack_batch(samples):
    images, masks = zip(*(_sample_arrays(s) for s in samples))
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DataError(f"batch mixes image shapes {sorted(shapes)}; crop first")
    x = np.stack(images)[:, None, :, :].astype(np.float32)
    t = np.stack(masks)[:, None, :, :].astype(np.float32)
    return x, t


def evaluate(model, dataset, threshold=0.5):
    """Per-image binarized Dice and accuracy, plus their means."""
    if not dataset:
        raise ConfigError("evaluate needs a nonempty dataset")
    was_training = model.training
    model.eval()
    per_image = []
    with no_grad():
        for sample in dataset:
            image, mask = _sample_arrays(sample)
            prob = model(Tensor(image[None, None].astype(np.float32))).data[0, 0]
            pred = (prob > threshold).astype(np.uint8)
            per_image.append((dice_score(pred, mask), accuracy(pred, mask)))
    if was_training:
        model.train()
    return {
        "dice_mean": float(np.mean([d for d, _ in per_image])),
        "acc_mean": float(np.mean([a for _, a in per_image])),
        "per_image": per_image,
    }


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_dice", "val_acc", "wall_time_s"])
        for rec in history:
            writer.writerow(
                [rec.epoch, f"{rec.train_loss:.10g}", f"{rec.val_dice:.10g}",
                 f"{rec.val_acc:.10g}", f"{rec.wall_time_s:.6f}"]
            )


def train(model, train_set, val_set, cfg, history_path=None, checkpoint_path=None):
    """Epochs of dice_loss/Adam with validation-selected best weights.

    Returns (best MetricsRecord, history). The model is left holding the
    best-validation parameters, which also go to checkpoint_path when
    given; ties on val_dice keep the earliest epoch.
    """
    if not train_set:
        raise ConfigError("train needs a nonempty training set")
    if not val_set:
        raise ConfigError("train needs a nonempty validation set")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(dict(model.named_parameters()), lr=cfg.learning_rate)
    history = []
    best = None
    best_state = None
    started = time.perf_counter()
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            x, t = _stack_batch(batch)
            model.zero_grad()
            loss = dice_loss(model(Tensor(x)), t, cfg.smooth_eps)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainError(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss.backward()
            opt.step()
            losses.append(value)
            # Backward closures hold reference cycles, and numpy buffers
            # never advance the cycle collector, so spent graphs pile up
            # for whole epochs without an explicit sweep.
            del loss
            gc.collect()
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            continue
        scores = evaluate(model, val_set, cfg.threshold)
        record = MetricsRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_dice=scores["dice_mean"],
            val_acc=scores["acc_mean"],
            wall_time_s=time.perf_counter() - started,
        )
        history.append(record)
        if best is None or record.val_dice > best.val_dice:
            best = record
            best_state = (
                [p.data.copy() for p in model.parameters()],
                [b.copy() for b in model.buffers()],
            )
    params, buffers = best_state
    for p, saved in zip(model.parameters(), params):
        p.data[...] = saved
    for b, saved in zip(model.buffers(), buffers):
        b[...] = saved
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    if history_path is not None:
        write_history(history, history_path)
    return best, history
