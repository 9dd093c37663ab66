"""Optimization loop: AdamW with a linear-warmup cosine learning-rate
schedule, per-epoch metric logging, and best-validation checkpointing.

The learning rate ramps linearly from 0 to the target over the first
warmup_fraction of iterations, then follows
0.5 * target * (1 + cos(pi * (i - N_w) / (N_iter - N_w))).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from modalvit.dataset import SampleRecord, make_batches
from modalvit.preprocess import resize_image
from modalvit.vit import (
    DivergenceError,
    VitConfig,
    backward,
    forward,
    load_checkpoint,
    save_checkpoint,
)

METRIC_FIELDS = ("iteration", "lr", "train_loss", "val_loss", "val_acc")


@dataclass
class TrainConfig:
    max_iters: int = 1000
    target_lr: float = 1e-3
    warmup_fraction: float = 0.10
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    min_class_fraction: float = 0.15
    augment: bool = True
    eval_every: Optional[int] = None  # default: once per epoch
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


def lr_at(i: float, cfg: TrainConfig) -> float:
    """Learning rate at iteration i: linear ramp to the target over the first
    N_w iterations, then the cosine decay down to 0 at max_iters."""
    n_iter = cfg.max_iters
    n_w = cfg.warmup_fraction * n_iter
    if i < n_w:
        return cfg.target_lr * i / n_w
    return 0.5 * cfg.target_lr * (1.0 + math.cos(math.pi * (i - n_w) / (n_iter - n_w)))


def init_adam_state(params: dict[str, np.ndarray]) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "t": 0,
    }


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    cfg: TrainConfig,
) -> tuple[dict, dict]:
    """One decoupled-weight-decay Adam step, in place; returns (params, state)."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if cfg.weight_decay != 0.0:
            update = update + cfg.weight_decay * p
        p -= lr * update
    return params, state


def evaluate_samples(
    samples: Sequence[SampleRecord], params: dict, vit_cfg: VitConfig
) -> tuple[float, float]:
    """Mean eval-mode cross-entropy loss and per-image accuracy."""
    if not samples:
        return float("nan"), float("nan")
    size = vit_cfg.image_size
    losses, correct = [], 0
    for s in samples:
        img = s.image
        if img.shape != (size, size):
            img = resize_image(img, (size, size))
        probs = forward(img, params, vit_cfg, train_mode=False)
        losses.append(-math.log(max(float(probs[s.label]), 1e-300)))
        correct += int(np.argmax(probs)) == s.label
    return float(np.mean(losses)), correct / len(samples)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_val_acc: float = 0.0
    best_dir: Optional[Path] = None
    last_dir: Optional[Path] = None


def train(
    params: dict[str, np.ndarray],
    vit_cfg: VitConfig,
    train_samples: Sequence[SampleRecord],
    val_samples: Sequence[SampleRecord],
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None,
    resume_from: Optional[str | Path] = None,
    steps_this_run: Optional[int] = None,
) -> TrainResult:
    """Run the loop; deterministic for a fixed seed in single-worker mode.

    Checkpoints the best validation per-image accuracy (ties keep the
    earlier step) under out_dir/best and the latest state under
    out_dir/last; metrics go to out_dir/metrics.csv. ``steps_this_run``
    bounds the optimizer steps taken by this invocation (the schedule still
    spans cfg.max_iters), so wall-clock-limited jobs can stop and resume.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    start_step = 0
    best_acc, best_step = -1.0, 0

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        params = ck.params
        state = ck.opt_state if ck.opt_state is not None else init_adam_state(params)
        start_step = ck.step
        history = ck.history
        for row in history:
            if row["val_acc"] > best_acc:
                best_acc, best_step = row["val_acc"], row["iteration"]
    else:
        state = init_adam_state(params)

    epoch_len = max(1, math.ceil(len(train_samples) / cfg.batch_size))
    eval_every = cfg.eval_every or epoch_len

    def checkpoint(tag: str, step: int) -> Optional[Path]:
        if out_dir is None:
            return None
        path = out_dir / tag
        save_checkpoint(path, params, vit_cfg, step, history, opt_state=state)
        return path

    def log_row(step: int, lr: float, train_loss: float) -> dict:
        val_loss, val_acc = evaluate_samples(val_samples, params, vit_cfg)
        row = {
            "iteration": step,
            "lr": lr,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        history.append(row)
        return row

    best_dir = None
    if cfg.max_iters == 0 or start_step >= cfg.max_iters:
        row = log_row(start_step, 0.0, float("nan"))
        if row["val_acc"] > best_acc:
            best_acc, best_step = row["val_acc"], start_step
        best_dir = checkpoint("best", start_step)
        last_dir = checkpoint("last", start_step)
        _write_metrics(out_dir, history)
        return TrainResult(params, history, best_step, best_acc, best_dir, last_dir)

    batches = make_batches(
        train_samples,
        batch_size=cfg.batch_size,
        min_class_fraction=cfg.min_class_fraction,
        seed=cfg.seed,
        augment=cfg.augment,
        target_size=vit_cfg.image_size,
        num_batches=cfg.max_iters,
    )
    running_losses: list[float] = []
    last_dir = None
    for step_idx, (images, labels) in enumerate(batches):
        if step_idx < start_step:
            continue  # deterministic fast-forward on resume
        step = step_idx + 1
        lr = lr_at(step, cfg)
        grad_sum: Optional[dict[str, np.ndarray]] = None
        batch_loss = 0.0
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2, step))
        )
        for img, lab in zip(images, labels):
            loss, grads = backward(img, int(lab), params, vit_cfg, rng=rng)
            batch_loss += loss
            if grad_sum is None:
                grad_sum = grads
            else:
                for k in grad_sum:
                    grad_sum[k] += grads[k]
        n = len(labels)
        batch_loss /= n
        if not math.isfinite(batch_loss):
            raise DivergenceError(f"non-finite training loss at iteration {step}")
        for k in grad_sum:
            grad_sum[k] /= n
        adamw_step(params, grad_sum, state, lr, cfg)
        running_losses.append(batch_loss)

        stopping = steps_this_run is not None and (step - start_step) >= steps_this_run
        if step % eval_every == 0 or step == cfg.max_iters or stopping:
            row = log_row(step, lr, float(np.mean(running_losses)))
            running_losses.clear()
            if row["val_acc"] > best_acc:
                best_acc, best_step = row["val_acc"], step
                best_dir = checkpoint("best", step)
            last_dir = checkpoint("last", step)
        if stopping:
            break

    _write_metrics(out_dir, history)
    if out_dir is not None:
        if best_dir is None:
            prev = out_dir / "best"
            if (prev / "header.json").exists():
                best_dir = prev  # resume run that never improved on the stored best
            else:
                best_dir = checkpoint("best", start_step)
        if last_dir is None:
            last_dir = checkpoint("last", start_step)
    return TrainResult(params, history, best_step, best_acc, best_dir, last_dir)


def _write_metrics(out_dir: Optional[Path], history: list[dict]) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in METRIC_FIELDS})
