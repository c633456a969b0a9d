"""Two-phase training loop with weight-explosion rollback.

Phase 1: fixed number of epochs, batched (gradients averaged over the
batch). Phase 2: batch size 1 at a lower learning rate, one epoch at a
time, checkpointing after every epoch. An epoch "explodes" when any
parameter or its mean training loss goes non-finite, or when the loss
jumps past ``explosion_factor`` times the previous epoch's; training then
stops and the previous epoch's checkpoint wins. Every run is fully
deterministic under its seed.
"""

from __future__ import annotations

import shutil
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import Dataset
from .errors import ExplosionAtFirstEpoch
from .neural import (
    DEFAULT_ARCH,
    AdamState,
    ArchConfig,
    ModelParams,
    adam_step,
    backward,
    forward,
    init_adam_state,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
)


@dataclass
class TrainConfig:
    checkpoint_dir: Path
    phase1_epochs: int = 10
    phase1_lr: float = 1e-5
    phase1_batch: int = 16
    phase2_lr: float = 5e-6
    phase2_max_epochs: int = 8
    seed: int = 0
    explosion_factor: float = 3.0
    # test hook: return True for (phase, epoch) to force that epoch's loss
    # non-finite and exercise the rollback path
    fault_hook: Callable[[int, int], bool] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.checkpoint_dir = Path(self.checkpoint_dir)
        if self.phase1_lr <= 0 or self.phase2_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.phase2_lr >= self.phase1_lr:
            raise ValueError("phase-2 learning rate must be below phase 1's")
        if self.phase1_batch < 1:
            raise ValueError("batch size must be at least 1")
        if self.phase1_epochs < 0 or self.phase2_max_epochs < 0:
            raise ValueError("epoch counts must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    phase: int
    epoch: int
    train_loss: float
    val_loss: float
    wall_s: float

    def line(self) -> str:
        return (
            f"phase {self.phase} epoch {self.epoch:3d}  "
            f"train {self.train_loss:.6f}  val {self.val_loss:.6f}  "
            f"{self.wall_s:.1f}s"
        )

    def key(self) -> tuple:
        """The deterministic part (wall time excluded)."""
        return (self.phase, self.epoch, self.train_loss, self.val_loss)


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    records: list[EpochRecord]
    final_path: Path
    exploded_at: tuple[int, int] | None = None


def _run_epoch(params, state, dataset, indices, batch_size, lr, rng) -> float:
    order = rng.permutation(len(indices))
    losses = np.empty(len(indices))
    pos = 0
    for start in range(0, len(order), batch_size):
        batch = indices[order[start : start + batch_size]]
        grad_sum = None
        for idx in batch:
            probs, cache = forward(
                params, dataset.windows[idx], dataset.contexts[idx], training=True, rng=rng
            )
            losses[pos] = loss(probs, dataset.targets[idx])
            pos += 1
            grads = backward(params, cache, dataset.targets[idx])
            if grad_sum is None:
                grad_sum = grads
            else:
                for name in grad_sum:
                    grad_sum[name] += grads[name]
        averaged = {name: g / len(batch) for name, g in grad_sum.items()}
        adam_step(params, averaged, state, lr)
    return float(losses.mean())


def evaluate_loss(params: ModelParams, dataset: Dataset, indices: np.ndarray) -> float:
    """Mean loss over a split with dropout disabled; deterministic."""
    if len(indices) == 0:
        return float("nan")
    total = 0.0
    for idx in indices:
        probs, _ = forward(params, dataset.windows[idx], dataset.contexts[idx], training=False)
        total += loss(probs, dataset.targets[idx])
    return total / len(indices)


def _params_finite(params: ModelParams) -> bool:
    return all(np.isfinite(arr).all() for _, arr in params.items())


def train(
    dataset: Dataset,
    config: TrainConfig,
    arch: ArchConfig = DEFAULT_ARCH,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the full schedule and return the surviving checkpoint.

    Per-epoch checkpoints are kept in ``config.checkpoint_dir``; the result
    is copied to ``final.tknm`` byte-for-byte, so a rollback result compares
    bit-identical to the pre-explosion epoch's file.
    """
    ckpt_dir = config.checkpoint_dir
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    params = init_params(arch, seed=config.seed, norm=dataset.norm)
    state = init_adam_state(params)
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if len(train_idx) == 0:
        raise ValueError("dataset has no training examples")

    init_path = ckpt_dir / "init.tknm"
    save_checkpoint(init_path, params, state)
    best_path = init_path
    prev_loss: float | None = None
    records: list[EpochRecord] = []
    exploded_at: tuple[int, int] | None = None

    schedule = [(1, e + 1, config.phase1_lr, config.phase1_batch) for e in range(config.phase1_epochs)]
    schedule += [(2, e + 1, config.phase2_lr, 1) for e in range(config.phase2_max_epochs)]

    for phase, epoch, lr, batch_size in schedule:
        started = time.perf_counter()
        train_loss = _run_epoch(params, state, dataset, train_idx, batch_size, lr, rng)
        if config.fault_hook is not None and config.fault_hook(phase, epoch):
            train_loss = float("nan")

        spiked = prev_loss is not None and train_loss > config.explosion_factor * prev_loss
        if not np.isfinite(train_loss) or not _params_finite(params) or spiked:
            exploded_at = (phase, epoch)
            if phase == 2 and epoch == 1:
                warnings.warn(
                    "fine-tuning exploded on its first epoch; keeping the phase-1 result",
                    ExplosionAtFirstEpoch,
                )
            if log:
                log(f"phase {phase} epoch {epoch:3d}  exploded (train {train_loss}); rolling back")
            params, state = load_checkpoint(best_path)
            break

        path = ckpt_dir / f"p{phase}_e{epoch:03d}.tknm"
        save_checkpoint(path, params, state)
        best_path = path
        prev_loss = train_loss
        val_loss = evaluate_loss(params, dataset, val_idx)
        record = EpochRecord(phase, epoch, train_loss, val_loss, time.perf_counter() - started)
        records.append(record)
        if log:
            log(record.line())

    final_path = ckpt_dir / "final.tknm"
    shutil.copyfile(best_path, final_path)
    return TrainResult(params, state, records, final_path, exploded_at)
