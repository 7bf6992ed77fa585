"""CTC training loop: curriculum batching, Adam with step decay, dev-loss early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .acoustic.model import AcousticNet
from .acoustic.optim import OptimizerState, TrainingError, adam_step
from .config import TrainingConfig
from .corpus import batch_order, collate
from .ctc import CtcTarget, InfeasibleTargetError, batch_ctc_loss
from .text import LabelSequence

log = logging.getLogger(__name__)


@dataclass
class UtteranceSet:
    """Materialized features and label sequences, parallel lists."""

    ids: list[str]
    features: list[np.ndarray]  # (T, F) each
    targets: list[LabelSequence]
    durations: list[float]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TrainState:
    next_epoch: int = 0
    best_dev: float | None = None
    bad_epochs: int = 0
    history: list = field(default_factory=list)
    stop_reason: str | None = None

    def to_dict(self) -> dict:
        return {"next_epoch": self.next_epoch, "best_dev": self.best_dev, "bad_epochs": self.bad_epochs,
                "history": self.history, "stop_reason": self.stop_reason}

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainState":
        return cls(**(d or {}))


def check_feasible(net: AcousticNet, data: UtteranceSet, blank: int) -> None:
    """Every target must fit in the network's output frames, or CTC is undefined."""
    out_len = net.output_lengths([f.shape[0] for f in data.features])
    bad = []
    for uid, n, tgt in zip(data.ids, out_len, data.targets):
        need = CtcTarget(tgt.labels, blank).min_frames()
        if need > n:
            bad.append(f"{uid} needs {need} output frames, has {int(n)}")
    if bad:
        raise InfeasibleTargetError("targets too long for their audio: " + "; ".join(bad))


def _batch_targets(data: UtteranceSet, idx, blank: int):
    return [CtcTarget(data.targets[i].labels, blank) for i in idx]


def evaluate_loss(net: AcousticNet, data: UtteranceSet, blank: int, batch_size: int = 8) -> float:
    """Mean per-utterance CTC loss in inference mode."""
    total = []
    for idx in batch_order(data.durations, batch_size, epoch=0):
        batch = collate([data.ids[i] for i in idx], [data.features[i] for i in idx],
                        [data.targets[i] for i in idx])
        lp, out_len = net.forward(batch.features, batch.lengths, mode="infer")
        losses, _ = batch_ctc_loss(lp, out_len, _batch_targets(data, idx, blank))
        total.extend(losses.tolist())
    return math.fsum(total) / len(total)


def train_epoch(net: AcousticNet, opt: OptimizerState, data: UtteranceSet, cfg: TrainingConfig,
                epoch: int, blank: int) -> float:
    losses = []
    for step, idx in enumerate(batch_order(data.durations, cfg.batch_size, epoch, cfg.seed)):
        batch = collate([data.ids[i] for i in idx], [data.features[i] for i in idx],
                        [data.targets[i] for i in idx])
        net.reseed(epoch, step)
        lp, out_len = net.forward(batch.features, batch.lengths, mode="train")
        loss, grad = batch_ctc_loss(lp, out_len, _batch_targets(data, idx, blank))
        if not np.all(np.isfinite(loss)):
            bad = [batch.ids[i] for i in np.flatnonzero(~np.isfinite(loss))]
            raise TrainingError(f"non-finite CTC loss at epoch {epoch} step {step} for {', '.join(bad)}")
        grads = net.backward(grad / len(idx))
        adam_step(net.params, grads, opt, beta1=cfg.momentum, beta2=cfg.beta2, eps=cfg.eps)
        losses.extend(loss.tolist())
    return math.fsum(losses) / len(losses)


def fit(net: AcousticNet, opt: OptimizerState, train_set: UtteranceSet, dev_set: UtteranceSet | None,
        cfg: TrainingConfig, blank: int, state: TrainState | None = None, on_epoch=None) -> TrainState:
    """Train until ``max_epochs``, early stopping, or ``target_loss``.

    ``on_epoch(state)`` runs after every completed epoch (typically to write a
    resumable checkpoint). Passing back a saved state continues exactly where
    the earlier run stopped: batch order and dropout masks are keyed on
    (seed, epoch, step) rather than on RNG history.
    """
    state = state or TrainState()
    check_feasible(net, train_set, blank)
    if dev_set is not None:
        check_feasible(net, dev_set, blank)
    else:
        log.info("no dev set: early stopping disabled, target loss monitors the training loss")
    schedule = cfg.schedule
    while state.next_epoch < cfg.max_epochs and state.stop_reason is None:
        epoch = state.next_epoch
        opt.lr = schedule.lr(epoch)
        t0 = time.perf_counter()
        train_loss = train_epoch(net, opt, train_set, cfg, epoch, blank)
        dev_loss = evaluate_loss(net, dev_set, blank, cfg.batch_size) if dev_set is not None else None
        record = {"epoch": epoch, "lr": opt.lr, "train_loss": train_loss, "dev_loss": dev_loss}
        state.history.append(record)
        state.next_epoch = epoch + 1
        log.info("epoch %d lr=%.3g train_loss=%.4f dev_loss=%s (%.1fs)", epoch, opt.lr, train_loss,
                 "n/a" if dev_loss is None else f"{dev_loss:.4f}", time.perf_counter() - t0)

        monitored = dev_loss if dev_loss is not None else train_loss
        if dev_loss is not None:
            if state.best_dev is None or dev_loss < state.best_dev:
                state.best_dev, state.bad_epochs = dev_loss, 0
            else:
                state.bad_epochs += 1
                if state.bad_epochs >= cfg.patience:
                    state.stop_reason = (f"early stop: dev loss has not improved on {state.best_dev:.4f} "
                                         f"for {state.bad_epochs} epochs")
        if state.stop_reason is None and cfg.target_loss is not None and monitored < cfg.target_loss:
            state.stop_reason = f"target loss reached: {monitored:.4f} < {cfg.target_loss:g}"
        if state.stop_reason is None and state.next_epoch >= cfg.max_epochs:
            state.stop_reason = f"reached max_epochs={cfg.max_epochs}"
        if on_epoch is not None:
            on_epoch(state)
    if state.stop_reason:
        log.info("training stopped: %s", state.stop_reason)
    return state
