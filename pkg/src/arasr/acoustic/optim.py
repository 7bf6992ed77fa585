"""Adam with the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-3
    decay_factor: float = 10.0
    decay_every: int = 2  # epochs

    def lr(self, epoch: int) -> float:
        """Divide the initial rate by ``decay_factor`` once every ``decay_every`` epochs."""
        k = epoch // self.decay_every if self.decay_every > 0 else 0
        return self.initial_lr / self.decay_factor ** k


@dataclass
class OptimizerState:
    lr: float = 1e-3
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 1e-3) -> "OptimizerState":
        return cls(lr=lr, first_moment={k: np.zeros_like(v) for k, v in params.items()},
                   second_moment={k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: OptimizerState,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Bias-corrected Adam update applied in place; returns ``params``.

    A non-finite gradient aborts the step before any parameter or moment is touched.
    """
    if state.lr <= 0:
        raise TrainingError(f"learning rate must be positive, got {state.lr}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k}; step {state.step + 1} aborted")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = state.first_moment.setdefault(k, np.zeros_like(params[k]))
        v = state.second_moment.setdefault(k, np.zeros_like(params[k]))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[k] -= (state.lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(params[k].dtype)
    return params
