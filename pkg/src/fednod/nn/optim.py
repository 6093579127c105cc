"""Adam with L2-coupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from .layers import DTYPE


@dataclass(frozen=True)
class Hyperparameters:
    """Optimizer and batching knobs.

    ``momentum`` is used as Adam's beta1.
    """

    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.0001
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in (0, 1), got {self.momentum}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValidationError(f"batch_size must be a positive integer, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValidationError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls(
            0,
            [np.zeros(p.shape, dtype=DTYPE) for p in params],
            [np.zeros(p.shape, dtype=DTYPE) for p in params],
        )


def adam_step(params, grads, state: AdamState, hyper: Hyperparameters):
    """One Adam update with bias correction.

    Weight decay is added to the gradient (``g + wd * w``) before the moment
    updates. Inputs are left untouched; returns ``(new_params, new_state)``.
    """
    if not state.m:
        state = AdamState.zeros_like(params)
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValidationError("params, grads and optimizer state differ in length")
    t = state.step + 1
    b1, b2 = hyper.momentum, hyper.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    lr = hyper.learning_rate / c1
    new_params, new_m, new_v = [], [], []
    for w, g, m, v in zip(params, grads, state.m, state.v):
        if not (w.shape == g.shape == m.shape == v.shape):
            raise ValidationError(f"shape mismatch {w.shape} / {g.shape} / {m.shape} / {v.shape}")
        if not np.isfinite(g).all():
            raise TrainingDivergedError("non-finite gradient")
        if hyper.weight_decay:
            g = g + DTYPE(hyper.weight_decay) * w
        m = m * DTYPE(b1) + g * DTYPE(1.0 - b1)
        v = v * DTYPE(b2) + np.square(g) * DTYPE(1.0 - b2)
        denom = np.sqrt(v / DTYPE(c2))
        denom += DTYPE(hyper.epsilon)
        new_params.append(w - DTYPE(lr) * m / denom)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)
