"""SGD with classic heavy-ball momentum, coupled L2 weight decay, and a
step learning-rate schedule (divide by a fixed factor at milestone epochs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass
class SgdState:
    """Hyperparameters plus per-parameter velocity buffers."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    milestones: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 10.0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        ms = tuple(self.milestones)
        if any(not (0 < m < 1) for m in ms) or any(a >= b for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must lie in (0,1) and increase strictly, got {ms}")
        self.milestones = ms


def lr_at_epoch(state: SgdState, epoch: int, total_epochs: int) -> float:
    """Initial rate divided by decay_factor once per milestone already reached.

    Milestone epochs are floor(fraction * total_epochs).
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    passed = sum(1 for m in state.milestones if epoch >= int(m * total_epochs))
    return state.learning_rate / state.decay_factor ** passed


def sgd_step(params: dict[str, Tensor], state: SgdState, epoch: int, total_epochs: int):
    """In-place update: g' = g + wd*w; v = mu*v + g'; w -= lr(epoch)*v."""
    lr = lr_at_epoch(state, epoch, total_epochs)
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name} has no gradient")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        if state.weight_decay:
            g = g + np.asarray(state.weight_decay, dtype=p.dtype) * p.data
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        if state.momentum:
            v = np.asarray(state.momentum, dtype=p.dtype) * v + g
        else:
            v = g.astype(p.dtype, copy=True)
        state.velocities[name] = v
        p.data -= np.asarray(lr, dtype=p.dtype) * v
