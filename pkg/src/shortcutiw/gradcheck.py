"""Finite-difference gradient checking, always in 64-bit."""

import numpy as np

from .autograd import Tape, Tensor


def grad_check(f, point, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor.  The error per coordinate is
    |analytic - numeric| / max(1, |analytic| + |numeric|); the maximum over
    coordinates is returned.  All arithmetic runs in float64.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = f(x)
    if y.data.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {y.shape}")
    tape.backward(y)
    analytic = x.grad.reshape(-1)

    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        hi = f(Tensor(base.copy(), dtype=np.float64)).item()
        flat[i] = saved - step
        lo = f(Tensor(base.copy(), dtype=np.float64)).item()
        flat[i] = saved
        numeric[i] = (hi - lo) / (2 * step)

    denom = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
