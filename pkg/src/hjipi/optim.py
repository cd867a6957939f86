"""Adam optimizer over flat parameter vectors.

Standard bias-corrected Adam; one state object per optimization run.  The
update is functional (returns new state and new parameters) so training
loops can keep checkpoints by reference without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    learning_rate: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: np.ndarray
    v: np.ndarray


def init_adam(n_params: int, learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, dtype=np.float64) -> AdamState:
    if learning_rate <= 0.0:
        raise ValueError("learning rate must be positive")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("betas must lie in [0, 1)")
    return AdamState(learning_rate, beta1, beta2, eps, 0,
                     np.zeros(n_params, dtype=dtype), np.zeros(n_params, dtype=dtype))


def adam_step(adam: AdamState, theta: np.ndarray,
              grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    if theta.shape != adam.m.shape or grad.shape != adam.m.shape:
        raise ValueError(
            f"shape mismatch: theta {theta.shape}, grad {grad.shape}, "
            f"optimizer {adam.m.shape}")
    t = adam.step + 1
    m = adam.beta1 * adam.m + (1.0 - adam.beta1) * grad
    v = adam.beta2 * adam.v + (1.0 - adam.beta2) * grad * grad
    mhat = m / (1.0 - adam.beta1 ** t)
    vhat = v / (1.0 - adam.beta2 ** t)
    theta_new = theta - adam.learning_rate * mhat / (np.sqrt(vhat) + adam.eps)
    return (AdamState(adam.learning_rate, adam.beta1, adam.beta2, adam.eps, t, m, v),
            theta_new)
