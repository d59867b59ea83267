from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    rejected: int = 0


def adam_state(params) -> AdamState:
    return AdamState([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> bool:
    """One bias-corrected Adam update in place.

    ``lr`` is a scalar or one rate per parameter.  A step whose gradients are
    not all finite is skipped, counted in ``state.rejected``, and returns False.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    if not all(np.isfinite(g).all() for g in grads):
        state.rejected += 1
        return False
    rates = lr if isinstance(lr, (list, tuple)) else [lr] * len(params)
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        p.data -= rates[i] * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
    return True


@dataclass
class Adam:
    params: list[Tensor]
    lr: float | list[float] = 5e-4
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = adam_state(self.params)

    def step(self, grads) -> bool:
        return adam_step(self.params, grads, self.state, self.lr)
