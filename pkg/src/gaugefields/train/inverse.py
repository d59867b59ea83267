from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import diffcore as dc
from ..regularize import InverseGauge, radiance_weighted_indices
from .optim import Adam


@dataclass
class InverseFit:
    inverse: InverseGauge
    losses: list[float]


def inverse_loss(inverse: InverseGauge, g: Callable, x: np.ndarray):
    """Mean ``||x - inverse(g(x))||^2``; the forward gauge is held fixed."""
    with dc.no_grad():
        y = np.asarray(dc.as_tensor(g(x)).data)
    back = inverse(y)
    return ((back - x) ** 2).sum(axis=-1).mean()


def fit_inverse_gauge(
    g: Callable,
    points,
    weights=None,
    steps: int = 1000,
    batch: int = 256,
    lr: float = 5e-3,
    seed: int = 0,
    hidden: Sequence[int] = (64, 64),
    inverse: InverseGauge | None = None,
) -> InverseFit:
    """Train an MLP from the target gauge back to the source space.

    Batches are drawn with probability proportional to ``weights`` (uniform
    when omitted), so the inverse is accurate where radiance lives.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be (P, d), got shape {pts.shape}")
    rng = np.random.default_rng([seed, 21])
    with dc.no_grad():
        out_dim = np.asarray(dc.as_tensor(g(pts[:1])).data).shape[-1]
    if inverse is None:
        inverse = InverseGauge(rng, in_dim=out_dim, hidden=hidden, out_dim=pts.shape[1])
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    params = inverse.parameters()
    opt = Adam(params, lr)
    losses = []
    for _ in range(steps):
        idx = radiance_weighted_indices(w, batch, rng)
        loss = inverse_loss(inverse, g, pts[idx])
        losses.append(loss.item())
        opt.step(dc.grad(loss, params))
    return InverseFit(inverse, losses)
