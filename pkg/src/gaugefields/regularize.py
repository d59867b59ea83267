"""Gauge regularizers: InfoReg (JS mutual-information bound plus a uniform prior),
its EMD (continuous) and KL (discrete) prior terms, and the cycle / structural baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import diffcore as dc
from .diffcore import Tensor
from .field import MLP, Module


class CriticNetwork(Module):
    """Scalar critic ``T(x, y)`` on concatenated pairs."""

    def __init__(self, x_dim: int, y_dim: int, rng: np.random.Generator, hidden: Sequence[int] = (64, 64, 64)):
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.net = MLP([x_dim + y_dim, *hidden, 1], rng)

    def __call__(self, x, y) -> Tensor:
        x, y = dc.as_tensor(x), dc.as_tensor(y)
        return self.net(dc.concat([x, y], axis=-1)).reshape(-1)


@dataclass
class InfoRegConfig:
    gamma: float = 1.0
    epsilon: float = 0.1
    prior_samples: int = 64
    mi_samples: int = 256
    critic_updates: int = 1

    def __post_init__(self):
        for name in ("gamma", "epsilon"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def js_mi_bound(positives, negatives, critic: Callable, weights=None) -> Tensor:
    """Jensen-Shannon lower bound ``E_w[-sp(-T(x+, y))] - E[sp(T(x-, y))]``.

    ``positives`` and ``negatives`` are ``(x, y)`` pairs of batched arrays or
    tensors.  Positive weights are rescaled to mean one.
    """
    (xp, yp), (xn, yn) = positives, negatives
    if len(xp) == 0 or len(xn) == 0:
        raise ValueError("js_mi_bound needs at least one positive and one negative pair")
    t_pos = critic(xp, yp)
    t_neg = critic(xn, yn)
    pos_term = -dc.softplus(-t_pos)
    if weights is None:
        pos = pos_term.mean()
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != t_pos.shape[0]:
            raise ValueError(f"{w.shape[0]} weights for {t_pos.shape[0]} positive pairs")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("positive-pair weights must be non-negative and not all zero")
        pos = (pos_term * (w / w.sum())).sum()
    return pos - dc.softplus(t_neg).mean()


def shuffled_negatives(x, y, rng: np.random.Generator):
    """Pair each ``x`` with the ``y`` of another sample (a uniformly random permutation)."""
    n = len(dc.as_tensor(x).data)
    perm = rng.permutation(n)
    return x, dc.as_tensor(y)[perm]


# ---------------------------------------------------------------------------
# earth mover's distance


@dataclass
class TransportResult:
    cost: Tensor
    plan: np.ndarray  # (h, h), entries 0 or 1/h
    assignment: np.ndarray  # target index per source point
    cost_matrix: np.ndarray


def emd_exact(a, b) -> TransportResult:
    """Exact EMD between two equal-size uniform point sets.

    With equal masses the optimal plan is a permutation, found by an exact
    assignment solver; ``cost`` is the mean matched Euclidean distance and
    carries gradients to whichever inputs are tensors (plan held fixed).
    """
    a_t, b_t = dc.as_tensor(a), dc.as_tensor(b)
    if a_t.ndim != 2 or b_t.ndim != 2 or a_t.shape[1] != b_t.shape[1]:
        raise ValueError(f"emd_exact: point sets of shape {a_t.shape} and {b_t.shape}")
    h = a_t.shape[0]
    if b_t.shape[0] != h:
        raise ValueError(f"emd_exact: unequal point counts {h} and {b_t.shape[0]}")
    if h == 0:
        raise ValueError("emd_exact: empty point sets")
    if not (np.isfinite(a_t.data).all() and np.isfinite(b_t.data).all()):
        raise ValueError("emd_exact: points must be finite")
    C = np.linalg.norm(a_t.data[:, None, :] - b_t.data[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(C)
    assignment = np.empty(h, dtype=np.int64)
    assignment[rows] = cols
    plan = np.zeros((h, h))
    plan[rows, cols] = 1.0 / h
    cost = dc.l2norm(a_t - b_t[assignment], axis=-1).mean()
    return TransportResult(cost, plan, assignment, C)


def lattice_targets(h: int, rng: np.random.Generator | None = None, jitter: bool = True) -> np.ndarray:
    """``h`` quasi-uniform points on the unit square: one per cell of a sqrt(h) x sqrt(h) lattice."""
    n = int(round(np.sqrt(h)))
    if n * n != h:
        raise ValueError(f"lattice targets need a square count, got {h}")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([i.reshape(-1), j.reshape(-1)], axis=-1).astype(np.float64)
    if jitter:
        if rng is None:
            raise ValueError("jittered lattice needs an rng")
        return (base + rng.random(base.shape)) / n
    return (base + 0.5) / n


def radiance_weighted_indices(weights, h: int, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(w < 0):
        raise ValueError("radiance weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("radiance weights sum to zero")
    return rng.choice(len(w), size=h, replace=True, p=w / total)


def radiance_weighted_sample(points, weights, h: int, rng: np.random.Generator):
    """``h`` draws with replacement, probability proportional to ``weights``."""
    idx = radiance_weighted_indices(weights, h, rng)
    if isinstance(points, Tensor):
        return dc.gather(points, idx)
    return np.asarray(points)[idx]


def prior_continuous(
    g: Callable,
    surface_points,
    weights,
    h: int = 64,
    rng: np.random.Generator | None = None,
    jitter: bool = True,
) -> Tensor:
    """EMD between ``h`` radiance-weighted gauge predictions and ``h`` lattice targets."""
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = radiance_weighted_indices(weights, h, rng)
    pred = g(np.asarray(surface_points)[idx])
    targets = lattice_targets(h, rng, jitter)
    return emd_exact(pred, targets).cost


def prior_discrete(dists) -> Tensor:
    """KL(mean distribution || uniform) for a batch of probability vectors (B, N)."""
    d = dc.as_tensor(dists)
    if d.ndim != 2 or d.shape[0] == 0:
        raise ValueError(f"prior_discrete needs a non-empty (B, N) batch, got shape {d.shape}")
    if np.any(np.abs(d.data.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("prior_discrete: rows must sum to 1")
    n = d.shape[1]
    p_bar = d.mean(axis=0)
    support = np.flatnonzero(p_bar.data > 0)
    p = p_bar[support]
    return (p * dc.log(p * float(n))).sum()


def inforeg_loss(mi_bound, prior, gamma: float, epsilon: float):
    """``-(gamma + epsilon) * mi_bound + epsilon * prior``."""
    return -(gamma + epsilon) * mi_bound + epsilon * prior


# ---------------------------------------------------------------------------
# baselines


class InverseGauge(Module):
    """MLP from the target square back to the unit cube."""

    def __init__(
        self, rng: np.random.Generator, in_dim: int = 2, hidden: Sequence[int] = (64, 64), out_dim: int = 3
    ):
        self.net = MLP([in_dim, *hidden, out_dim], rng)

    def __call__(self, y) -> Tensor:
        return dc.sigmoid(self.net(2.0 * dc.as_tensor(y) - 1.0))


def cycle_loss(x, g: Callable, g_inv: Callable) -> Tensor:
    """Mean squared round-trip error ``||x - g_inv(g(x))||^2``."""
    x_arr = np.asarray(dc.as_tensor(x).data)
    back = g_inv(g(x_arr))
    return ((back - x_arr) ** 2).sum(axis=-1).mean()


def structural_loss(g, x) -> Tensor:
    """Mean squared offset ``||Delta(x)||^2`` of an offset-mode continuous gauge."""
    if getattr(g, "mode", None) != "offset":
        raise ValueError("structural_loss needs a gauge in offset mode")
    return (g.raw(x) ** 2).sum(axis=-1).mean()
