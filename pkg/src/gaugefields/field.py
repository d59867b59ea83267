"""Neural-field backbones: MLPs, interpolated feature grids and codebooks."""

from __future__ import annotations

import itertools
from typing import Iterator, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class Module:
    """Parameter container.

    Tensors with ``requires_grad`` and nested modules (or lists of them) found
    among the instance attributes are parameters, in attribute insertion order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        bound = 1.0 / np.sqrt(n_in)
        if zero:
            w, b = np.zeros((n_in, n_out)), np.zeros(n_out)
        else:
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-bound, bound, size=n_out)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class MLP(Module):
    """ReLU multilayer perceptron with a linear output layer."""

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        zero_last: bool = False,
    ):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.widths = list(widths)
        n = len(widths) - 1
        self.layers = [
            Linear(widths[i], widths[i + 1], rng, zero=zero_last and i == n - 1)
            for i in range(n)
        ]

    def __call__(self, x) -> Tensor:
        x = dc.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ValueError(f"MLP expects input of shape (B, {self.widths[0]}), got {x.shape}")
        for layer in self.layers[:-1]:
            x = dc.relu(layer(x))
        return self.layers[-1](x)


class MlpField(Module):
    """Coordinate (or feature) MLP with a softplus density head and a sigmoid color head.

    The view direction, when used, is appended to the trunk features just
    before the color head.
    """

    def __init__(
        self,
        in_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (128, 128, 128, 128),
        view_dependent: bool = False,
    ):
        self.in_dim = in_dim
        self.view_dependent = view_dependent
        self.trunk = MLP([in_dim, *hidden], rng) if hidden else None
        width = hidden[-1] if hidden else in_dim
        self.density_head = Linear(width, 1, rng)
        self.color_head = Linear(width + (3 if view_dependent else 0), 3, rng)

    def features(self, x) -> Tensor:
        x = dc.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"field expects input of shape (B, {self.in_dim}), got {x.shape}")
        # hidden activations only: the trunk's last layer is followed by ReLU too
        return dc.relu(self.trunk(x)) if self.trunk is not None else x

    def __call__(self, x, view_dir=None) -> tuple[Tensor, Tensor]:
        h = self.features(x)
        density = dc.softplus(self.density_head(h)).reshape(-1)
        if self.view_dependent:
            if view_dir is None:
                raise ValueError("view-dependent field called without view directions")
            h = dc.concat([h, dc.as_tensor(view_dir)], axis=-1)
        color = dc.sigmoid(self.color_head(h))
        return density, color


def mlp_forward(field: MlpField, x, view_dir=None) -> tuple[Tensor, Tensor]:
    return field(x, view_dir)


# ---------------------------------------------------------------------------
# grids


def interpolation_weights(points: np.ndarray, resolution: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Corner indices (row-major flat) and multilinear weights for each query.

    Grid vertex ``i`` along an axis of resolution ``R`` sits at ``i / (R - 1)``.
    Returns arrays of shape ``(P, 2**d)``.
    """
    idx0, frac, res = _cells(points, resolution)
    d = len(res)
    corners = np.array(list(itertools.product((0, 1), repeat=d)))  # (2^d, d)
    strides = np.array([int(np.prod(res[a + 1:])) for a in range(d)])
    flat = ((idx0[:, None, :] + corners[None]) * strides).sum(-1)
    w = np.where(corners[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(-1)
    return flat, w


def _cells(points, resolution):
    pts = np.asarray(points, dtype=np.float64)
    res = np.asarray(resolution, dtype=np.int64)
    if pts.ndim != 2 or pts.shape[1] != len(res):
        raise ValueError(f"expected points of shape (P, {len(res)}), got {pts.shape}")
    if np.any(res < 2):
        raise ValueError(f"grid resolution must be >= 2 per axis, got {tuple(res)}")
    if not np.all((pts >= 0.0) & (pts <= 1.0)):
        bad = pts[~np.all((pts >= 0.0) & (pts <= 1.0), axis=1)][0]
        raise ValueError(f"query point {bad} lies outside the unit cube")
    scaled = pts * (res - 1)
    idx0 = np.minimum(np.floor(scaled).astype(np.int64), res - 2)
    return idx0, scaled - idx0, res


class FeatureGrid(Module):
    """Dense grid of feature vectors on the unit cube (any dimension)."""

    def __init__(
        self,
        resolution: Sequence[int],
        features: int,
        rng: np.random.Generator | None = None,
        scale: float = 0.1,
        values: np.ndarray | None = None,
    ):
        self.resolution = tuple(int(r) for r in resolution)
        n = int(np.prod(self.resolution))
        if values is None:
            rng = rng or np.random.default_rng(0)
            values = rng.uniform(-scale, scale, size=(n, features))
        values = np.asarray(values, dtype=np.float64).reshape(n, features)
        self.values = Tensor(values, requires_grad=True)

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def features(self) -> int:
        return self.values.shape[1]

    def __call__(self, points) -> Tensor:
        return grid_interpolate(self, points)


def grid_interpolate(grid: FeatureGrid, points) -> Tensor:
    """Multilinear interpolation of ``grid`` at ``points`` of shape (P, d).

    Differentiable w.r.t. the grid values and, when ``points`` is a tensor that
    requires gradients, w.r.t. the query coordinates.  Points outside the unit
    cube are rejected.
    """
    pts_t = dc.as_tensor(points)
    single = pts_t.ndim == 1
    if single:
        pts_t = pts_t.reshape(1, -1)
    res = grid.resolution
    d = len(res)
    idx0, frac, res_arr = _cells(pts_t.data, res)
    corners = np.array(list(itertools.product((0, 1), repeat=d)))
    strides = np.array([int(np.prod(res[a + 1:])) for a in range(d)])
    flat = ((idx0[:, None, :] + corners[None]) * strides).sum(-1)  # (P, 2^d)
    P, C = flat.shape
    feats = dc.gather(grid.values, flat.reshape(-1)).reshape(P, C, grid.features)

    if pts_t.requires_grad:
        frac_t = pts_t * (res_arr - 1).astype(np.float64) - idx0.astype(np.float64)
        cols = []
        for c in corners:
            w = None
            for a in range(d):
                term = frac_t[:, a] if c[a] else 1.0 - frac_t[:, a]
                w = term if w is None else w * term
            cols.append(w.reshape(P, 1))
        weights = dc.concat(cols, axis=1)
    else:
        weights = Tensor(np.where(corners[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(-1))
    out = (feats * weights.reshape(P, C, 1)).sum(axis=1)
    return out.reshape(-1) if single else out


class Codebook(Module):
    """``layers`` tables of ``entries`` learnable vectors of width ``dim``."""

    def __init__(
        self,
        layers: int = 2,
        entries: int = 256,
        dim: int = 128,
        rng: np.random.Generator | None = None,
        scale: float | None = None,
    ):
        rng = rng or np.random.default_rng(0)
        scale = 1.0 / entries if scale is None else scale
        self.layers = layers
        self.entries = entries
        self.dim = dim
        self.tables = [
            Tensor(rng.uniform(-scale, scale, size=(entries, dim)), requires_grad=True)
            for _ in range(layers)
        ]

    def __getitem__(self, layer: int) -> Tensor:
        return self.tables[layer]


def codebook_lookup(book: Codebook, layer: int, weights) -> Tensor:
    """``weights @ V`` for one layer; accepts a single weight vector or a batch."""
    w = dc.as_tensor(weights)
    if w.shape[-1] != book.entries or w.ndim > 2:
        raise ValueError(f"lookup weights must have length {book.entries}, got shape {w.shape}")
    if not np.isfinite(w.data).all():
        raise ValueError("lookup weights must be finite")
    if w.ndim == 1:
        return (w.reshape(1, -1) @ book[layer]).reshape(-1)
    return w @ book[layer]
