"""Gauge transformations: learned continuous / discrete maps, InfoInv and fixed baselines.

A gauge maps a point of the unit cube to the parameters that index a neural
field: a point of the unit square (continuous), a mixture over codebook
entries (discrete), sinusoidal phases (InfoInv), a coordinate restriction
(orthogonal projection) or a hash-table slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .field import MLP, Codebook, FeatureGrid, Module, interpolation_weights

HASH_PRIMES = (1, 2_654_435_761, 805_459_861)


def _check_unit_cube(x: np.ndarray) -> None:
    if x.ndim != 2:
        raise ValueError(f"expected points of shape (P, 3), got {x.shape}")
    inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
    if not inside.all():
        raise ValueError(f"point {x[~inside][0]} lies outside the unit cube")


# ---------------------------------------------------------------------------
# continuous


def orthogonal_project(x, drop_axis: int = 2):
    """Drop one coordinate; works on numpy arrays and tensors of shape (P, 3)."""
    keep = [a for a in range(3) if a != drop_axis]
    if isinstance(x, Tensor):
        return x[:, keep]
    return np.asarray(x)[..., keep]


def triplane_project(x) -> tuple:
    """The three axis-aligned projections (xy, xz, yz)."""
    return orthogonal_project(x, 2), orthogonal_project(x, 1), orthogonal_project(x, 0)


class OrthogonalGauge(Module):
    def __init__(self, drop_axis: int = 2, triplane: bool = False):
        self.drop_axis = drop_axis
        self.triplane = triplane

    def __call__(self, x):
        return triplane_project(x) if self.triplane else orthogonal_project(x, self.drop_axis)


class ContinuousGauge(Module):
    """Learned map from the unit cube to the unit square.

    ``mode="absolute"``: ``y = sigmoid(M(x))``.
    ``mode="offset"``: ``y = clip(proj(x) + M(x), 0, 1)`` where ``proj`` drops
    ``drop_axis``; used by the structural regularizer.

    ``param="mlp"`` uses an MLP for ``M``; ``param="grid"`` a dense 3-D grid of
    values interpolated at ``x``.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 64),
        out_dim: int = 2,
        mode: str = "absolute",
        param: str = "mlp",
        grid_resolution: int = 16,
        drop_axis: int = 2,
        zero_init: bool = True,
    ):
        if mode not in ("absolute", "offset"):
            raise ValueError(f"unknown gauge mode {mode!r}")
        if param not in ("mlp", "grid"):
            raise ValueError(f"unknown gauge parameterization {param!r}")
        self.mode = mode
        self.param = param
        self.out_dim = out_dim
        self.drop_axis = drop_axis
        if param == "mlp":
            self.net = MLP([3, *hidden, out_dim], rng, zero_last=zero_init)
        else:
            scale = 0.0 if zero_init else 0.1
            self.net = FeatureGrid((grid_resolution,) * 3, out_dim, rng, scale=scale)

    def raw(self, x) -> Tensor:
        """Network output before squashing (the offset in offset mode)."""
        x = dc.as_tensor(x)
        _check_unit_cube(x.data)
        if self.param == "mlp":
            return self.net(2.0 * x.data - 1.0)
        return self.net(x.data)

    def __call__(self, x) -> Tensor:
        out = self.raw(x)
        if self.mode == "absolute":
            return dc.sigmoid(out)
        base = orthogonal_project(np.asarray(dc.as_tensor(x).data), self.drop_axis)
        return dc.clip(out + base, 0.0, 1.0)


def continuous_forward(g: ContinuousGauge, x) -> Tensor:
    return g(x)


# ---------------------------------------------------------------------------
# top-k selection


@dataclass
class TopK:
    indices: np.ndarray  # (k,) or (B, k), descending probability
    weights: np.ndarray  # hard forward weights, rows sum to 1
    st: Tensor  # straight-through weights: forward = weights, backward = identity onto P


def _topk_hard(p: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # argmax and the stable sort on -p both keep the lower index first among ties
    if k == 1:
        order = np.argmax(p, axis=-1)[..., None]
    else:
        order = np.argsort(-p, axis=-1, kind="stable")[..., :k]
    values = np.take_along_axis(p, order, axis=-1)
    total = values.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("topk_select: selected probabilities sum to zero")
    hard = np.zeros_like(p)
    np.put_along_axis(hard, order, values / total, axis=-1)
    return order, hard


def topk_select(P, k: int) -> TopK:
    """Differentiable top-k over probability vector(s) ``P`` (last axis).

    Forward: the k largest entries are scattered into zeros and renormalized by
    their sum.  Backward: the identity onto ``P``, so that when ``P`` is a
    softmax of logits the gradient is that of the soft (softmax) lookup.
    """
    P = dc.as_tensor(P)
    p = P.data
    n = p.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"topk_select: k={k} outside [1, {n}]")
    if np.any(np.all(p == 0, axis=-1)):
        raise ValueError("topk_select: probability vector is all zeros")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("topk_select: probabilities must sum to 1")
    order, hard = _topk_hard(p, k)
    return TopK(order, hard, dc.straight_through(hard, P))


# ---------------------------------------------------------------------------
# discrete


def grid_coordinates(resolution: int) -> np.ndarray:
    """Unit-cube positions of all vertices of an ``R^3`` grid, row-major."""
    axis = np.linspace(0.0, 1.0, resolution)
    g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


class DiscreteGauge(Module):
    """Per-grid-vertex distributions over codebook entries, one grid per level.

    ``param="tensor"`` stores a logit vector per vertex; ``param="mlp"``
    predicts the logits from the vertex position with one MLP per level.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        resolutions: Sequence[int] = (16, 32),
        entries: int = 256,
        k: int = 1,
        param: str = "tensor",
        hidden: Sequence[int] = (64, 64),
        logit_scale: float = 1e-2,
    ):
        if param not in ("tensor", "mlp"):
            raise ValueError(f"unknown gauge parameterization {param!r}")
        if not 1 <= k <= entries:
            raise ValueError(f"k={k} outside [1, {entries}]")
        self.resolutions = tuple(int(r) for r in resolutions)
        self.entries = entries
        self.k = k
        self.param = param
        if param == "tensor":
            self.logits = [
                Tensor(rng.normal(0.0, logit_scale, size=(r**3, entries)), requires_grad=True)
                for r in self.resolutions
            ]
        else:
            self.nets = [MLP([3, *hidden, entries], rng) for _ in self.resolutions]

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    def level_logits(self, level: int, vertices: np.ndarray) -> Tensor:
        vertices = np.asarray(vertices, dtype=np.int64)
        if self.param == "tensor":
            return dc.gather(self.logits[level], vertices)
        pos = grid_coordinates_at(self.resolutions[level], vertices)
        return self.nets[level](2.0 * pos - 1.0)

    def probabilities(self, level: int, vertices: np.ndarray) -> Tensor:
        return dc.softmax(self.level_logits(level, vertices))

    def all_logits(self, level: int) -> np.ndarray:
        with dc.no_grad():
            return self.level_logits(level, np.arange(self.resolutions[level] ** 3)).data


def grid_coordinates_at(resolution: int, vertices: np.ndarray) -> np.ndarray:
    r = resolution
    i, rem = np.divmod(vertices, r * r)
    j, l = np.divmod(rem, r)
    return np.stack([i, j, l], axis=-1) / (r - 1.0)


@dataclass
class DiscreteOutput:
    features: Tensor  # (P, levels * D)
    probabilities: list[Tensor]  # per level, (U, N) softmax over touched vertices
    lookups: list[Tensor]  # per level, (U, D) straight-through vertex features
    vertices: list[np.ndarray]  # per level, touched vertex ids


def discrete_forward(g: DiscreteGauge, book: Codebook, x) -> DiscreteOutput:
    """Codebook features of points ``x`` (P, 3) through the discrete gauge.

    Each surrounding grid vertex selects its top-k mixture of codebook vectors;
    the eight vertex features are trilinearly interpolated and the levels are
    concatenated.
    """
    x = np.asarray(dc.as_tensor(x).data, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    _check_unit_cube(x)
    if book.layers != g.levels or book.entries != g.entries:
        raise ValueError(
            f"codebook ({book.layers} layers x {book.entries}) does not match gauge "
            f"({g.levels} levels x {g.entries})"
        )
    feats, probs, looks, verts = [], [], [], []
    P = x.shape[0]
    for level, r in enumerate(g.resolutions):
        corner_ids, w = interpolation_weights(x, (r, r, r))
        uniq, inv = np.unique(corner_ids.reshape(-1), return_inverse=True)
        prob = g.probabilities(level, uniq)
        sel = topk_select(prob, g.k)
        vf = sel.st @ book[level]
        pf = dc.gather(vf, inv).reshape(P, 8, book.dim)
        feats.append((pf * Tensor(w.reshape(P, 8, 1))).sum(axis=1))
        probs.append(prob)
        looks.append(vf)
        verts.append(uniq)
    return DiscreteOutput(dc.concat(feats, axis=-1), probs, looks, verts)


def spatial_hash(coords, table_size: int) -> np.ndarray:
    """``(i*p1 ^ j*p2 ^ l*p3) mod T`` for non-negative integer grid coordinates.

    Products are formed in exact 64-bit unsigned arithmetic; for power-of-two
    tables up to 2**32 this agrees with the 32-bit wrapping variant.
    """
    if table_size <= 0:
        raise ValueError(f"table size must be positive, got {table_size}")
    c = np.asarray(coords)
    if c.shape[-1] != 3:
        raise ValueError(f"expected coordinates with last axis 3, got {c.shape}")
    if np.any(c < 0):
        raise ValueError("hash coordinates must be non-negative")
    c = c.astype(np.uint64)
    p = np.array(HASH_PRIMES, dtype=np.uint64)
    h = (c[..., 0] * p[0]) ^ (c[..., 1] * p[1]) ^ (c[..., 2] * p[2])
    return (h % np.uint64(table_size)).astype(np.int64)


class HashGauge(Module):
    """Fixed spatial hash from grid vertices to table slots, one grid per level."""

    def __init__(self, resolutions: Sequence[int] = (16, 32), table_size: int = 256):
        self.resolutions = tuple(int(r) for r in resolutions)
        self.table_size = table_size

    def vertex_slots(self, level: int, vertices: np.ndarray) -> np.ndarray:
        r = self.resolutions[level]
        i, rem = np.divmod(np.asarray(vertices, dtype=np.int64), r * r)
        j, l = np.divmod(rem, r)
        return spatial_hash(np.stack([i, j, l], axis=-1), self.table_size)


def hash_forward(g: HashGauge, book: Codebook, x) -> Tensor:
    """Codebook features through the fixed hash (one-hot lookups, interpolated)."""
    x = np.asarray(dc.as_tensor(x).data, dtype=np.float64)
    _check_unit_cube(x)
    P = x.shape[0]
    feats = []
    for level, r in enumerate(g.resolutions):
        corner_ids, w = interpolation_weights(x, (r, r, r))
        slots = g.vertex_slots(level, corner_ids.reshape(-1))
        pf = dc.gather(book[level], slots).reshape(P, 8, book.dim)
        feats.append((pf * Tensor(w.reshape(P, 8, 1))).sum(axis=1))
    return dc.concat(feats, axis=-1)


# ---------------------------------------------------------------------------
# InfoInv


def default_frequencies(count: int = 6) -> np.ndarray:
    return (2.0 ** np.arange(count)) * np.pi


class InfoInvEncoder(Module):
    """Sinusoidal gauge ``m -> [cos(m θ_j), sin(m θ_j)]`` stacked over axes and frequencies.

    Output layout per point: for each axis, for each frequency, the pair
    (cos, sin).  Dimension ``2 * F * d``.
    """

    def __init__(self, dims: int = 3, frequencies=None, learnable: bool = False):
        freqs = default_frequencies() if frequencies is None else np.asarray(frequencies, dtype=np.float64)
        freqs = np.broadcast_to(freqs, (dims, freqs.shape[-1])).copy()
        self.dims = dims
        self.theta = Tensor(freqs, requires_grad=learnable)

    @property
    def out_dim(self) -> int:
        return 2 * self.theta.size

    def encode(self, m) -> Tensor:
        m = dc.as_tensor(m)
        if m.ndim == 1:
            m = m.reshape(1, -1)
        if m.shape[1] != self.dims:
            raise ValueError(f"expected coordinates of width {self.dims}, got {m.shape}")
        if not np.isfinite(m.data).all():
            raise ValueError("InfoInv encoding requires finite coordinates")
        P, d = m.shape
        F = self.theta.shape[1]
        phase = m.reshape(P, d, 1) * self.theta.reshape(1, d, F)
        pairs = dc.concat([dc.cos(phase).reshape(P, d, F, 1), dc.sin(phase).reshape(P, d, F, 1)], axis=-1)
        return pairs.reshape(P, 2 * d * F)

    def __call__(self, m, amplitude=None) -> Tensor:
        enc = self.encode(m)
        if amplitude is None:
            return enc
        amplitude = dc.as_tensor(amplitude)
        if amplitude.shape != enc.shape:
            raise ValueError(f"amplitude shape {amplitude.shape} does not match encoding {enc.shape}")
        return amplitude * enc


def infoinv_encode(e: InfoInvEncoder, m, amplitude=None) -> Tensor:
    return e(m, amplitude)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
