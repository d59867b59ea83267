"""Assembly of gauge + field (+ regularizer networks) for each experiment kind."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from ..field import Codebook, FeatureGrid, MlpField, Module
from ..gauge import (
    ContinuousGauge,
    DiscreteGauge,
    DiscreteOutput,
    HashGauge,
    InfoInvEncoder,
    OrthogonalGauge,
    default_frequencies,
    discrete_forward,
    hash_forward,
)
from ..regularize import CriticNetwork, InverseGauge
from ..render import Composite, Rays, composite, intersect_box, sample_points, stratified_sample
from .config import TrainConfig


@dataclass
class FieldOutput:
    sigma: Tensor  # (P,)
    rgb: Tensor  # (P, 3)
    gauge_out: Tensor | None = None  # continuous: (P, 2) target coordinates
    discrete: DiscreteOutput | None = None
    features: Tensor | None = None  # per-point features fed to the head (discrete)


@dataclass
class RenderOutput:
    comp: Composite
    points: np.ndarray  # (R*S, 3) unit-cube sample positions
    field: FieldOutput
    hit: np.ndarray
    extras: dict = field(default_factory=dict)


class ColorField(MlpField):
    """MlpField whose density head is unused: color from gauge coordinates only."""


class GaugeFieldModel(Module):
    def __init__(self, cfg: TrainConfig, seed: int | None = None):
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng([seed, 11])
        self.kind = cfg.gauge
        self.cfg = cfg
        if self.kind in ("continuous", "orthogonal"):
            r = cfg.density_resolution
            self.density_grid = FeatureGrid((r, r, r), 1, values=np.full((r**3, 1), -1.0))
            if self.kind == "continuous":
                mode = "offset" if cfg.regularizer == "structural" else "absolute"
                self.gauge = ContinuousGauge(
                    rng, hidden=cfg.gauge_hidden, mode=mode, param=cfg.gauge_param,
                    drop_axis=cfg.drop_axis,
                )
            else:
                self.gauge = OrthogonalGauge(cfg.drop_axis)
            self.color_field = ColorField(2, rng, hidden=cfg.field_hidden)
        elif self.kind in ("discrete", "hash"):
            scale = cfg.codebook_scale or 1.0 / cfg.codebook_entries
            self.codebook = Codebook(
                cfg.codebook_layers, cfg.codebook_entries, cfg.codebook_dim, rng, scale=scale
            )
            if self.kind == "discrete":
                self.gauge = DiscreteGauge(
                    rng, cfg.grid_resolutions, cfg.codebook_entries, cfg.k,
                    param=cfg.gauge_param if cfg.gauge_param in ("tensor", "mlp") else "tensor",
                    hidden=cfg.gauge_hidden, logit_scale=cfg.logit_scale,
                )
            else:
                self.gauge = HashGauge(cfg.grid_resolutions, cfg.codebook_entries)
            self.head = MlpField(cfg.codebook_layers * cfg.codebook_dim, rng, hidden=cfg.head_hidden)
        else:
            self.encoder = InfoInvEncoder(
                3, default_frequencies(cfg.infoinv_frequencies), learnable=cfg.infoinv_learnable
            )
            r = cfg.feature_resolution
            self.features = FeatureGrid((r, r, r), self.encoder.out_dim, rng, scale=0.1)
            self.head = MlpField(self.encoder.out_dim, rng, hidden=cfg.head_hidden)

        aux_rng = np.random.default_rng([seed, 13])
        if cfg.regularizer == "inforeg":
            y_dim = 2 if self.kind == "continuous" else cfg.codebook_layers * cfg.codebook_dim
            self.critic = CriticNetwork(3, y_dim, aux_rng)
        elif cfg.regularizer == "cycle":
            self.inverse = InverseGauge(aux_rng)

    # -- parameter groups -------------------------------------------------

    def table_parameters(self) -> list[Tensor]:
        """Directly optimized tensors (grids, codebooks, logit tables)."""
        out = []
        for name in ("density_grid", "features"):
            if hasattr(self, name):
                out.append(getattr(self, name).values)
        if hasattr(self, "codebook"):
            out.extend(self.codebook.tables)
        g = getattr(self, "gauge", None)
        if isinstance(g, DiscreteGauge) and g.param == "tensor":
            out.extend(g.logits)
        if isinstance(g, ContinuousGauge) and g.param == "grid":
            out.append(g.net.values)
        return out

    def gauge_parameters(self) -> list[Tensor]:
        g = getattr(self, "gauge", None)
        return g.parameters() if isinstance(g, Module) else []

    def critic_parameters(self) -> list[Tensor]:
        return self.critic.parameters() if hasattr(self, "critic") else []

    def field_parameters(self) -> list[Tensor]:
        skip = {id(p) for p in self.critic_parameters()}
        return [p for p in self.parameters() if id(p) not in skip]

    # -- forward ----------------------------------------------------------

    def query(self, u: np.ndarray) -> FieldOutput:
        """Density and color at unit-cube points ``u`` (P, 3)."""
        if self.kind in ("continuous", "orthogonal"):
            sigma = dc.softplus(self.density_grid(u)).reshape(-1)
            y = self.gauge(u) if self.kind == "continuous" else dc.as_tensor(self.gauge(u))
            rgb = dc.sigmoid(self.color_field.color_head(self.color_field.features(y)))
            return FieldOutput(sigma, rgb, gauge_out=y)
        if self.kind in ("discrete", "hash"):
            if self.kind == "discrete":
                out = discrete_forward(self.gauge, self.codebook, u)
                feats = out.features
            else:
                out, feats = None, hash_forward(self.gauge, self.codebook, u)
            sigma, rgb = self.head(feats)
            return FieldOutput(sigma, rgb, discrete=out, features=feats)
        amp = self.features(u)
        feats = self.encoder(u, amp) if self.kind == "infoinv" else amp
        sigma, rgb = self.head(feats)
        return FieldOutput(sigma, rgb, features=feats)

    def render(
        self,
        rays: Rays,
        samples: int,
        rng: np.random.Generator | None = None,
        background=(0.0, 0.0, 0.0),
    ) -> RenderOutput:
        clipped, hit = intersect_box(rays)
        t, delta = stratified_sample(clipped.near, clipped.far, samples, rng=rng, jitter=rng is not None)
        pts = np.clip(sample_points(clipped, t) + 0.5, 0.0, 1.0).reshape(-1, 3)
        out = self.query(pts)
        R = len(rays)
        sigma = out.sigma.reshape(R, samples) * hit[:, None].astype(np.float64)
        comp = composite(sigma, out.rgb.reshape(R, samples, 3), delta, background)
        return RenderOutput(comp, pts, out, hit)


def render_image_batches(model: GaugeFieldModel, rays: Rays, samples: int, background, chunk: int = 4096):
    """Render rays without recording gradients, in chunks."""
    colors, weights = [], []
    with dc.no_grad():
        for s in range(0, len(rays), chunk):
            ro = model.render(rays.subset(slice(s, s + chunk)), samples, None, background)
            colors.append(ro.comp.color.data)
            weights.append(ro.comp.weights.data)
    return np.concatenate(colors), np.concatenate(weights)
