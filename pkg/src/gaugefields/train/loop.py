"""The optimization loop, held-out evaluation and end-of-run gauge metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .. import diffcore as dc
from ..render import Rays, make_rays, psnr
from ..regularize import (
    cycle_loss,
    emd_exact,
    inforeg_loss,
    js_mi_bound,
    lattice_targets,
    prior_discrete,
    radiance_weighted_indices,
    structural_loss,
)
from ..scene import CameraRig, VoxelScene, make_toy_scene, orbit_cameras, render_ground_truth
from .checkpoint import Checkpoint
from .config import TrainConfig
from .metrics import MetricLog, occupancy_metric, utilization_metric
from .model import GaugeFieldModel, render_image_batches
from .optim import Adam


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss is {loss}")
        self.step = step


@dataclass
class Dataset:
    train_rig: CameraRig
    train_images: np.ndarray  # (V, H, W, 3)
    test_rig: CameraRig
    test_images: np.ndarray
    scene: VoxelScene | None = None

    def rays(self, split: str = "train") -> tuple[Rays, np.ndarray]:
        rig, images = (self.train_rig, self.train_images) if split == "train" else (self.test_rig, self.test_images)
        return rig_rays(rig), images.reshape(-1, 3)


def rig_rays(rig: CameraRig) -> Rays:
    parts = [make_rays(cam, near=0.0, far=np.inf) for cam in rig.cameras()]
    return Rays(*(np.concatenate([getattr(r, f) for r in parts]) for f in ("origins", "directions", "near", "far")))


@lru_cache(maxsize=16)
def _toy_dataset(scene_kind, scene_seed, size, n_train, n_test, radius, elevation, fov, gt_samples, background):
    scene = make_toy_scene(scene_kind, scene_seed)
    train_rig = orbit_cameras(n_train, radius, elevation, size, size, fov)
    # held-out views sit between the training azimuths, mirrored in elevation
    test_rig = orbit_cameras(n_test, radius, -elevation, size, size, fov, azimuth_offset=180.0 / n_train)
    train = render_ground_truth(scene, train_rig, gt_samples, background)
    test = render_ground_truth(scene, test_rig, gt_samples, background)
    train.setflags(write=False)
    test.setflags(write=False)
    return Dataset(train_rig, train, test_rig, test, scene)


def build_dataset(cfg: TrainConfig) -> Dataset:
    """Ground-truth orbit renders of the configured toy scene (cached per scene setup)."""
    return _toy_dataset(
        cfg.scene, cfg.scene_seed, cfg.image_size, cfg.train_views, cfg.test_views,
        cfg.orbit_radius, cfg.elevation, cfg.fov, cfg.gt_samples, tuple(cfg.background),
    )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: MetricLog
    model: GaugeFieldModel
    data: Dataset
    curve: list[tuple[int, float]] = field(default_factory=list)  # (step, held-out PSNR)
    losses: list[float] = field(default_factory=list)
    rejected_steps: int = 0

    def __iter__(self):
        return iter((self.checkpoint, self.log))


def _reg_active(cfg: TrainConfig, step: int) -> bool:
    if cfg.regularizer == "none" or step < cfg.reg_start:
        return False
    return cfg.reg_stop < 0 or step < cfg.reg_stop


def _radiance_draw(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if weights.sum() <= 0:
        return rng.integers(0, len(weights), size=n)
    return radiance_weighted_indices(weights, n, rng)


def _inforeg_terms(model: GaugeFieldModel, ro, cfg: TrainConfig, rng: np.random.Generator):
    """(MI bound, prior, detached positive x, detached positive y) for one batch."""
    w = ro.comp.weights.data.reshape(-1)
    y_all = ro.field.gauge_out if model.kind == "continuous" else ro.field.features
    idx = _radiance_draw(w, cfg.mi_samples, rng)
    x_pos = ro.points[idx]
    y_pos = dc.gather(y_all, idx)
    perm = rng.permutation(len(idx))
    mi = js_mi_bound((x_pos, y_pos), (x_pos, y_pos[perm]), model.critic)
    if model.kind == "continuous":
        jdx = _radiance_draw(w, cfg.prior_samples, rng)
        targets = lattice_targets(cfg.prior_samples, rng, cfg.lattice_jitter)
        prior = emd_exact(dc.gather(y_all, jdx), targets).cost
    else:
        terms = [prior_discrete(p) for p in ro.field.discrete.probabilities]
        prior = terms[0]
        for t in terms[1:]:
            prior = prior + t
        prior = prior * (1.0 / len(terms))
    return mi, prior, x_pos, y_pos.data[perm], y_pos.data


def _lr_scale(cfg: TrainConfig, step: int) -> float:
    if not cfg.cosine_decay or cfg.steps == 0:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))


def train(cfg: TrainConfig, data: Dataset | None = None, model: GaugeFieldModel | None = None) -> TrainResult:
    """Fit a gauge + field to the training views; returns checkpoint and metric log.

    The loss is the batch mean squared color error plus the configured
    regularizer.  Rays and regularizer samples come from separate seeded
    streams, so a zero-weight regularizer leaves the color path untouched.
    """
    cfg.validate()
    data = data or build_dataset(cfg)
    model = model or GaugeFieldModel(cfg)
    rays, colors = data.rays("train")
    rng_rays = np.random.default_rng([cfg.seed, 0])
    rng_reg = np.random.default_rng([cfg.seed, 1])

    params = model.field_parameters()
    tables = {id(p) for p in model.table_parameters()}
    gauge_ids = {id(p) for p in model.gauge_parameters()}
    gauge_lr = cfg.gauge_lr or cfg.lr
    base_lr = [
        cfg.grid_lr if id(p) in tables else gauge_lr if id(p) in gauge_ids else cfg.lr for p in params
    ]
    opt = Adam(params, list(base_lr))
    critic_params = model.critic_parameters()
    critic_opt = Adam(critic_params, cfg.critic_lr) if critic_params else None

    log = MetricLog()
    result = TrainResult(Checkpoint.from_model(model, 0, cfg), log, model, data)
    bg = tuple(cfg.background)
    for step in range(1, cfg.steps + 1):
        idx = rng_rays.choice(len(rays), size=min(cfg.rays_per_batch, len(rays)), replace=False)
        ro = model.render(rays.subset(idx), cfg.samples, rng_rays, bg)
        target = colors[idx]
        color_loss = ((ro.comp.color - target) ** 2).mean()
        loss = color_loss
        critic_batch = None
        if _reg_active(cfg, step - 1):
            if cfg.regularizer == "inforeg":
                mi, prior, x_pos, y_neg, y_pos = _inforeg_terms(model, ro, cfg, rng_reg)
                loss = loss + inforeg_loss(mi, prior, cfg.gamma, cfg.epsilon)
                critic_batch = (x_pos, y_pos, y_neg)
            else:
                sample = ro.points[_radiance_draw(ro.comp.weights.data.reshape(-1), cfg.prior_samples, rng_reg)]
                if cfg.regularizer == "cycle":
                    reg = cycle_loss(sample, model.gauge, model.inverse)
                else:
                    reg = structural_loss(model.gauge, sample)
                loss = loss + cfg.gamma * reg

        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        result.losses.append(value)
        grads = dc.grad(loss, params)
        scale = _lr_scale(cfg, step - 1)
        opt.lr = [lr * scale for lr in base_lr]
        opt.step(grads)

        if critic_batch is not None:
            x_pos, y_pos, y_neg = critic_batch
            for _ in range(1 + cfg.critic_updates):
                bound = js_mi_bound((x_pos, y_pos), (x_pos, y_neg), model.critic)
                critic_opt.step(dc.grad(-bound, critic_params))

        if step % cfg.log_every == 0 or step == cfg.steps:
            occ = util = None
            w = ro.comp.weights.data.reshape(-1)
            if model.kind == "continuous" and (w >= 0.01).any():
                occ = occupancy_metric(model.gauge, ro.points, w, cfg.occupancy_grid)
            elif model.kind == "discrete":
                util = utilization_metric(model.gauge)
            log.append(step, value, psnr(ro.comp.color.data, target), occ, util)
        if cfg.eval_every and step % cfg.eval_every == 0:
            result.curve.append((step, evaluate(model, data.test_rig, data.test_images, cfg.samples, bg).mean))

    result.rejected_steps = opt.state.rejected
    result.checkpoint = Checkpoint.from_model(model, cfg.steps, cfg)
    return result


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    per_view: list[float]
    mean: float
    images: np.ndarray


def render_views(renderer, rig: CameraRig, samples: int = 32, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Render every camera of ``rig`` with a model, checkpoint or analytic scene."""
    if isinstance(renderer, VoxelScene):
        return render_ground_truth(renderer, rig, samples, background)
    if isinstance(renderer, Checkpoint):
        renderer = renderer.build_model()
    out = []
    for cam in rig.cameras():
        rgb, _ = render_image_batches(renderer, make_rays(cam, near=0.0, far=np.inf), samples, background)
        out.append(rgb.reshape(rig.height, rig.width, 3))
    return np.stack(out)


def evaluate(renderer, rig: CameraRig, images, samples: int = 32, background=(0.0, 0.0, 0.0)) -> EvalResult:
    """Per-view and mean PSNR of held-out renders against reference images."""
    images = np.asarray(images, dtype=np.float64)
    expected = (len(rig), rig.height, rig.width, 3)
    if images.shape != expected:
        raise ValueError(f"reference images have shape {images.shape}, rig renders {expected}")
    rendered = render_views(renderer, rig, samples, background)
    per_view = [psnr(a, b) for a, b in zip(rendered, images)]
    return EvalResult(per_view, float(np.mean(per_view)), rendered)


@dataclass
class SurfaceSamples:
    points: np.ndarray  # unit-cube sample positions
    weights: np.ndarray  # radiance contribution weights
    colors: np.ndarray  # predicted radiance at each sample


def surface_samples(model: GaugeFieldModel, rig: CameraRig, samples: int, background=(0.0, 0.0, 0.0)) -> SurfaceSamples:
    """Deterministic (unjittered) samples along every ray of ``rig`` with their weights."""
    rays = rig_rays(rig)
    pts, ws, cs = [], [], []
    with dc.no_grad():
        for s in range(0, len(rays), 2048):
            ro = model.render(rays.subset(slice(s, s + 2048)), samples, None, background)
            pts.append(ro.points)
            ws.append(ro.comp.weights.data.reshape(-1))
            cs.append(ro.field.rgb.data)
    return SurfaceSamples(np.concatenate(pts), np.concatenate(ws), np.concatenate(cs))


def gauge_metrics(model: GaugeFieldModel, data: Dataset, samples: int = 32) -> dict:
    """End-of-run occupancy (continuous kinds) or utilization (discrete)."""
    out = {}
    if model.kind == "discrete":
        out["utilization"] = utilization_metric(model.gauge)
    elif model.kind in ("continuous", "orthogonal"):
        size = model.cfg.metric_image_size or data.train_rig.width
        rig = data.train_rig.resized(size, size)
        s = surface_samples(model, rig, samples, tuple(model.cfg.background))
        out["occupancy"] = occupancy_metric(model.gauge, s.points, s.weights, model.cfg.occupancy_grid)
    return out
