"""Pinhole rays, stratified sampling, emission-absorption compositing and PSNR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


@dataclass
class Camera:
    """Pinhole camera; ``c2w`` is camera-to-world with OpenGL axes (looks down -z, y up)."""

    c2w: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if self.c2w.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"pose must be 3x4 or 4x4, got {self.c2w.shape}")
        R = self.c2w[:3, :3]
        if not np.all(np.isfinite(self.c2w)) or not np.allclose(R.T @ R, np.eye(3), atol=1e-6) \
                or np.linalg.det(R) <= 0:
            raise ValueError("degenerate camera pose: rotation is not a proper orthonormal matrix")

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]


@dataclass
class Rays:
    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3), unit length
    near: np.ndarray  # (R,)
    far: np.ndarray  # (R,)

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, idx) -> Rays:
        return Rays(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx])


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Integer (col, row) coordinates of every pixel, row-major."""
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([cols.reshape(-1), rows.reshape(-1)], axis=-1)


def make_rays(camera: Camera, pixels=None, near: float = 0.0, far: float = 1.0) -> Rays:
    """World-space rays through the centers of ``pixels`` (col, row); all pixels by default.

    Fractional coordinates are allowed: the ray passes through ``(col + 0.5, row + 0.5)``.
    """
    if pixels is None:
        pixels = pixel_grid(camera.width, camera.height)
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x = (px[:, 0] + 0.5 - 0.5 * camera.width) / camera.focal
    y = -(px[:, 1] + 0.5 - 0.5 * camera.height) / camera.focal
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d = d_cam @ camera.c2w[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.origin, d.shape).copy()
    n = len(d)
    return Rays(o, d, np.full(n, float(near)), np.full(n, float(far)))


def intersect_box(rays: Rays, lo: float = -0.5, hi: float = 0.5) -> tuple[Rays, np.ndarray]:
    """Clip each ray's [near, far] to an axis-aligned cube; returns (rays, hit mask).

    Rays that miss keep a short dummy interval at their original near bound.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rays.directions
        t0 = (lo - rays.origins) * inv
        t1 = (hi - rays.origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    near = np.maximum(tmin, rays.near)
    far = np.minimum(tmax, rays.far)
    hit = far > near + 1e-9
    near = np.where(hit, near, rays.near)
    far = np.where(hit, far, rays.near + 1e-3)
    return Rays(rays.origins, rays.directions, near, far), hit


def stratified_sample(
    near,
    far,
    n: int,
    rng: np.random.Generator | None = None,
    jitter: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Depths ``t`` (R, n), one per equal sub-interval of [near, far], and interval lengths.

    ``delta[i]`` is the length of the stretch of the ray owned by sample ``i``:
    boundaries sit halfway between neighbouring samples and at near/far, so the
    lengths add up to ``far - near``.
    """
    if n < 1:
        raise ValueError("stratified_sample needs at least one sample")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if np.any(far <= near):
        raise ValueError("stratified_sample needs far > near")
    span = (far - near)[:, None]
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        u = rng.random((len(near), n))
    else:
        u = np.full((len(near), n), 0.5)
    t = near[:, None] + span * (np.arange(n)[None] + u) / n
    bounds = np.concatenate([near[:, None], 0.5 * (t[:, 1:] + t[:, :-1]), far[:, None]], axis=1)
    return t, np.diff(bounds, axis=1)


def sample_points(rays: Rays, t: np.ndarray) -> np.ndarray:
    return rays.origins[:, None, :] + rays.directions[:, None, :] * t[..., None]


@dataclass
class Composite:
    color: Tensor  # (R, 3)
    weights: Tensor  # (R, S)
    transmittance: Tensor  # (R, S), T_i before each sample
    final_transmittance: Tensor  # (R,)


def composite(sigma, color, delta, background=None) -> Composite:
    """Alpha-composite densities ``sigma`` (R, S) and radiances ``color`` (R, S, 3).

    ``T_i = exp(-sum_{j<i} sigma_j delta_j)``, ``w_i = T_i (1 - exp(-sigma_i delta_i))``,
    ``I = sum_i w_i c_i`` plus ``(1 - sum_i w_i) * background`` when given.
    """
    sigma = dc.as_tensor(sigma)
    color = dc.as_tensor(color)
    delta = np.asarray(delta, dtype=np.float64)
    if sigma.ndim == 1:
        return _composite_single(sigma, color, delta, background)
    if sigma.shape != delta.shape or color.shape != sigma.shape + (3,):
        raise ValueError(
            f"composite: sigma {sigma.shape}, color {color.shape}, delta {delta.shape} disagree"
        )
    if np.any(sigma.data < 0):
        raise ValueError("composite: negative density")
    if np.any(delta <= 0):
        raise ValueError("composite: interval lengths must be positive")
    tau = sigma * delta
    acc = dc.cumsum(tau, axis=1)
    # shift rather than acc - tau, which can round below the previous sum
    before = dc.concat([dc.as_tensor(np.zeros((tau.shape[0], 1))), acc[:, :-1]], axis=1)
    trans = dc.exp(-before)
    alpha = 1.0 - dc.exp(-tau)
    w = trans * alpha
    rgb = (w.reshape(*w.shape, 1) * color).sum(axis=1)
    final = dc.exp(-acc[:, -1])
    if background is not None:
        bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
        rgb = rgb + (1.0 - w.sum(axis=1)).reshape(-1, 1) * bg
    return Composite(rgb, w, trans, final)


def _composite_single(sigma, color, delta, background):
    out = composite(
        sigma.reshape(1, -1), color.reshape(1, -1, 3), np.asarray(delta).reshape(1, -1), background
    )
    return Composite(
        out.color.reshape(3), out.weights.reshape(-1), out.transmittance.reshape(-1),
        out.final_transmittance.reshape(()),
    )


def psnr(image, reference) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 100 dB."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    return float(-10.0 * np.log10(max(mse, 1e-10)))
