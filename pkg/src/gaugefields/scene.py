"""Procedural scenes, orbit camera rigs and Synthetic-NeRF style dataset I/O.

World space is centred on the origin; scenes live in the cube [-0.5, 0.5]^3
and their density/color functions take unit-cube coordinates ``u = x + 0.5``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .render import Camera, composite, intersect_box, make_rays, sample_points, stratified_sample

SCENE_KINDS = ("sphere", "box", "blobs")
SIGMA_MAX = 40.0
EDGE = 0.02


def _ramp(signed_depth: np.ndarray) -> np.ndarray:
    # 0 outside, 1 deeper than EDGE/2 inside, linear across the shell
    return np.clip(signed_depth / EDGE + 0.5, 0.0, 1.0)


@dataclass
class VoxelScene:
    kind: str
    seed: int
    palette: np.ndarray = field(repr=False)

    def density(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "sphere":
            depth = 0.3 - np.linalg.norm(u - 0.5, axis=-1)
        elif self.kind == "box":
            depth = np.min(0.25 - np.abs(u - 0.5), axis=-1)
        else:
            d1 = 0.2 - np.linalg.norm(u - _BLOB_CENTERS[0], axis=-1)
            d2 = 0.2 - np.linalg.norm(u - _BLOB_CENTERS[1], axis=-1)
            depth = np.maximum(d1, d2)
        return SIGMA_MAX * _ramp(depth)

    def color(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        p = self.palette
        if self.kind == "sphere":
            # 4 cells per axis: point reflection through the centre flips the parity
            cells = np.floor(np.clip(u, 0.0, 1.0 - 1e-12) * 4).astype(np.int64).sum(-1) % 2
            return np.where(cells[..., None] == 1, p[0], p[1])
        if self.kind == "box":
            t = np.clip(u, 0.0, 1.0)
            return np.clip(p[0] * t[..., :1] + p[1] * (1.0 - t[..., 1:2]) * 0.8 + 0.1, 0.0, 1.0)
        d1 = np.linalg.norm(u - _BLOB_CENTERS[0], axis=-1)
        d2 = np.linalg.norm(u - _BLOB_CENTERS[1], axis=-1)
        t = np.clip(u, 0.0, 1.0)
        first = p[0] * (0.35 + 0.65 * t[..., 1:2]) + p[2] * 0.3 * t[..., :1]
        second = p[1] * (0.35 + 0.65 * t[..., :1]) + p[2] * 0.3 * (1.0 - t[..., 1:2])
        return np.clip(np.where((d1 <= d2)[..., None], first, second), 0.0, 1.0)

    def query(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.density(u), self.color(u)


_BLOB_CENTERS = (np.array([0.5, 0.5, 0.27]), np.array([0.5, 0.5, 0.73]))


def make_toy_scene(kind: str = "blobs", seed: int = 0) -> VoxelScene:
    """Analytic scene: ``sphere`` (checkered), ``box`` (gradient) or ``blobs``.

    ``blobs`` stacks two differently coloured blobs along z, so a projection
    that drops z maps both onto the same disk.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    rng = np.random.default_rng(seed)
    base = np.array([[0.9, 0.25, 0.15], [0.15, 0.35, 0.9], [0.2, 0.8, 0.3]])
    palette = np.clip(base + rng.uniform(-0.08, 0.08, size=base.shape), 0.0, 1.0)
    return VoxelScene(kind, seed, palette)


@dataclass
class CameraRig:
    poses: list[np.ndarray]  # camera-to-world 4x4
    focal: float
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.poses)

    def camera(self, i: int) -> Camera:
        return Camera(self.poses[i], self.focal, self.width, self.height)

    def cameras(self) -> list[Camera]:
        return [self.camera(i) for i in range(len(self))]

    def subset(self, idx) -> CameraRig:
        return CameraRig([self.poses[i] for i in idx], self.focal, self.width, self.height)

    def resized(self, width: int, height: int) -> CameraRig:
        return CameraRig(self.poses, self.focal * width / self.width, width, height)


def look_at(position: np.ndarray, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        raise ValueError("look_at: up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, true_up, -forward, position
    return pose


def orbit_cameras(
    n: int,
    radius: float = 1.6,
    elevation: float = 20.0,
    width: int = 64,
    height: int = 64,
    fov: float = 40.0,
    azimuth_offset: float = 0.0,
) -> CameraRig:
    """``n`` cameras at equal azimuths (degrees from +z towards +x), all facing the origin."""
    if n < 1:
        raise ValueError("orbit needs at least one camera")
    if radius <= 0:
        raise ValueError("orbit radius must be positive")
    el = np.deg2rad(elevation)
    poses = []
    for i in range(n):
        az = np.deg2rad(azimuth_offset + 360.0 * i / n)
        pos = radius * np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        poses.append(look_at(pos))
    focal = 0.5 * width / np.tan(0.5 * np.deg2rad(fov))
    return CameraRig(poses, focal, width, height)


def render_scene_rays(scene: VoxelScene, rays, samples: int = 64, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    clipped, hit = intersect_box(rays)
    t, delta = stratified_sample(clipped.near, clipped.far, samples, jitter=False)
    u = np.clip(sample_points(clipped, t) + 0.5, 0.0, 1.0)
    sigma, rgb = scene.query(u)
    sigma = sigma * hit[:, None]
    return composite(sigma, rgb, delta, background).color.data


def render_ground_truth(
    scene: VoxelScene,
    rig: CameraRig,
    samples: int = 64,
    background=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Images (V, H, W, 3) rendered with the same compositing model used in training."""
    images = []
    for cam in rig.cameras():
        rgb = render_scene_rays(scene, make_rays(cam, near=0.0, far=np.inf), samples, background)
        images.append(rgb.reshape(rig.height, rig.width, 3))
    return np.stack(images)


# ---------------------------------------------------------------------------
# image + manifest I/O


def write_ppm(path, image: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img[..., :3].tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1: pos + 1 + w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise ValueError(f"{path}: truncated PPM")
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            return read_ppm(path)
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc


def _resolve_frame(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix:
        return p
    for ext in (".ppm", ".png"):
        if p.with_suffix(ext).exists():
            return p.with_suffix(ext)
    return p.with_suffix(".png")


def load_nerf_dataset(path, manifest: str = "transforms.json") -> tuple[CameraRig, np.ndarray]:
    """Read a camera-transforms manifest and its images (focal from ``camera_angle_x``)."""
    root = Path(path)
    mpath = root / manifest
    if not mpath.is_file():
        raise FileNotFoundError(f"missing camera manifest: {mpath}")
    try:
        meta = json.loads(mpath.read_text())
        angle = float(meta["camera_angle_x"])
        frames = meta["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed manifest {mpath}: {exc}") from exc
    if not frames:
        raise ValueError(f"manifest {mpath} lists no frames")
    poses, images = [], []
    for fr in frames:
        img = read_image(_resolve_frame(root, fr["file_path"]))
        poses.append(np.asarray(fr["transform_matrix"], dtype=np.float64).reshape(4, 4))
        images.append(img)
    h, w = images[0].shape[:2]
    if any(im.shape[:2] != (h, w) for im in images):
        raise ValueError(f"images under {root} differ in size")
    focal = 0.5 * w / np.tan(0.5 * angle)
    return CameraRig(poses, focal, w, h), np.stack(images)


def write_nerf_dataset(path, rig: CameraRig, images: np.ndarray, manifest: str = "transforms.json") -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (pose, img) in enumerate(zip(rig.poses, images)):
        name = f"r_{i:03d}.ppm"
        write_ppm(root / name, img)
        frames.append({"file_path": f"./{name}", "transform_matrix": np.asarray(pose).tolist()})
    angle = 2.0 * np.arctan(0.5 * rig.width / rig.focal)
    out = root / manifest
    out.write_text(json.dumps({"camera_angle_x": angle, "frames": frames}, indent=1))
    return out
