"""Experiment configuration: a flat dataclass with JSON I/O and dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

GAUGE_KINDS = ("continuous", "discrete", "infoinv", "grid", "orthogonal", "hash")
REGULARIZERS = ("none", "inforeg", "cycle", "structural")


@dataclass
class TrainConfig:
    # scene and cameras
    scene: str = "blobs"
    scene_seed: int = 0
    image_size: int = 64
    train_views: int = 8
    test_views: int = 4
    orbit_radius: float = 1.6
    elevation: float = 20.0
    fov: float = 40.0
    gt_samples: int = 96
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    # model
    gauge: str = "continuous"
    gauge_param: str = "mlp"  # continuous: mlp | grid; discrete: tensor | mlp
    gauge_hidden: tuple[int, ...] = (64, 64)
    field_hidden: tuple[int, ...] = (128, 128, 128, 128)
    head_hidden: tuple[int, ...] = (64, 64)
    density_resolution: int = 32
    k: int = 1
    codebook_layers: int = 2
    codebook_entries: int = 64
    codebook_dim: int = 16
    codebook_scale: float = 0.0  # 0 -> 1 / entries
    logit_scale: float = 1e-2
    grid_resolutions: tuple[int, ...] = (16, 32)
    feature_resolution: int = 16
    infoinv_frequencies: int = 6
    infoinv_learnable: bool = False
    drop_axis: int = 2

    # regularization
    regularizer: str = "none"
    gamma: float = 1.0
    epsilon: float = 0.1
    prior_samples: int = 64
    mi_samples: int = 256
    critic_updates: int = 1
    lattice_jitter: bool = True
    reg_start: int = 0
    reg_stop: int = -1  # -1: until the end

    # optimization
    steps: int = 1000
    rays_per_batch: int = 256
    samples: int = 32
    lr: float = 5e-4
    grid_lr: float = 0.02
    gauge_lr: float = 0.0  # 0: same as lr
    critic_lr: float = 1e-3
    cosine_decay: bool = False
    seed: int = 0

    # logging
    log_every: int = 50
    eval_every: int = 0  # 0: no held-out curve
    occupancy_grid: int = 64
    metric_image_size: int = 32  # renders used for end-of-run occupancy

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.gauge not in GAUGE_KINDS:
            raise ValueError(f"unknown gauge kind {self.gauge!r}; expected one of {GAUGE_KINDS}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}; expected one of {REGULARIZERS}")
        if self.regularizer in ("cycle", "structural") and self.gauge != "continuous":
            raise ValueError(f"{self.regularizer} regularization needs a continuous gauge")
        if self.regularizer == "inforeg" and self.gauge not in ("continuous", "discrete"):
            raise ValueError("InfoReg needs a learned (continuous or discrete) gauge")
        if not 1 <= self.k <= self.codebook_entries:
            raise ValueError(f"k={self.k} outside [1, {self.codebook_entries}]")
        if self.gamma < 0 or self.epsilon < 0:
            raise ValueError("gamma and epsilon must be non-negative")
        if self.steps < 0 or self.rays_per_batch < 1 or self.samples < 1:
            raise ValueError("steps must be >= 0, rays_per_batch and samples >= 1")
        if self.codebook_layers != len(self.grid_resolutions):
            raise ValueError("codebook_layers must equal the number of grid resolutions")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if isinstance(getattr(cls, key, None), tuple) or isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> TrainConfig:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides) -> TrainConfig:
        """Apply ``key=value`` strings; values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key not in data:
                raise ValueError(f"unknown config key {key!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            data[key] = value
        return TrainConfig.from_dict(data)

