"""Desk-scale experiment matrices.

Each preset expands to a list of labelled :class:`TrainConfig` rows.  The base
settings keep a single run to well under a minute on one CPU core.
"""

from __future__ import annotations

from dataclasses import dataclass

from .train.config import TrainConfig

DESK = dict(
    image_size=16,
    steps=500,
    log_every=50,
    field_hidden=(64, 64),
    lr=2e-3,
    gauge_lr=7e-4,
)
CONTINUOUS_INFOREG = dict(regularizer="inforeg", gamma=1.0, epsilon=3.0)
DISCRETE = dict(gauge="discrete", gauge_param="mlp", gauge_lr=2e-3)
DISCRETE_INFOREG = dict(regularizer="inforeg", gamma=1.0, epsilon=1.0)
INFOINV_TARGET_PSNR = 20.0


@dataclass(frozen=True)
class Row:
    label: str
    config: TrainConfig


def desk_config(seed: int = 0, **changes) -> TrainConfig:
    return TrainConfig(**{**DESK, "seed": seed, **changes})


def _collapse_continuous(seed):
    return [
        Row("none", desk_config(seed)),
        Row("inforeg", desk_config(seed, **CONTINUOUS_INFOREG)),
    ]


def _collapse_discrete(seed):
    return [
        Row("none", desk_config(seed, **DISCRETE)),
        Row("inforeg", desk_config(seed, **DISCRETE, **DISCRETE_INFOREG)),
    ]


def _reg_compare(seed):
    return [
        Row("none", desk_config(seed)),
        Row("structural", desk_config(seed, regularizer="structural")),
        Row("cycle", desk_config(seed, regularizer="cycle")),
        Row("inforeg", desk_config(seed, **CONTINUOUS_INFOREG)),
    ]


def _predefined_vs_learned(seed):
    return [
        Row("orthogonal", desk_config(seed, gauge="orthogonal")),
        Row("learned-continuous", desk_config(seed, **CONTINUOUS_INFOREG)),
        Row("hash", desk_config(seed, gauge="hash")),
        Row("learned-discrete", desk_config(seed, **DISCRETE, **DISCRETE_INFOREG)),
    ]


def _topk_sweep(seed):
    return [Row(f"k={k}", desk_config(seed, **DISCRETE, k=k)) for k in (1, 2, 4, 8)]


def _weight_sweep(seed):
    rows = []
    for gamma, epsilon in ((0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (1.0, 1.0), (1.0, 3.0), (3.0, 3.0)):
        cfg = desk_config(seed, regularizer="inforeg", gamma=gamma, epsilon=epsilon)
        rows.append(Row(f"gamma={gamma:g} epsilon={epsilon:g}", cfg))
    return rows


def _infoinv_gain(seed):
    return [
        Row("grid", desk_config(seed, gauge="grid", eval_every=25)),
        Row("grid+infoinv", desk_config(seed, gauge="infoinv", eval_every=25)),
    ]


PRESETS = {
    "collapse-continuous": _collapse_continuous,
    "collapse-discrete": _collapse_discrete,
    "reg-compare": _reg_compare,
    "predefined-vs-learned": _predefined_vs_learned,
    "topk-sweep": _topk_sweep,
    "weight-sweep": _weight_sweep,
    "infoinv-gain": _infoinv_gain,
}


def preset_rows(name: str, seed: int = 0, overrides=()) -> list[Row]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return [Row(r.label, r.config.with_overrides(overrides)) for r in PRESETS[name](seed)]
