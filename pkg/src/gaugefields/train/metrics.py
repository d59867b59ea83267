"""Gauge space-occupancy metrics and the CSV metric log."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import diffcore as dc
from ..gauge import DiscreteGauge

SIGNIFICANT_WEIGHT = 0.01
LOG_COLUMNS = ("step", "loss", "psnr", "occupancy", "utilization")


def occupancy_cells(g: Callable, surface_points, weights, G: int = 64, threshold: float = SIGNIFICANT_WEIGHT):
    """Flat ids of the G x G cells hit by radiance-significant points mapped through ``g``."""
    pts = np.asarray(surface_points, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(pts):
        raise ValueError(f"{len(pts)} points but {len(w)} weights")
    keep = w >= threshold
    if not keep.any():
        raise ValueError(f"no surface point has radiance weight >= {threshold}")
    with dc.no_grad():
        y = np.asarray(dc.as_tensor(g(pts[keep])).data)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError(f"occupancy needs a 2-D target gauge, got outputs of shape {y.shape}")
    cells = np.clip(np.floor(y * G).astype(np.int64), 0, G - 1)
    return np.unique(cells[:, 0] * G + cells[:, 1]), y


def occupancy_metric(g: Callable, surface_points, weights, G: int = 64) -> float:
    """Fraction of a G x G partition of the unit square reached by significant points."""
    cells, _ = occupancy_cells(g, surface_points, weights, G)
    return len(cells) / float(G * G)


def selection_counts(g: DiscreteGauge, level: int) -> np.ndarray:
    """How many grid vertices pick each codebook entry as their argmax."""
    logits = g.all_logits(level)
    if not np.isfinite(logits).all():
        raise ValueError("utilization needs finite logits")
    return np.bincount(np.argmax(logits, axis=1), minlength=g.entries)


def utilization_metric(g: DiscreteGauge) -> float:
    """Fraction of codebook entries that are some grid vertex's argmax, averaged over levels."""
    ratios = [np.count_nonzero(selection_counts(g, lvl)) / g.entries for lvl in range(g.levels)]
    return float(np.mean(ratios))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass
class MetricLog:
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, step: int, loss: float, psnr=None, occupancy=None, utilization=None) -> None:
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError(f"metric log steps must increase: {step} after {self.rows[-1]['step']}")
        row = dict(step=int(step), loss=loss, psnr=psnr, occupancy=occupancy, utilization=utilization)
        for key in LOG_COLUMNS[1:]:
            v = row[key]
            if v is not None and not math.isfinite(v):
                raise ValueError(f"non-finite {key} at step {step}")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def read(cls, path) -> MetricLog:
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
                raise ValueError(f"{path}: unexpected metric log header {reader.fieldnames}")
            for rec in reader:
                vals = {k: (float(rec[k]) if rec[k] != "" else None) for k in LOG_COLUMNS[1:]}
                log.append(int(rec["step"]), **vals)
        return log
