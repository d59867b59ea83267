"""Command-line entry point: ``gaugefields {train,eval,viz-gauge,experiment}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .presets import INFOINV_TARGET_PSNR, PRESETS, preset_rows
from .scene import load_nerf_dataset, write_ppm
from .train import (
    Checkpoint,
    CheckpointError,
    GaugeFieldModel,
    TrainConfig,
    TrainingDiverged,
    build_dataset,
    evaluate,
    gauge_metrics,
    selection_counts,
    surface_samples,
    train,
)
from .train.metrics import SIGNIFICANT_WEIGHT, occupancy_cells

DEFAULT_OUT = "runs"
SPLAT_SIZE = 128


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("NGF_OUT_DIR") or DEFAULT_OUT)


def run_directory(root: Path, stem: str, digest: str, timestamp: bool) -> Path:
    name = f"{stem}-{digest}"
    if timestamp:
        name += time.strftime("-%Y%m%dT%H%M%S")
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table_csv(path: Path, columns: list[str], rows: list[dict]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    path.write_text(buf.getvalue())
    return path


def format_table(columns: list[str], rows: list[dict]) -> str:
    def show(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 10 else f"{v:.2f}"
        return str(v)

    cells = [[show(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def load_config(path: str | None, seed: int | None, overrides) -> TrainConfig:
    cfg = TrainConfig.load(path) if path else TrainConfig()
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg.with_overrides(overrides or ())


# ---------------------------------------------------------------------------
# single runs


def run_config(cfg: TrainConfig, run_dir: Path | None = None) -> dict:
    """Train one configuration and return its held-out metrics.

    When ``run_dir`` is given the checkpoint, metric CSV and held-out preview
    renders are written there.
    """
    result = train(cfg)
    data = result.data
    ev = evaluate(result.model, data.test_rig, data.test_images, cfg.samples, tuple(cfg.background))
    row = {"psnr": ev.mean, **gauge_metrics(result.model, data, cfg.samples)}
    if result.curve:
        hit = [step for step, value in result.curve if value >= INFOINV_TARGET_PSNR]
        row[f"steps_to_{INFOINV_TARGET_PSNR:g}db"] = hit[0] if hit else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(cfg.to_json() + "\n")
        result.checkpoint.save(run_dir / "checkpoint.ngf")
        result.log.write(run_dir / "metrics.csv")
        if result.curve:
            write_table_csv(
                run_dir / "heldout_curve.csv", ["step", "psnr"],
                [{"step": s, "psnr": v} for s, v in result.curve],
            )
        for i, img in enumerate(ev.images):
            write_ppm(run_dir / f"preview_{i:02d}.ppm", img)
    return row


def _run_row(job):
    cfg, run_dir = job
    return run_config(cfg, run_dir)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed, args.override)
    run_dir = run_directory(output_root(args.out), "train", cfg.hash(), args.timestamp)
    if cfg.steps == 0:
        Checkpoint.from_model(GaugeFieldModel(cfg), 0, cfg).save(run_dir / "checkpoint.ngf")
        print(f"wrote initial checkpoint to {run_dir / 'checkpoint.ngf'}")
        return 0
    row = run_config(cfg, run_dir)
    print(format_table(list(row), [row]))
    print(f"artifacts in {run_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = ckpt.config
    if cfg is None:
        raise CliError(f"{args.checkpoint}: checkpoint carries no config")
    bg = tuple(cfg.background)
    if args.dataset:
        rig, images = load_nerf_dataset(args.dataset)
        samples = cfg.samples
    else:
        data = build_dataset(cfg)
        rig, images = data.test_rig, data.test_images
        samples = cfg.samples
    if args.ground_truth:
        if args.dataset:
            raise CliError("--ground-truth needs the procedural scene; drop --dataset")
        renderer, samples = data.scene, cfg.gt_samples
    else:
        renderer = ckpt.build_model()
    ev = evaluate(renderer, rig, images, samples, bg)
    rows = [{"view": i, "psnr": v} for i, v in enumerate(ev.per_view)]
    rows.append({"view": "mean", "psnr": ev.mean})
    run_dir = run_directory(output_root(args.out), "eval", ckpt.config_hash or cfg.hash(), args.timestamp)
    write_table_csv(run_dir / "eval.csv", ["view", "psnr"], rows)
    print(format_table(["view", "psnr"], rows))
    print(f"wrote {run_dir / 'eval.csv'}")
    return 0


def splat_image(uv: np.ndarray, colors: np.ndarray, size: int = SPLAT_SIZE) -> np.ndarray:
    """Average color of the points landing in each pixel of the unit square."""
    ij = np.clip((uv * size).astype(np.int64), 0, size - 1)
    flat = ij[:, 1] * size + ij[:, 0]
    count = np.bincount(flat, minlength=size * size).astype(np.float64)
    img = np.zeros((size * size, 3))
    for c in range(3):
        img[:, c] = np.bincount(flat, weights=colors[:, c], minlength=size * size)
    img[count > 0] /= count[count > 0, None]
    return img.reshape(size, size, 3)[::-1]


def heatmap_image(counts: np.ndarray) -> np.ndarray:
    """Log-scaled occupancy counts on a G x G grid as a black-to-yellow image."""
    level = np.log1p(counts) / max(np.log1p(counts.max()), 1e-12)
    img = np.stack([np.clip(2 * level, 0, 1), np.clip(2 * level - 0.5, 0, 1), np.zeros_like(level)], axis=-1)
    return img[::-1]


def histogram_image(counts: np.ndarray, height: int = 64, bar: int = 3, gap: int = 1) -> np.ndarray:
    """One vertical bar per codebook entry, height proportional to its count."""
    n = len(counts)
    img = np.ones((height, n * (bar + gap) + gap, 3))
    tops = np.round(height * counts / max(counts.max(), 1)).astype(int)
    for j, h in enumerate(tops):
        x = gap + j * (bar + gap)
        img[height - h:, x:x + bar] = (0.2, 0.3, 0.8)
    return img


def cmd_viz_gauge(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = ckpt.config
    if cfg is None:
        raise CliError(f"{args.checkpoint}: checkpoint carries no config")
    if cfg.gauge not in ("continuous", "orthogonal", "discrete"):
        raise CliError(f"no gauge visualization for gauge kind {cfg.gauge!r} (continuous, orthogonal or discrete)")
    model = ckpt.build_model()
    run_dir = run_directory(output_root(args.out), "viz", ckpt.config_hash or cfg.hash(), args.timestamp)
    if cfg.gauge == "discrete":
        for level in range(model.gauge.levels):
            counts = selection_counts(model.gauge, level)
            write_ppm(run_dir / f"histogram_level{level}.ppm", histogram_image(counts))
            write_table_csv(
                run_dir / f"histogram_level{level}.csv", ["entry", "count"],
                [{"entry": j, "count": int(c)} for j, c in enumerate(counts)],
            )
            used = int((counts > 0).sum())
            print(f"level {level}: {used}/{len(counts)} entries selected")
    else:
        data = build_dataset(cfg)
        size = cfg.metric_image_size or data.train_rig.width
        s = surface_samples(model, data.train_rig.resized(size, size), cfg.samples, tuple(cfg.background))
        cells, uv = occupancy_cells(model.gauge, s.points, s.weights, cfg.occupancy_grid)
        write_ppm(run_dir / "gauge.ppm", splat_image(uv, s.colors[s.weights >= SIGNIFICANT_WEIGHT]))
        G = cfg.occupancy_grid
        counts = np.zeros((G, G))
        ij = np.clip(np.floor(uv * G).astype(np.int64), 0, G - 1)
        np.add.at(counts, (ij[:, 1], ij[:, 0]), 1.0)
        write_ppm(run_dir / "occupancy.ppm", heatmap_image(counts))
        np.savetxt(run_dir / "splat_uv.csv", uv, delimiter=",", fmt="%.17g", header="u,v", comments="")
        print(f"occupancy {len(cells) / G**2:.4f} ({len(cells)} of {G * G} cells)")
    print(f"wrote gauge visualization to {run_dir}")
    return 0


def run_experiment(name: str, seed: int = 0, overrides=(), out: Path | None = None, jobs: int = 1,
                   timestamp: bool = False) -> tuple[list[str], list[dict], Path | None]:
    """Run every row of a preset; returns (columns, rows, run directory)."""
    rows = preset_rows(name, seed, overrides)
    run_dir = None
    if out is not None:
        digest = hashlib.sha256("".join(r.config.hash() for r in rows).encode()).hexdigest()[:12]
        run_dir = run_directory(out, name, digest, timestamp)
    jobs_list = [
        (r.config, None if run_dir is None else run_dir / f"{i:02d}_{_slug(r.label)}") for i, r in enumerate(rows)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            metrics = list(pool.map(_run_row, jobs_list))
    else:
        metrics = [_run_row(j) for j in jobs_list]
    table = [{"method": r.label, **m} for r, m in zip(rows, metrics)]
    columns = ["method"]
    for m in metrics:
        columns += [c for c in m if c not in columns]
    if run_dir is not None:
        write_table_csv(run_dir / "table.csv", columns, table)
    return columns, table, run_dir


def cmd_experiment(args) -> int:
    if args.preset not in PRESETS:
        raise CliError(f"unknown preset {args.preset!r}; valid presets: {', '.join(PRESETS)}")
    jobs = 1 if args.serial else args.jobs
    columns, table, run_dir = run_experiment(
        args.preset, args.seed or 0, args.override, output_root(args.out), jobs, args.timestamp
    )
    print(f"{args.preset} (seed {args.seed or 0})")
    print(format_table(columns, table))
    print(f"wrote {run_dir / 'table.csv'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaugefields", description="Learned gauge transformations for neural fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file (defaults when omitted)")
            p.add_argument("--seed", type=int, help="override the config seed")
            p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                           help="config override, repeatable; values parsed as JSON")
        p.add_argument("--out", help="output root (default: $NGF_OUT_DIR or ./runs)")
        p.add_argument("--timestamp", action="store_true", help="append a timestamp to the run directory name")

    p = sub.add_parser("train", help="train one configuration")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out PSNR of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", help="NeRF-style dataset directory (default: the checkpoint's toy held-out views)")
    p.add_argument("--ground-truth", action="store_true", help="evaluate the analytic scene instead of the model")
    common(p, config=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-gauge", help="visualize a trained gauge")
    p.add_argument("checkpoint")
    common(p, config=False)
    p.set_defaults(func=cmd_viz_gauge)

    p = sub.add_parser("experiment", help="run a preset experiment matrix")
    p.add_argument("preset", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--seed", type=int, help="seed for every row (default 0)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--serial", action="store_true", help="run rows one after another (the default)")
    p.add_argument("--jobs", type=int, default=1, help="run rows in this many independent processes")
    p.add_argument("--out", help="output root (default: $NGF_OUT_DIR or ./runs)")
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CheckpointError, FileNotFoundError, ValueError, TrainingDiverged) as exc:
        print(f"gaugefields {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
