import json

import numpy as np
import pytest

from gaugefields.cli import histogram_image, main, splat_image
from gaugefields.presets import PRESETS, preset_rows
from gaugefields.scene import read_ppm
from gaugefields.train import TrainConfig

TINY = dict(image_size=8, train_views=2, test_views=2, rays_per_batch=32, samples=8, gt_samples=32,
            field_hidden=(16, 16), gauge_hidden=(8, 8), head_hidden=(8,), density_resolution=8,
            codebook_entries=8, codebook_dim=4, grid_resolutions=(4, 6), feature_resolution=6,
            mi_samples=32, prior_samples=16, log_every=2, steps=4, metric_image_size=8)


def overrides(**kw):
    out = []
    for key, value in {**TINY, **kw}.items():
        out += ["--override", f"{key}={json.dumps(value)}"]
    return out


def write_config(path, **kw):
    path.write_text(json.dumps({**TINY, **kw}))
    return str(path)


def only_dir(root):
    (d,) = [p for p in root.iterdir() if p.is_dir()]
    return d


class TestTrain:
    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["train", "--config", str(missing), "--out", str(tmp_path)]) != 0
        assert str(missing) in capsys.readouterr().err

    def test_invalid_config_value(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", gauge="wormhole")
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
        assert "wormhole" in capsys.readouterr().err

    def test_steps_zero_writes_checkpoint_only(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["train", "--config", cfg, "--override", "steps=0", "--out", str(tmp_path / "o")]) == 0
        run = only_dir(tmp_path / "o")
        assert [p.name for p in run.iterdir()] == ["checkpoint.ngf"]

    def test_artifacts_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        for out in ("a", "b"):
            assert main(["train", "--config", cfg, "--seed", "3", "--out", str(tmp_path / out)]) == 0
        run_a, run_b = only_dir(tmp_path / "a"), only_dir(tmp_path / "b")
        assert run_a.name == run_b.name
        names = {p.name for p in run_a.iterdir()}
        assert {"checkpoint.ngf", "metrics.csv", "config.json", "preview_00.ppm", "preview_01.ppm"} <= names
        assert (run_a / "metrics.csv").read_bytes() == (run_b / "metrics.csv").read_bytes()
        assert json.loads((run_a / "config.json").read_text())["seed"] == 3

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NGF_OUT_DIR", str(tmp_path / "env"))
        cfg = write_config(tmp_path / "c.json", steps=0)
        assert main(["train", "--config", cfg]) == 0
        assert (only_dir(tmp_path / "env") / "checkpoint.ngf").is_file()

    def test_timestamp_suffix(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", steps=0)
        assert main(["train", "--config", cfg, "--out", str(tmp_path), "--timestamp"]) == 0
        name = [p for p in tmp_path.iterdir() if p.is_dir()][0].name
        assert name.startswith("train-" + TrainConfig(**{**TINY, "steps": 0}).hash() + "-")


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    out = {}
    for kind, extra in (("continuous", {}), ("discrete", {"gauge_param": "mlp"}), ("hash", {})):
        cfg = root / f"{kind}.json"
        cfg.write_text(json.dumps({**TINY, "gauge": kind, **extra}))
        assert main(["train", "--config", str(cfg), "--out", str(root / kind)]) == 0
        out[kind] = only_dir(root / kind) / "checkpoint.ngf"
    return out


class TestEval:
    def test_table_and_csv(self, checkpoints, tmp_path, capsys):
        assert main(["eval", str(checkpoints["continuous"]), "--out", str(tmp_path)]) == 0
        assert "mean" in capsys.readouterr().out
        lines = (only_dir(tmp_path) / "eval.csv").read_text().splitlines()
        assert lines[0] == "view,psnr"
        assert len(lines) - 1 == TINY["test_views"] + 1

    def test_ground_truth_self_eval(self, checkpoints, tmp_path):
        assert main(["eval", str(checkpoints["continuous"]), "--ground-truth", "--out", str(tmp_path)]) == 0
        rows = (only_dir(tmp_path) / "eval.csv").read_text().splitlines()[1:]
        assert all(float(r.split(",")[1]) == 100.0 for r in rows)

    def test_truncated_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.ngf"
        bad.write_bytes(b"NG")
        assert main(["eval", str(bad), "--out", str(tmp_path)]) != 0
        assert "bad magic" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", str(tmp_path / "x.ngf")]) != 0
        assert "x.ngf" in capsys.readouterr().err

    def test_external_dataset(self, checkpoints, tmp_path):
        from gaugefields.scene import make_toy_scene, orbit_cameras, render_ground_truth, write_nerf_dataset

        rig = orbit_cameras(3, width=8, height=8)
        write_nerf_dataset(tmp_path / "ds", rig, render_ground_truth(make_toy_scene("blobs"), rig, 16))
        assert main(["eval", str(checkpoints["continuous"]), "--dataset", str(tmp_path / "ds"),
                     "--out", str(tmp_path / "o")]) == 0
        assert len((only_dir(tmp_path / "o") / "eval.csv").read_text().splitlines()) == 1 + 3 + 1


class TestVizGauge:
    def test_histogram_has_one_bar_per_entry(self, checkpoints, tmp_path):
        assert main(["viz-gauge", str(checkpoints["discrete"]), "--out", str(tmp_path)]) == 0
        run = only_dir(tmp_path)
        for level in range(2):
            rows = (run / f"histogram_level{level}.csv").read_text().splitlines()[1:]
            assert len(rows) == TINY["codebook_entries"]
            assert sum(int(r.split(",")[1]) for r in rows) == TINY["grid_resolutions"][level] ** 3
            assert read_ppm(run / f"histogram_level{level}.ppm").shape[1] == 4 * TINY["codebook_entries"] + 1

    def test_continuous_outputs_deterministic(self, checkpoints, tmp_path):
        for out in ("a", "b"):
            assert main(["viz-gauge", str(checkpoints["continuous"]), "--out", str(tmp_path / out)]) == 0
        a, b = only_dir(tmp_path / "a"), only_dir(tmp_path / "b")
        for name in ("gauge.ppm", "occupancy.ppm", "splat_uv.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_collapsed_gauge_splats_in_one_cell(self, tmp_path):
        # a freshly initialized continuous gauge maps every point to the centre
        cfg = write_config(tmp_path / "c.json", steps=0, density_resolution=4)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
        ckpt = only_dir(tmp_path / "t") / "checkpoint.ngf"
        # raise the initial density so surface points carry significant weight
        from gaugefields.train import Checkpoint

        c = Checkpoint.load(ckpt)
        c.tensors["density_grid.values"][...] = 3.0
        c.save(ckpt)
        assert main(["viz-gauge", str(ckpt), "--out", str(tmp_path / "v")]) == 0
        uv = np.loadtxt(only_dir(tmp_path / "v") / "splat_uv.csv", delimiter=",", skiprows=1)
        assert len(uv) > 0
        cells = {tuple(c) for c in np.floor(uv * 64).astype(int)}
        assert len(cells) == 1

    def test_unsupported_kind(self, checkpoints, tmp_path, capsys):
        assert main(["viz-gauge", str(checkpoints["hash"]), "--out", str(tmp_path)]) != 0
        assert "hash" in capsys.readouterr().err


class TestExperiment:
    def test_unknown_preset_lists_names(self, capsys):
        assert main(["experiment", "tables-please"]) != 0
        err = capsys.readouterr().err
        assert all(name in err for name in PRESETS)

    def test_every_preset_resolves(self):
        for name in PRESETS:
            rows = preset_rows(name)
            assert rows and all(isinstance(r.config, TrainConfig) for r in rows)

    def test_reg_compare_rows(self):
        assert [r.label for r in preset_rows("reg-compare")] == ["none", "structural", "cycle", "inforeg"]

    def test_topk_rows(self):
        assert [r.config.k for r in preset_rows("topk-sweep")] == [1, 2, 4, 8]

    def test_seed_applies_to_every_row(self):
        assert {r.config.seed for r in preset_rows("weight-sweep", seed=7)} == {7}

    def test_rerun_bit_exact_and_parallel_agrees(self, tmp_path, capsys):
        args = ["experiment", "collapse-continuous", "--seed", "1", *overrides()]
        assert main([*args, "--serial", "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--serial", "--out", str(tmp_path / "b")]) == 0
        assert main([*args, "--jobs", "2", "--out", str(tmp_path / "c")]) == 0
        runs = [only_dir(tmp_path / d) for d in "abc"]
        table = (runs[0] / "table.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in table[1:]] == ["none", "inforeg"]
        for other in runs[1:]:
            assert (other / "table.csv").read_bytes() == (runs[0] / "table.csv").read_bytes()
            for sub in ("00_none", "01_inforeg"):
                assert (other / sub / "metrics.csv").read_bytes() == (runs[0] / sub / "metrics.csv").read_bytes()
        assert "inforeg" in capsys.readouterr().out


def test_image_helpers():
    img = splat_image(np.array([[0.1, 0.1], [0.1, 0.1], [0.9, 0.9]]), np.array([[1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]]), 4)
    np.testing.assert_allclose(img[3, 0], [0.5, 0, 0.5])
    np.testing.assert_allclose(img[0, 3], [0, 1, 0])
    assert histogram_image(np.arange(5)).shape == (64, 21, 3)
