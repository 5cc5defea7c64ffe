import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from radarfield.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from radarfield.io import load_weights
from radarfield.rfs import PointCloud, read_cloud, write_cloud_csv
from radarfield.scene import load_scene, save_scene
from radarfield.simulate import benchmark_scene

TINY = {
    "decoder": {"variant": "mlp", "probabilistic": True, "hidden_dim": 8},
    "train": {"iterations": 10, "warmup_steps": 2},
    "trajectory": {"num_frames": 4},
    "seed": 2,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_scene_matches_builtin(tmp_path):
    assert main(["gen-scene", "--out", str(tmp_path / "s.json")]) == EXIT_OK
    save_scene(benchmark_scene(), tmp_path / "ref.json")
    main(["gen-scene", "--out", str(tmp_path / "t.json")])
    ref = (tmp_path / "ref.json").read_bytes()
    assert (tmp_path / "s.json").read_bytes() == ref
    assert (tmp_path / "t.json").read_bytes() == ref
    assert len(load_scene(tmp_path / "s.json").actors) == 1


def test_render_depth(tmp_path):
    main(["gen-scene", "--out", str(tmp_path / "s.json")])
    args = ["render-depth", "--scene", str(tmp_path / "s.json"), "--pose", "0,0,0.7",
            "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == EXIT_OK
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert len(rows) == 128
    depth = np.array([float(r["expected_depth_m"]) for r in rows])
    assert np.all((depth > 0) & (depth <= 100.0))


def test_render_depth_zod_preset(tmp_path):
    main(["gen-scene", "--out", str(tmp_path / "s.json")])
    out = tmp_path / "z.csv"
    assert main(["render-depth", "--scene", str(tmp_path / "s.json"), "--preset", "zod",
                 "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 3424 + 1


def test_fit_sample_eval_pipeline(tmp_path, config, capsys):
    fit_dir = tmp_path / "fit"
    assert main(["fit", "--config", str(config), "--out", str(fit_dir)]) == EXIT_OK
    weights = load_weights(fit_dir / "weights.nrdr")
    assert weights.config.variant == "mlp"
    assert len((fit_dir / "loss_curve.csv").read_text().splitlines()) == 11

    again = tmp_path / "fit2"
    main(["fit", "--config", str(config), "--out", str(again)])
    assert _files(fit_dir) == _files(again)

    for name in ("a.csv", "b.csv", "c.jsonl"):
        assert main(["sample", "--config", str(config), "--weights",
                     str(fit_dir / "weights.nrdr"), "--seed", "5",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    a, c = read_cloud(tmp_path / "a.csv"), read_cloud(tmp_path / "c.jsonl")
    np.testing.assert_array_equal(a.points, c.points)

    main(["sample", "--config", str(config), "--weights", str(fit_dir / "weights.nrdr"),
          "--threshold", "--out", str(tmp_path / "t.csv")])
    read_cloud(tmp_path / "t.csv")

    capsys.readouterr()
    assert main(["eval", str(tmp_path / "a.csv"), str(tmp_path / "c.jsonl"),
                 "--gate", "30"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert set(result) == {"30", "full"}
    if len(a):
        assert result["full"]["chamfer"] == 0.0
        assert result["full"]["gospa"] == 0.0


def test_eval_known_values(tmp_path, capsys):
    write_cloud_csv(PointCloud(np.array([[0.0, 0, 0], [5.0, 0, 0]])), tmp_path / "p.csv")
    write_cloud_csv(PointCloud(np.array([[0.0, 0, 0.5]])), tmp_path / "t.csv")
    assert main(["eval", str(tmp_path / "p.csv"), str(tmp_path / "t.csv"),
                 "--c", "2"]) == EXIT_OK
    r = json.loads(capsys.readouterr().out)["full"]
    # one matched pair at 0.5 plus one false point costing c^p / alpha = 1
    assert r["gospa"] == pytest.approx(1.5)
    # half the mean pred->truth distance plus half the mean truth->pred distance
    d = np.hypot(5.0, 0.5)
    assert r["chamfer"] == pytest.approx(0.5 * (0.5 + d) / 2 + 0.5 * 0.5)


def test_run_writes_identical_outputs(tmp_path, config):
    for name in ("r1", "r2"):
        assert main(["run", "--config", str(config), "--out", str(tmp_path / name)]) == EXIT_OK
    assert _files(tmp_path / "r1") == _files(tmp_path / "r2")
    assert set(_files(tmp_path / "r1")) == {"loss_curve.csv", "metrics.csv", "report.json",
                                            "weights.nrdr", "weights.nrdr.json"}


def test_run_without_output_dir_is_config_error(config):
    assert main(["run", "--config", str(config)]) == EXIT_CONFIG


@pytest.mark.parametrize("payload", ['{"seed": 1, "mystery": 2}', "{broken",
                                     '{"decoder": {"variant": "rnn"}}'])
def test_config_errors_exit_2(tmp_path, payload, capsys):
    path = tmp_path / "c.json"
    path.write_text(payload)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_pose_is_config_error(tmp_path):
    main(["gen-scene", "--out", str(tmp_path / "s.json")])
    assert main(["render-depth", "--scene", str(tmp_path / "s.json"), "--pose", "1,2",
                 "--out", str(tmp_path / "o.csv")]) == EXIT_CONFIG


def test_data_errors_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,z\n1,2,oops\n")
    good = tmp_path / "good.csv"
    write_cloud_csv(PointCloud(np.zeros((1, 3))), good)
    assert main(["eval", str(bad), str(good)]) == EXIT_DATA
    assert main(["eval", str(tmp_path / "missing.csv"), str(good)]) == EXIT_DATA
    assert main(["render-depth", "--scene", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o.csv")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_numeric_failure_exit_4(tmp_path, config, monkeypatch):
    import radarfield.cli as cli

    def explode(*a, **k):
        raise FloatingPointError("non-finite loss")

    monkeypatch.setattr(cli, "fit_and_evaluate", explode)
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "radarfield.cli", "gen-scene", "--out",
                           str(tmp_path / "s.json")], capture_output=True)
    assert proc.returncode == EXIT_OK
    proc = subprocess.run([sys.executable, "-m", "radarfield.cli", "run", "--config",
                           str(tmp_path / "none.json"), "--out", str(tmp_path)],
                          capture_output=True)
    assert proc.returncode == EXIT_CONFIG
