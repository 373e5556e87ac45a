"""Command-line surface: flags, outputs, config merge, error paths."""

import json
import os

import numpy as np
import pytest

from strokescan import cli, imageio, strokes
from strokescan.cli import build_parser, main
from strokescan.raster import Canvas


@pytest.fixture
def img_png(tmp_path):
    rng = np.random.default_rng(0)
    path = str(tmp_path / "in.png")
    imageio.save_png(path, Canvas(32, 32, rng.random((32, 32, 3))))
    return path


def test_help_lists_all_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("paint", "bench", "train-renderer", "train-predictor",
                "fit", "metrics"):
        assert cmd in out


def test_paint_defaults_match_structural_constants():
    # 100 strokes per patch step, intermediate canvas every 10 strokes
    parser = build_parser()
    args = parser.parse_args(["paint", "-i", "a.png", "-o", "b.png"])
    assert args.strokes == 100
    assert args.group_size == 10


def test_paint_writes_image_and_record(tmp_path, img_png):
    out = str(tmp_path / "out.png")
    rec = str(tmp_path / "rec.json")
    code = main(["paint", "-i", img_png, "-o", out, "--strokes", "8",
                 "--save-strokes", rec, "--seed", "1"])
    assert code == 0
    painted = imageio.load_png(out)
    assert (painted.height, painted.width) == (32, 32)
    record = strokes.deserialize(open(rec).read())
    assert len(record.entries) == 8
    assert record.grid.gx == 1


def test_paint_deterministic_given_seed(tmp_path, img_png):
    outs = []
    for tag in ("a", "b"):
        out = str(tmp_path / f"{tag}.png")
        main(["paint", "-i", img_png, "-o", out, "--strokes", "4", "--seed", "7"])
        outs.append(imageio.load_png(out).rgb)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_paint_missing_input_is_error(tmp_path, capsys):
    code = main(["paint", "-i", str(tmp_path / "absent.png"),
                 "-o", str(tmp_path / "o.png")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_fit_reports_mse_and_writes_output(tmp_path, img_png, capsys):
    out = str(tmp_path / "fit.png")
    code = main(["fit", "-i", img_png, "-o", out, "-n", "4", "--iters", "3"])
    assert code == 0
    assert "MSE" in capsys.readouterr().out
    assert os.path.exists(out)


def test_metrics_outputs_json(tmp_path, img_png, capsys):
    code = main(["metrics", "--a", img_png, "--b", img_png, "--grid", "2"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mse"] == 0.0
    assert "seam" in out


def test_config_file_fills_defaults(tmp_path, img_png, capsys):
    cfg = str(tmp_path / "cfg.json")
    with open(cfg, "w") as f:
        json.dump({"iters": 2, "n": 3}, f)
    code = main(["fit", "-i", img_png, "--config", cfg])
    assert code == 0
    assert "3 strokes after 2 iterations" in capsys.readouterr().out


def test_config_flag_wins_over_file(tmp_path, img_png, capsys):
    cfg = str(tmp_path / "cfg.json")
    with open(cfg, "w") as f:
        json.dump({"iters": 50}, f)
    code = main(["fit", "-i", img_png, "--config", cfg, "--iters", "2", "-n", "2"])
    assert code == 0
    assert "after 2 iterations" in capsys.readouterr().out


def test_config_unknown_key_rejected(tmp_path, img_png):
    cfg = str(tmp_path / "cfg.json")
    with open(cfg, "w") as f:
        json.dump({"no-such-flag": 1}, f)
    with pytest.raises(SystemExit):
        main(["fit", "-i", img_png, "--config", cfg])


def test_train_renderer_writes_checkpoint_and_log(tmp_path, capsys):
    ckpt = str(tmp_path / "r.ckpt")
    log = str(tmp_path / "r.ndjson")
    code = main(["train-renderer", "--steps", "2", "--batch-size", "2",
                 "--checkpoint-out", ckpt, "--log", log])
    assert code == 0
    assert "final loss" in capsys.readouterr().out
    lines = open(log).read().strip().split("\n")
    header = json.loads(lines[0])["header"]
    assert header["command"] == "train-renderer"
    assert header["steps"] == 2          # default recorded in the log header
    assert len(lines) == 3               # header + one record per step
    from strokescan.predictor import load_tensors
    tensors, meta = load_tensors(ckpt)
    assert meta == {"kind": "renderer"}
    assert tensors


def test_train_predictor_writes_loadable_checkpoint(tmp_path):
    ckpt = str(tmp_path / "p.ckpt")
    log = str(tmp_path / "p.ndjson")
    code = main(["train-predictor", "--steps", "2", "--strokes", "2",
                 "--gan-start", "1.0", "--checkpoint-out", ckpt, "--log", log])
    assert code == 0
    from strokescan.predictor import load_predictor
    model = load_predictor(ckpt)
    assert model.dec_cfg.n_strokes == 2


def test_threads_env_fallback(monkeypatch):
    parser = build_parser()
    args = parser.parse_args(["metrics", "--a", "x.png"])
    monkeypatch.setenv("STROKESCAN_THREADS", "3")
    assert cli._threads(args) == 3
    monkeypatch.delenv("STROKESCAN_THREADS")
    assert cli._threads(args) == 1
    args.threads = 2
    assert cli._threads(args) == 2


def test_bench_requires_three_runs(capsys):
    with pytest.raises(SystemExit):
        main(["bench", "--runs", "2"])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "x.txt"
    imageio.atomic_write_text(str(target), "hello")
    assert target.read_text() == "hello"
    leftovers = [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]
    assert leftovers == []
