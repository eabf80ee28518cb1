import json
import subprocess
import sys

import pytest

from shapecomp.cli import SUBCOMMANDS, build_parser, run

SMALL = {"n_objects": 2, "image_size": 32, "phase1_epochs": 2, "phase2_epochs": 1, "render_pixels": 32,
         "render_samples": 16, "channels": [4], "emb_dim": 4, "T": 10, "eval_points": 2048}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.json").write_text(json.dumps(SMALL))
    assert run(["gen-data", "--config", str(d / "c.json"), "--out", str(d / "data")]) == 0
    assert run(["train", "--config", str(d / "c.json"), "--data", str(d / "data"), "--out", str(d / "m")]) == 0
    return d


def test_gen_data_layout(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["objects"]) == 2
    obj = workspace / "data" / "obj_0000"
    for name in ("gt.grid.json", "gt.grid.bin", "view_0.ply", "view_0.pgm", "view_0.pfm", "view_7.json"):
        assert (obj / name).exists()


def test_train_writes_checkpoint(workspace):
    header = json.loads((workspace / "m" / "model.ckpt.json").read_text())
    assert header["status"] == "ok" and header["architecture"]["T"] == 10
    assert len(json.loads((workspace / "m" / "model.losses.json").read_text())["losses"]) == 3


def test_sample_is_deterministic(workspace):
    args = ["sample", "--config", str(workspace / "c.json"), "--ckpt", str(workspace / "m" / "model"),
            "--input", str(workspace / "data" / "obj_0000" / "view_0.ply"), "--seed", "7"]
    assert run(args + ["--out", str(workspace / "s1")]) == 0
    assert run(args + ["--out", str(workspace / "s2")]) == 0
    for name in ("sample_0.grid.bin", "sample_0.grid.json", "sample_0.ply"):
        assert (workspace / "s1" / name).read_bytes() == (workspace / "s2" / name).read_bytes()


def test_eval_pred_gt(workspace):
    obj = workspace / "data" / "obj_0000"
    out = workspace / "e"
    assert run(["eval", "--config", str(workspace / "c.json"), "--pred", str(obj / "view_0.ply"),
                "--gt", str(obj / "gt.grid.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "object.report.json").read_text())
    for k in ("precision", "recall", "f1", "emd", "chamfer", "uhd", "mmd", "tmd"):
        assert rep[k] is not None
    header = (out / "summary.csv").read_text().splitlines()[0]
    assert header == "id,category,P,R,F1,EMD,CD,UHD,MMD,TMD,tau,seed"


def test_eval_dataset(workspace):
    out = workspace / "ed"
    assert run(["eval", "--config", str(workspace / "c.json"), "--data", str(workspace / "data"),
                "--ckpt", str(workspace / "m" / "model"), "--out", str(out)]) == 0
    assert len((out / "summary.csv").read_text().splitlines()) == 3
    assert (out / "obj_0001.report.json").exists()


def test_render_views(workspace):
    obj = workspace / "data" / "obj_0000"
    out = workspace / "r"
    assert run(["render-views", "--grid", str(obj / "gt.grid.json"), "--camera", str(obj / "view_0.json"),
                "--out", str(out)]) == 0
    assert (out / "view_0.pgm").exists() and (out / "view_0.pfm").exists()


def test_exit_codes(workspace, tmp_path, capsys):
    assert run(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["train", "--out", str(tmp_path)]) == 1  # missing required --data
    assert run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.json").write_text('{"T": 0}')
    assert run(["gen-data", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
    assert "T must be" in capsys.readouterr().err
    assert run(["sample", "--ckpt", str(tmp_path / "missing"), "--input", "x.ply"]) == 2


def test_logs_are_json_lines(workspace, capsys):
    obj = workspace / "data" / "obj_0000"
    run(["render-views", "--grid", str(obj / "gt.grid.json"), "--camera", str(obj / "view_0.json"),
         "--out", str(workspace / "r2")])
    lines = [l for l in capsys.readouterr().err.splitlines() if l.strip()]
    assert lines and all("msg" in json.loads(l) for l in lines)


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == set(SUBCOMMANDS)
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text
            assert action.help, f"{name}: undocumented {action.dest}"


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "shapecomp", "nope"], capture_output=True, text=True)
    assert out.returncode == 1 and "usage" in out.stderr
