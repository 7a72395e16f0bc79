import numpy as np
import pytest

from stegowav import dsp, imageops, metrics, pipeline, wavio
from stegowav.cli import run

DESK_CFG = """# desk test profile
method=replicate
transform=stdct
container=magnitude
steps=6
batch=2
lr=0.005
seed=0
"""


@pytest.fixture
def workspace(tmp_path):
    cfg_path = tmp_path / "desk.cfg"
    cfg_path.write_text(DESK_CFG, encoding="utf-8")
    return tmp_path


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as info:
        run(["--help"])
    assert info.value.code == 0
    for sub in ("synth", "train", "embed", "reveal", "eval", "robustness", "cost", "spectrogram"):
        with pytest.raises(SystemExit) as info:
            run([sub, "--help"])
        assert info.value.code == 0, sub
    capsys.readouterr()


def test_full_workflow(workspace, capsys):
    ws = workspace
    assert run(["synth", "--config", str(ws / "desk.cfg"), "--n", "4", "--out", str(ws / "pairs")]) == 0
    assert run(["train", "--config", str(ws / "desk.cfg"), "--data", str(ws / "pairs"),
                "--out", str(ws / "model.pxw2"), "--log", str(ws / "loss.csv")]) == 0
    assert run(["embed", "--model", str(ws / "model.pxw2"),
                "--image", str(ws / "pairs" / "secret_000.ppm"),
                "--audio", str(ws / "pairs" / "cover_000.wav"),
                "--out", str(ws / "stego.wav")]) == 0
    assert run(["reveal", "--model", str(ws / "model.pxw2"), "--audio", str(ws / "stego.wav"),
                "--out", str(ws / "revealed.ppm"),
                "--reference", str(ws / "pairs" / "secret_000.ppm")]) == 0
    out = capsys.readouterr().out
    assert metrics.METRICS_CSV_HEADER in out  # metrics row printed on reveal
    assert run(["eval", "--model", str(ws / "model.pxw2"), "--data", str(ws / "pairs"),
                "--out", str(ws / "eval.csv")]) == 0
    assert run(["robustness", "--model", str(ws / "model.pxw2"), "--data", str(ws / "pairs"),
                "--fractions", "1,0.5,0.25", "--modes", "sequential,random",
                "--out", str(ws / "sweep.csv")]) == 0
    assert run(["cost", "--config", str(ws / "desk.cfg"), "--out", str(ws / "cost.csv")]) == 0
    assert run(["spectrogram", "--config", str(ws / "desk.cfg"), "--audio", str(ws / "stego.wav"),
                "--out", str(ws / "spec.pgm")]) == 0
    capsys.readouterr()

    # artifacts exist and parse
    assert imageops.read_ppm(ws / "revealed.ppm").shape == (3, 16, 16)
    assert len(wavio.read_wav(ws / "stego.wav")) == 1024
    loss_lines = (ws / "loss.csv").read_text().splitlines()
    assert loss_lines[0] == pipeline.TrainLog.CSV_HEADER
    assert len(loss_lines) == 7
    eval_lines = (ws / "eval.csv").read_text().splitlines()
    assert eval_lines[0] == metrics.METRICS_CSV_HEADER
    sweep_lines = (ws / "sweep.csv").read_text().splitlines()
    assert len(sweep_lines) == 1 + 6  # header + |fractions| x |modes|
    raster = dsp.read_pgm(ws / "spec.pgm")
    assert raster.shape == (64, 32)


def test_missing_files_exit_2(workspace, capsys):
    ws = workspace
    assert run(["reveal", "--model", str(ws / "nope.pxw2"), "--audio", str(ws / "x.wav"),
                "--out", str(ws / "y.ppm")]) == 2
    assert run(["train", "--config", str(ws / "ghost.cfg"), "--data", str(ws / "pairs"),
                "--out", str(ws / "m.pxw2")]) == 2
    capsys.readouterr()


def test_usage_errors_exit_1(workspace, capsys):
    ws = workspace
    assert run(["synth", "--config", str(ws / "desk.cfg"), "--set", "nope=1",
                "--n", "2", "--out", str(ws / "p")]) == 1
    assert run(["synth", "--config", str(ws / "desk.cfg"), "--set", "transform=stdct",
                "--set", "container=dual", "--n", "2", "--out", str(ws / "p")]) == 1
    (ws / "pairs2").mkdir()
    assert run(["robustness", "--model", str(ws / "m.pxw2"), "--data", str(ws / "pairs2"),
                "--fractions", "banana", "--out", str(ws / "s.csv")]) == 1
    capsys.readouterr()


def test_argparse_usage_error_exits_1(capsys):
    assert run(["no_such_command"]) == 1
    assert run(["train"]) == 1  # missing required flags
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_3(workspace, capsys):
    ws = workspace
    assert run(["synth", "--config", str(ws / "desk.cfg"), "--n", "2", "--out", str(ws / "p")]) == 0
    code = run(["train", "--config", str(ws / "desk.cfg"), "--set", "lr=1e150",
                "--set", "steps=8", "--data", str(ws / "p"), "--out", str(ws / "m.pxw2")])
    assert code == 3
    assert "is not finite" in capsys.readouterr().err


def test_seeded_runs_byte_identical(workspace, capsys):
    ws = workspace
    for tag in ("a", "b"):
        assert run(["synth", "--config", str(ws / "desk.cfg"), "--n", "3",
                    "--out", str(ws / f"pairs_{tag}")]) == 0
        assert run(["train", "--config", str(ws / "desk.cfg"), "--data", str(ws / f"pairs_{tag}"),
                    "--out", str(ws / f"model_{tag}.pxw2"), "--log", str(ws / f"loss_{tag}.csv")]) == 0
        assert run(["robustness", "--model", str(ws / f"model_{tag}.pxw2"),
                    "--data", str(ws / f"pairs_{tag}"), "--fractions", "1,0.5",
                    "--modes", "random", "--seed", "0", "--out", str(ws / f"sweep_{tag}.csv")]) == 0
    capsys.readouterr()
    for i in range(3):
        assert (ws / "pairs_a" / f"secret_{i:03d}.ppm").read_bytes() \
            == (ws / "pairs_b" / f"secret_{i:03d}.ppm").read_bytes()
        assert (ws / "pairs_a" / f"cover_{i:03d}.wav").read_bytes() \
            == (ws / "pairs_b" / f"cover_{i:03d}.wav").read_bytes()
    assert (ws / "model_a.pxw2").read_bytes() == (ws / "model_b.pxw2").read_bytes()
    assert (ws / "loss_a.csv").read_bytes() == (ws / "loss_b.csv").read_bytes()
    assert (ws / "sweep_a.csv").read_bytes() == (ws / "sweep_b.csv").read_bytes()


def test_robustness_dump_dir(workspace, capsys):
    ws = workspace
    assert run(["synth", "--config", str(ws / "desk.cfg"), "--n", "2", "--out", str(ws / "p")]) == 0
    assert run(["train", "--config", str(ws / "desk.cfg"), "--set", "steps=2",
                "--data", str(ws / "p"), "--out", str(ws / "m.pxw2")]) == 0
    assert run(["robustness", "--model", str(ws / "m.pxw2"), "--data", str(ws / "p"),
                "--fractions", "0.5", "--modes", "sequential", "--out", str(ws / "s.csv"),
                "--dump-dir", str(ws / "cells")]) == 0
    capsys.readouterr()
    dumps = sorted((ws / "cells").glob("*.ppm"))
    assert len(dumps) == 2
    assert imageops.read_ppm(dumps[0]).shape == (3, 16, 16)
