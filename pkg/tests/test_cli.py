import os
import subprocess
import sys

import pytest

from malpipe.cli import main


def _toml(path, out, extra=""):
    path.write_text(f"""seed = 5
out = "{out}"
[data.synthetic]
class_counts = [60, 40, 30]
informative = 4
noise = 6
categorical = 1
[preprocess]
k = 6
[mlp]
hidden = [8, 8]
max_epochs = 8
[lda]
k = 2
[explain]
instances = 3
{extra}""")
    return path


def test_pipeline_then_bundle_commands(tmp_path, capsys):
    cfg = _toml(tmp_path / "run.toml", tmp_path / "out")
    assert main(["pipeline", "--config", str(cfg)]) == 0
    assert "svm accuracy" in capsys.readouterr().out
    bundle = str(tmp_path / "out" / "model.malpipe")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "synth")]) == 0
    data = str(tmp_path / "synth" / "data.csv")
    assert main(["classify", bundle, data, "--out", str(tmp_path / "c")]) == 0
    assert os.path.exists(tmp_path / "c" / "predictions.csv")
    assert main(["evaluate", bundle, data, "--out", str(tmp_path / "e")]) == 0
    assert main(["explain", bundle, data, "--out", str(tmp_path / "x"), "--instances", "2"]) == 0
    assert os.path.exists(tmp_path / "x" / "shap_bar.csv")


def test_stage_command_stops_early(tmp_path):
    cfg = _toml(tmp_path / "run.toml", tmp_path / "out")
    assert main(["train-lda", "--config", str(cfg)]) == 0
    names = set(os.listdir(tmp_path / "out"))
    assert "lda_features.csv" in names and "model.malpipe" not in names


@pytest.mark.parametrize("case, code", [
    ("no_data", 2),
    ("bad_key", 2),
    ("missing_config", 5),
    ("bad_magic", 5),
    ("truncated", 5),
    ("missing_input", 3),
])
def test_exit_codes(tmp_path, case, code, capsys):
    cfg = _toml(tmp_path / "run.toml", tmp_path / "out")
    garbage = tmp_path / "junk.malpipe"
    if case == "no_data":
        (tmp_path / "bad.toml").write_text("seed = 1\n")
        argv = ["pipeline", "--config", str(tmp_path / "bad.toml")]
    elif case == "bad_key":
        argv = ["pipeline", "--config", str(_toml(tmp_path / "k.toml", tmp_path / "o", "[svm]\nkernel_size = 3\n"))]
    elif case == "missing_config":
        argv = ["pipeline", "--config", str(tmp_path / "nope.toml")]
    elif case == "bad_magic":
        garbage.write_bytes(b"NOTABUNDLE" * 4)
        argv = ["classify", str(garbage), str(cfg)]
    elif case == "truncated":
        garbage.write_bytes(b"MALP")
        argv = ["classify", str(garbage), str(cfg)]
    else:
        assert main(["pipeline", "--config", str(cfg)]) == 0
        missing = tmp_path / "gone.csv"
        missing.write_text("")
        argv = ["classify", str(tmp_path / "out" / "model.malpipe"), str(missing), "--out", str(tmp_path)]
    assert main(argv) == code
    assert "malpipe: error:" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "malpipe", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "classify" in proc.stdout
