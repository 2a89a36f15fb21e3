import json
import subprocess
import sys

import numpy as np
import pytest

from modalfuse import ModuleConfig, Tensor, count_flops, read_archive, read_tensor, write_tensor
from modalfuse.cli import cli_dispatch


def test_gradcheck_passes(capsys):
    assert cli_dispatch(["gradcheck", "--module", "asff", "--channels", "8", "--size", "8", "--seed", "7"]) == 0
    assert "[ok]" in capsys.readouterr().out


def test_gradcheck_failure_exit_code(capsys):
    # an impossible tolerance turns the check red
    assert cli_dispatch(["gradcheck", "--module", "cam", "--seed", "1", "--tol", "0"]) == 3


def test_usage_errors_print_help(capsys):
    assert cli_dispatch(["count", "--module", "asff", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert cli_dispatch([]) == 1
    assert cli_dispatch(["count", "--module", "fatm", "--channels", "16", "--height", "8", "--width", "8",
                         "--compare-multi", "2"]) == 1


def test_count_matches_cost_model(capsys):
    assert cli_dispatch(["count", "--module", "fatm", "--channels", "16", "--height", "8", "--width", "8", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    report = count_flops(ModuleConfig(16, 8, 8), "fatm")
    assert doc["totals"]["params"] == report.params and doc["totals"]["macs"] == report.macs
    assert cli_dispatch(["count", "--module", "fatm", "--channels", "16", "--height", "8", "--width", "8"]) == 0
    total = [line for line in capsys.readouterr().out.splitlines() if line.startswith("total")][0].split()
    assert int(total[1]) == report.params and int(total[2]) == report.macs


def test_count_invalid_config_exit_2(capsys):
    assert cli_dispatch(["count", "--module", "asff", "--channels", "9", "--height", "8", "--width", "8"]) == 2


def test_init_fuse_fatm_roundtrip(tmp_path):
    w = tmp_path / "w.lasw"
    assert cli_dispatch(["init-weights", "--module", "asff", "--channels", "8", "--seed", "3", "--groups", "2",
                         "--out", str(w)]) == 0
    first = w.read_bytes()
    assert cli_dispatch(["init-weights", "--module", "asff", "--channels", "8", "--seed", "3", "--groups", "2",
                         "--out", str(w)]) == 0
    assert w.read_bytes() == first
    rng = np.random.default_rng(0)
    for name in ("rgb", "ir"):
        write_tensor(tmp_path / f"{name}.lasf", Tensor(rng.standard_normal((1, 8, 8, 8))))
    out = tmp_path / "out.lasf"
    assert cli_dispatch(["fuse", "--rgb", str(tmp_path / "rgb.lasf"), "--ir", str(tmp_path / "ir.lasf"),
                         "--weights", str(w), "--groups", "2", "--out", str(out)]) == 0
    assert read_tensor(out).dims == (1, 8, 8, 8)

    fw = tmp_path / "f.lasw"
    assert cli_dispatch(["init-weights", "--module", "fatm", "--channels", "8", "--ratio", "4", "--seed", "1",
                         "--out", str(fw)]) == 0
    assert cli_dispatch(["fatm", "--in", str(tmp_path / "rgb.lasf"), "--weights", str(fw), "--out", str(out)]) == 0
    assert read_tensor(out).dims == (1, 8, 8, 8)


def test_fuse_shape_mismatch_names_both_shapes(tmp_path, capsys):
    w = tmp_path / "w.lasw"
    cli_dispatch(["init-weights", "--module", "asff", "--channels", "8", "--seed", "0", "--groups", "2", "--out", str(w)])
    write_tensor(tmp_path / "a.lasf", Tensor.ones((1, 8, 8, 8)))
    write_tensor(tmp_path / "b.lasf", Tensor.ones((1, 8, 4, 4)))
    code = cli_dispatch(["fuse", "--rgb", str(tmp_path / "a.lasf"), "--ir", str(tmp_path / "b.lasf"),
                         "--weights", str(w), "--groups", "2", "--out", str(tmp_path / "o.lasf")])
    err = capsys.readouterr().err
    assert code == 2 and "(1, 8, 8, 8)" in err and "(1, 8, 4, 4)" in err


def test_format_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.lasw"
    bad.write_bytes(b"XXXX0000")
    write_tensor(tmp_path / "x.lasf", Tensor.ones((1, 8, 4, 4)))
    assert cli_dispatch(["fatm", "--in", str(tmp_path / "x.lasf"), "--weights", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli_dispatch(["fatm", "--in", str(tmp_path / "missing"), "--weights", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_train_toy_is_reproducible(tmp_path, capsys):
    args = ["train-toy", "--channels", "8", "--size", "4", "--samples", "4", "--epochs", "3", "--lr", "0.01", "--seed", "2"]
    assert cli_dispatch(args + ["--out", str(tmp_path / "a.lasw")]) == 0
    first = capsys.readouterr().out
    assert cli_dispatch(args + ["--out", str(tmp_path / "b.lasw")]) == 0
    assert capsys.readouterr().out == first and len(first.splitlines()) == 3
    assert (tmp_path / "a.lasw").read_bytes() == (tmp_path / "b.lasw").read_bytes()
    assert len(read_archive(tmp_path / "a.lasw")) == 47


def test_train_toy_divergence_exit_3(tmp_path):
    assert cli_dispatch(["train-toy", "--channels", "8", "--size", "4", "--samples", "4", "--epochs", "50",
                         "--lr", "1e6", "--out", str(tmp_path / "w.lasw")]) == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "modalfuse", "count", "--module", "asff", "--channels", "8",
                           "--height", "8", "--width", "8", "--compare-multi", "3"], capture_output=True, text=True)
    assert proc.returncode == 0 and "3 units" in proc.stdout
