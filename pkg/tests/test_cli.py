import numpy as np
import pytest

from rn_decomp import __version__
from rn_decomp.cli import main


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_command_fails():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code != 0


def test_run_subcommand(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(
        "operator = inpainting\nmask_keep = 0.5\nsize = 8\nn_train = 4\n"
        "n_test = 2\nsigma = 0.1\nepochs = 1\nbatch = 4\nseed = 0\n"
        f"mechanism = nullspace\nout_dir = {tmp_path / 'out'}\n"
    )
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "out" / "metrics.csv").exists()


def test_run_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("operator = inpainting\nwhat = 1\n")
    assert main(["run", str(cfg)]) == 1
    assert "unknown key" in capsys.readouterr().out


def test_ablate_subcommand(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(
        "operator = block_downsample\nfactor = 2\nsize = 8\nn_train = 4\n"
        "n_test = 2\nsigma = 0.1\nepochs = 1\nbatch = 4\nseed = 0\n"
        f"out_dir = {tmp_path / 'out'}\n"
    )
    assert main(["ablate", str(cfg)]) == 0
    lines = (tmp_path / "out" / "metrics.csv").read_text().strip().split("\n")
    assert len(lines) == 5
