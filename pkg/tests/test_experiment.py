import os

import numpy as np
import pytest

from rn_decomp.experiment import (
    ABLATION_MECHANISMS,
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    build_datasets,
    operator_from_config,
    parse_config,
    run_ablation,
    run_experiment,
)


def write_config(path, **overrides):
    base = {
        "operator": "inpainting",
        "mask_keep": 0.5,
        "size": 8,
        "n_train": 4,
        "n_test": 2,
        "sigma": 0.1,
        "lambda1": 1.0,
        "lambda2": 1e-4,
        "epochs": 2,
        "batch": 4,
        "lr": 1e-3,
        "seed": 0,
        "mode": "joint",
        "mechanism": "ddn-cascade",
    }
    base.update(overrides)
    lines = [f"{k} = {v}" for k, v in base.items() if v is not None]
    path.write_text("\n".join(lines) + "\n")
    return path


class TestConfigParsing:
    def test_round_trip(self, tmp_path):
        path = write_config(tmp_path / "c.txt", out_dir=tmp_path / "out")
        cfg = parse_config(path)
        assert cfg.operator == "inpainting"
        assert cfg.n_train == 4
        assert cfg.lambda2 == pytest.approx(1e-4)
        cfg.validate()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("operator = inpainting\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("epochs = soon\n")
        with pytest.raises(ConfigError, match="bad value"):
            parse_config(path)

    def test_comments_and_blank_lines_ok(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# a comment\n\noperator = gaussian\n")
        assert parse_config(path).operator == "gaussian"

    def test_missing_out_dir_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.txt")
        cfg = parse_config(path)
        with pytest.raises(ConfigError, match="out_dir"):
            cfg.validate()

    def test_invalid_mechanism_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.txt", mechanism="unet", out_dir=tmp_path)
        with pytest.raises(ConfigError, match="mechanism"):
            parse_config(path).validate()

    def test_nonpositive_counts_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.txt", n_test=0, out_dir=tmp_path)
        with pytest.raises(ConfigError, match="positive"):
            parse_config(path).validate()


class TestOperatorFromConfig:
    def test_inpainting_mask_size_and_determinism(self):
        cfg = ExperimentConfig(operator="inpainting", mask_keep=0.5, size=8, seed=3)
        a, b = operator_from_config(cfg), operator_from_config(cfg)
        assert a.codomain_dim == 32
        assert np.array_equal(a.mask, b.mask)

    def test_block_downsample_dims(self):
        cfg = ExperimentConfig(operator="block_downsample", factor=2, size=8)
        op = operator_from_config(cfg)
        assert op.codomain_dim == 16

    def test_dft_keeps_requested_fraction(self):
        cfg = ExperimentConfig(operator="subsampled_dft", freq_keep=0.25, size=8, seed=1)
        op = operator_from_config(cfg)
        assert op.codomain_dim == 2 * round(0.25 * 64 / 2)

    def test_gaussian_dims(self):
        cfg = ExperimentConfig(operator="gaussian", gauss_d=10, size=8, seed=2)
        assert operator_from_config(cfg).codomain_dim == 10

    def test_datasets_are_disjoint_and_sized(self):
        cfg = ExperimentConfig(operator="inpainting", size=8, n_train=5, n_test=3,
                               sigma=0.1, seed=4)
        op = operator_from_config(cfg)
        train, test = build_datasets(cfg, op)
        assert len(train) == 5 and len(test) == 3
        for _, ya, _ in train:
            for _, yb, _ in test:
                assert not np.array_equal(ya.data, yb.data)


class TestRunExperiment:
    def test_run_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.txt", out_dir=out)
        assert run_experiment(path) == 0
        csv = (out / "metrics.csv").read_text()
        lines = csv.strip().split("\n")
        assert lines[0] == CSV_HEADER
        assert len(lines) == 2
        assert lines[1].startswith("ddn-cascade,4,0.1,")
        assert (out / "run.meta").exists()
        pgms = sorted(p.name for p in out.glob("*.pgm"))
        assert pgms == ["recon_ddn-cascade_0.pgm", "recon_ddn-cascade_1.pgm"]

    def test_pinv_mechanism_needs_no_training(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.txt", mechanism="pinv", epochs=100, out_dir=out)
        assert run_experiment(path) == 0
        assert "pinv," in (out / "metrics.csv").read_text()

    def test_bad_config_returns_nonzero(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("operator = warp\n")
        assert run_experiment(path) == 1

    def test_missing_config_returns_nonzero(self, tmp_path):
        assert run_experiment(tmp_path / "nope.txt") == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            path = write_config(tmp_path / f"c{tag}.txt", out_dir=out)
            assert run_experiment(path) == 0
            outs.append((out / "metrics.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_csv_uses_six_significant_digits(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.txt", mechanism="pinv", out_dir=out)
        assert run_experiment(path) == 0
        row = (out / "metrics.csv").read_text().strip().split("\n")[1]
        for cell in row.split(",")[3:]:
            if "." in cell and cell not in ("inf",):
                digits = cell.replace("-", "").replace(".", "").lstrip("0")
                digits = digits.split("e")[0]
                assert len(digits) <= 6, row


class TestAblation:
    def test_four_rows_in_fixed_order(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.txt", mechanism=None, out_dir=out)
        assert run_ablation(path) == 0
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert tuple(line.split(",")[0] for line in lines[1:]) == ABLATION_MECHANISMS
        assert len(lines) == 5

    def test_meta_mentions_operator_substitution(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path / "c.txt", operator="block_downsample",
                            mechanism=None, out_dir=out)
        assert run_ablation(path) == 0
        meta = (out / "run.meta").read_text()
        assert "block_downsample" in meta
        assert "measured" in meta
