"""
Tests for the mpns-lab command line.
"""
import os
from contextlib import contextmanager
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from mpns_lab.config import parse_config
from mpns_lab.files.checkpoint import load_checkpoint
from mpns_lab.files.dataset import read_dataset
from mpns_lab.main import cli
from mpns_lab.pns_oracle import PNS_REPORT_COLUMNS
from mpns_lab.synthgen import split_seeds

TEST_PATH = "mpns_lab/tests/fixtures/small_config.yaml"


@contextmanager
def override_config(config_path, tmpdir):
    """
    Override the config file with runtime variables (temp file paths, etc).

    Overrides for both the test code and the loading code.
    """
    test_config = parse_config(config_path)
    test_config = test_config._replace(grid=replace(test_config.grid, log_dir=str(tmpdir)))

    with patch("mpns_lab.main.get_config") as mock_config:
        mock_config.return_value = test_config
        yield test_config


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


def oracle_values(output):
    return dict(line.split(": ", 1) for line in output.splitlines() if ": " in line)


def test_generate_train_eval(tmpdir):
    data_dir = tmpdir.join("data")
    checkpoint_path = tmpdir.join("model.ckpt")
    log_path = tmpdir.join("train_log.csv")
    results_dir = tmpdir.join("results")

    with override_config(TEST_PATH, tmpdir) as test_config:
        result = invoke(
            "generate", "--config_file", TEST_PATH, "--n-train", 80, "--n-eval", 50, "--out", data_dir
        )
        assert "Wrote 80 training and 50 evaluation samples with s=0.3 and seed 7" in result.output
        assert "Done." in result.output
        train_set = read_dataset(str(data_dir.join("train.csv.gz")))
        eval_set = read_dataset(str(data_dir.join("eval.csv.gz")))
        assert (len(train_set), len(eval_set)) == (80, 50)
        assert train_set.params.s == eval_set.params.s == test_config.gen.s

        result = invoke(
            "train", "--config_file", TEST_PATH, "--data", data_dir.join("train.csv.gz"), "--out", checkpoint_path,
            "--log", log_path
        )
        assert "Epoch 2/2" in result.output
        assert "Saved checkpoint" in result.output
        assert len(log_path.read().splitlines()) == 3
        bundle = load_checkpoint(str(checkpoint_path))
        assert bundle.config.input_dims == (16, 16)
        assert not bundle.inference_only

        result = invoke(
            "eval", "--config_file", TEST_PATH, "--checkpoint", checkpoint_path, "--data",
            data_dir.join("eval.csv.gz"), "--out", results_dir
        )
        assert "modality 1 NS concatenated" in result.output
        assert "full joint" in result.output
        assert "probe discriminator" in result.output
        assert "Done." in result.output
        for name in ("dcor", "accuracy"):
            assert os.path.exists(os.path.join(str(results_dir), f"{name}.csv"))


def test_generate_pair_is_disjoint_and_reproducible(tmpdir):
    with override_config(TEST_PATH, tmpdir):
        for name, seed in (("a", 3), ("b", 3), ("c", 4)):
            result = invoke(
                "generate", "--config_file", TEST_PATH, "--s", 0.7, "--n-train", 30, "--n-eval", 30, "--seed", seed,
                "--out", tmpdir.join(name)
            )
            assert result.exit_code == 0

    def load(name, split):
        return read_dataset(str(tmpdir.join(name, f"{split}.csv.gz")))

    train_a, eval_a = load("a", "train"), load("a", "eval")
    assert train_a.params.s == 0.7
    assert (train_a.params.seed, eval_a.params.seed) == split_seeds(3)
    assert not np.array_equal(train_a.x1, eval_a.x1)

    for split in ("train", "eval"):
        first, second = load("a", split), load("b", split)
        np.testing.assert_array_equal(first.x1, second.x1)
        np.testing.assert_array_equal(first.x2, second.x2)
        np.testing.assert_array_equal(first.y, second.y)
        assert not np.array_equal(first.x1, load("c", split).x1)


def test_generate_rejects_bad_s(tmpdir):
    with override_config(TEST_PATH, tmpdir):
        result = CliRunner().invoke(
            cli, ["generate", "--config_file", TEST_PATH, "--s", "1.5", "--out", str(tmpdir.join("data"))]
        )
    assert result.exit_code == 1
    assert "s must lie in [0, 1)" in result.output


def test_eval_inference_only_checkpoint(tmpdir):
    data_dir = tmpdir.join("data")
    checkpoint_path = tmpdir.join("model.ckpt")
    results_dir = tmpdir.join("results")

    with override_config(TEST_PATH, tmpdir):
        invoke("generate", "--config_file", TEST_PATH, "--n-train", 40, "--n-eval", 30, "--out", data_dir)
        invoke(
            "train", "--config_file", TEST_PATH, "--data", data_dir.join("train.csv.gz"), "--out", checkpoint_path,
            "--inference-only"
        )
        assert load_checkpoint(str(checkpoint_path)).inference_only

        result = invoke(
            "eval", "--config_file", TEST_PATH, "--checkpoint", checkpoint_path, "--data",
            data_dir.join("eval.csv.gz"), "--out", results_dir
        )
        assert "modality 2 SC specific" in result.output
        assert "only-modality-1 invariant" in result.output
        assert "probe discriminator" in result.output

    accuracy = pd.read_csv(str(results_dir.join("accuracy.csv")), comment="#")
    assert len(accuracy) == 8
    assert set(accuracy["eval_mode"]) == {"full", "only-modality-1", "only-modality-2", "probe"}
    assert accuracy["accuracy"].between(0.0, 1.0).all()


def test_oracle_fixture():
    result = invoke("oracle", "--fixture", "xor", "--z", 1, "--zbar", 0, "--y", 1)
    assert result.exit_code == 0
    values = oracle_values(result.output)
    assert float(values["pns_exact"]) == pytest.approx(0.85)
    assert float(values["identified_estimand"]) == pytest.approx(0.70)
    assert values["monotonic"] == "False"
    assert values["exogenous"] == "True"


def test_oracle_scm_file():
    result = invoke("oracle", "--scm", "example_configs/scm_and.yaml", "--z", 1, "--zbar", 0, "--y", 1)
    values = oracle_values(result.output)
    assert float(values["pns_exact"]) == pytest.approx(0.9)
    assert float(values["identified_estimand"]) == pytest.approx(0.9)
    assert values["monotonic"] == "True"


def test_oracle_writes_report_table(tmpdir):
    csv_path = tmpdir.join("reports", "xor.csv")
    result = invoke("oracle", "--fixture", "xor", "--z", 1, "--zbar", 0, "--y", 1, "--csv", csv_path)
    assert f"Wrote the PNS report to {csv_path}" in result.output

    with open(str(csv_path)) as f:
        assert f.readline().startswith("# generated ")
    table = pd.read_csv(str(csv_path), comment="#")
    assert tuple(table.columns) == PNS_REPORT_COLUMNS
    assert len(table) == 1
    assert table["pns_exact"][0] == pytest.approx(0.85)
    assert table["identified_estimand"][0] == pytest.approx(0.70)
    assert not table["monotonic"][0]


def test_oracle_errors():
    runner = CliRunner()
    result = runner.invoke(cli, ["oracle", "--z", "1", "--zbar", "0", "--y", "1"])
    assert result.exit_code == 2

    result = runner.invoke(
        cli, ["oracle", "--fixture", "xor", "--scm", "example_configs/scm_xor.yaml", "--z", "1", "--zbar", "0",
              "--y", "1"]
    )
    assert result.exit_code == 2

    result = runner.invoke(cli, ["oracle", "--fixture", "single_cause", "--z", "1", "--zbar", "1", "--y", "1"])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_ablation_and_verify(tmpdir):
    results_dir = tmpdir.join("grid")

    with override_config(TEST_PATH, tmpdir):
        result = invoke("ablation", "--config_file", TEST_PATH, "--out", results_dir)
        assert "Running 4 grid cells" in result.output
        assert "4 cells, 0 failed." in result.output
        assert "Done." in result.output

    result = CliRunner().invoke(cli, ["verify", "--results", str(results_dir)])
    assert result.exit_code in (0, 2)
    assert "Trend verification" in result.output
    assert "[WARN] Only one seed" in result.output


def test_verify_incomplete_results(tmpdir):
    result = CliRunner().invoke(cli, ["verify", "--results", str(tmpdir)])
    assert result.exit_code == 1
    assert "Missing result file" in result.output


def test_bad_config_file(tmpdir):
    result = CliRunner().invoke(
        cli,
        ["generate", "--config_file", "mpns_lab/tests/fixtures/bad_key_config.yaml", "--n-train", "10", "--out",
         str(tmpdir.join("data"))],
    )
    assert result.exit_code == 1
    assert "unknown key 'learning_rat'" in result.output
