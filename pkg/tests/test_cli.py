"""Command line interface surface."""

import subprocess
import sys

import pytest
from click.testing import CliRunner

from gdml import cli, data

SPEC_TOML = """
[dataset]
synthetic = true
n = 200
dim = 10
sparsity = 3
noise = 0.05
seed = 7

[topology]
P = 2
slaves_per_dc = [1, 1]

[optimizer]
max_outer = 40

[run]
methods = ["distributed-fadl"]
"""


@pytest.fixture
def runner():
    return CliRunner()


def test_run_command(tmp_path, runner):
    spec = tmp_path / "spec.toml"
    spec.write_text(SPEC_TOML)
    out = tmp_path / "out"
    result = runner.invoke(cli.cli, ["run", "--spec", str(spec), "--out", str(out),
                                     "--no-figures"])
    assert result.exit_code == 0, result.output
    assert "distributed-fadl" in result.output
    assert (out / "report_distributed-fadl.csv").exists()


def test_run_command_method_override(tmp_path, runner):
    spec = tmp_path / "spec.toml"
    spec.write_text(SPEC_TOML)
    out = tmp_path / "out"
    result = runner.invoke(cli.cli, ["run", "--spec", str(spec), "--out", str(out),
                                     "--method", "centralized-stream", "--no-figures"])
    assert result.exit_code == 0, result.output
    assert (out / "report_centralized-stream.csv").exists()
    assert not (out / "report_distributed-fadl.csv").exists()


def test_cost_command(runner):
    result = runner.invoke(cli.cli, [
        "cost", "--n", "1000000", "--dim", "1000", "--avg-nnz", "50",
        "--partitions", "2", "--t-outer", "7"])
    assert result.exit_code == 0, result.output
    assert "T_C" in result.output and "T_D" in result.output
    assert "favors distributed" in result.output
    assert "1.5x" in result.output  # centralized storage multiplier at P=2


def test_cost_command_dataset_bytes(runner):
    result = runner.invoke(cli.cli, [
        "cost", "--n", "2", "--shard-sizes", "1,1", "--dim", "100000000",
        "--avg-nnz", "1", "--dataset-bytes", "1.7e12"])
    assert result.exit_code == 0, result.output
    assert "8.5e+11" in result.output  # 850 GB copy prediction


def test_synth_and_partition_commands(tmp_path, runner):
    svm = tmp_path / "train.svm"
    result = runner.invoke(cli.cli, [
        "synth", "--out", str(svm), "--n", "50", "--dim", "20",
        "--sparsity", "4", "--seed", "3"])
    assert result.exit_code == 0, result.output
    examples = data.parse_libsvm(svm.read_text().splitlines())
    assert len(examples) == 50

    out_dir = tmp_path / "shards"
    result = runner.invoke(cli.cli, [
        "partition", "--input", str(svm), "--partitions", "2",
        "--hash-dim", "8", "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    back = [data.read_shard_file(out_dir / f"shard_{p}.bin") for p in (0, 1)]
    assert sum(len(b) for b in back) == 50
    assert all(ex.indices[-1] < 8 for b in back for ex in b if ex.nnz)


def test_exit_code_spec_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[dataset\n")
    proc = subprocess.run(
        [sys.executable, "-m", "gdml.cli", "run", "--spec", str(bad)],
        capture_output=True, text=True)
    assert proc.returncode == 2
    assert "error" in proc.stderr.lower() or "Error" in proc.stderr


def test_exit_code_missing_option():
    proc = subprocess.run(
        [sys.executable, "-m", "gdml.cli", "cost", "--n", "10"],
        capture_output=True, text=True)
    assert proc.returncode == 2
