import io

import pandas as pd
import pytest
from click.testing import CliRunner

from dgnn.cli import cli
from dgnn.core.dataset import load_manifest

TINY = ["--hidden", "4", "--steps", "1", "--epochs", "2", "--batch-size", "16"]


def run(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def csv_table(output):
    """The CSV block of a command's output; log lines on stderr may be interleaved."""
    lines = output.splitlines()
    start = next(i for i, line in enumerate(lines) if line.startswith("method,split,"))
    block = [lines[start]] + [line for line in lines[start + 1:] if line.count(",") == 5]
    return pd.read_csv(io.StringIO("\n".join(block)))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    result = run("gen", "--out", path / "data.jsonl", "--subset", "small", "--seed", 1)
    assert result.exit_code == 0, result.output
    result = run("split", "--in", path / "data.jsonl", "--seed", 1)
    assert result.exit_code == 0, result.output
    return path


def test_gen_small_subset(workdir):
    assert len(load_manifest(workdir / "data.jsonl")) == 99


def test_gen_histogram(tmp_path):
    result = run("gen", "--out", tmp_path / "d.jsonl", "--subset", "small", "--histogram", tmp_path / "h.dat")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "h.dat").read_text().startswith("#")


def test_split_normalizes(workdir):
    m = load_manifest(workdir / "data_split.jsonl")
    assert m.split_protocol == "random"
    assert m.label_std > 0
    assert sum(m.split_sizes().values()) == 99


def test_train_then_eval(workdir):
    ckpt = workdir / "mpnn.json"
    result = run("train", "--in", workdir / "data_split.jsonl", "--out", ckpt, "--log", workdir / "train.log",
                 "--strategy", "gn", "--readout", "gr", "--norm", *TINY)
    assert result.exit_code == 0, result.output
    table = csv_table(result.output)
    assert list(table.columns) == ["method", "split", "r2", "rmse", "sre", "mae"]
    assert list(table["split"]) == ["train", "val", "test"]
    assert set(table["method"]) == {"MPNN GN +Norm +GR"}
    assert len((workdir / "train.log").read_text().splitlines()) == 2

    result = run("eval", "--ckpt", ckpt, "--in", workdir / "data_split.jsonl", "--scatter", workdir / "s.dat")
    assert result.exit_code == 0, result.output
    row = csv_table(result.output).iloc[0]
    assert row["split"] == "test"
    assert row["rmse"] == pytest.approx(table.set_index("split").loc["test", "rmse"], rel=1e-9)
    assert (workdir / "s.dat").exists()


def test_baseline(workdir):
    result = run("baseline", "--in", workdir / "data_split.jsonl", "--out", workdir / "mlp.json",
                 "--nbits", 64, "--hidden-layers", "16,8", "--epochs", 2)
    assert result.exit_code == 0, result.output
    assert set(csv_table(result.output)["method"]) == {"MLP"}


def test_library_error_is_one_line(workdir):
    # an unsplit manifest has no training samples
    result = run("train", "--in", workdir / "data.jsonl", "--out", workdir / "x.json", *TINY)
    assert result.exit_code == 1
    errors = [line for line in result.output.splitlines() if line.startswith("error: ")]
    assert errors == [errors[0]]
    assert errors[0].startswith("error: split: SplitInfeasibleError: ")


def test_invalid_combination_is_a_config_error(workdir):
    result = run("train", "--in", workdir / "data_split.jsonl", "--out", workdir / "x.json",
                 "--strategy", "dg", "--readout", "gr", *TINY)
    assert result.exit_code == 1
    assert "error: config: ConfigError:" in result.output


def test_usage_error_exit_code(workdir):
    result = run("split", "--in", workdir / "data.jsonl", "--fractions", "0.8,0.1,0.1", "--protocol", "nope")
    assert result.exit_code == 2


def test_experiment1_is_reproducible(workdir, tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("net_width = 6\nmlp.nbits = 32\nmlp.hidden_layers = [8]\n")
    outputs = []
    for name in ("a.csv", "b.csv"):
        result = run("exp1", "--in", workdir / "data.jsonl", "--out", tmp_path / name, "--config", cfg, *TINY)
        assert result.exit_code == 0, result.output
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]
    table = pd.read_csv(tmp_path / "a.csv")
    assert list(table["method"].unique()) == ["MPNN DG", "MPNN FC", "MPNN GN", "MLP"]
    assert list(table["split"][:2]) == ["test", "train"]


def test_outliers_zero_iterations_keeps_data(workdir):
    result = run("outliers", "--in", workdir / "data_split.jsonl", "--max-iters", 0, *TINY)
    assert result.exit_code == 0, result.output
    assert load_manifest(workdir / "data_split_clean.jsonl") == load_manifest(workdir / "data_split.jsonl")


def test_malformed_checkpoint_is_one_line(workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "dgnn-checkpoint", "version": 1, "kind": "mpnn", "config": {"hidden": "x"}}')
    result = run("eval", "--ckpt", bad, "--in", workdir / "data_split.jsonl")
    assert result.exit_code == 1
    errors = [line for line in result.output.splitlines() if line.startswith("error: ")]
    assert len(errors) == 1
    assert errors[0].startswith("error: checkpoint: CheckpointError: ")
