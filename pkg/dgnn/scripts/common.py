from pathlib import Path

import click
import numpy as np
import pandas as pd

from dgnn.core.dataset import apply_label_stats, load_manifest, normalize_labels
from dgnn.utils.config import build_cli_config
from dgnn.utils.logging_colors import logger


def train_options(f):
    """Optimizer, early stopping, precision and threading flags shared by every training command."""
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                     help="YAML or key=value config file; explicit flags win."),
        click.option("--seed", type=int, default=None, help="Seed for every random stream (default 0)."),
        click.option("--epochs", type=int, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--lr", type=float, default=None, help="Adam learning rate."),
        click.option("--patience", type=int, default=None, help="Early-stop patience on validation RMSE."),
        click.option("--precision", type=click.Choice(["float64", "float32"]), default=None),
        click.option("--threads", type=int, default=None, help="Worker threads per minibatch (env DGNN_THREADS)."),
        click.option("--progress", is_flag=True, default=None, help="Show a progress bar."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def model_options(f):
    options = [
        click.option("--strategy", type=click.Choice(["dg", "fc", "gn"], case_sensitive=False), default=None,
                     help="How the two molecules are joined."),
        click.option("--readout", type=click.Choice(["gated", "gr", "cr"], case_sensitive=False), default=None),
        click.option("--norm", is_flag=True, default=None, help="Column- and row-normalize initial node features."),
        click.option("--hidden", type=int, default=None, help="Node state width d."),
        click.option("--steps", type=int, default=None, help="Message passing steps T."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def build_config(subcommand, options, paths=None, extra_flags=None):
    """CliConfig from the defaults, an optional config file and whatever flags were given."""
    flags = {
        "train.epochs": options.get("epochs"),
        "train.batch_size": options.get("batch_size"),
        "train.lr": options.get("lr"),
        "train.patience": options.get("patience"),
        "train.precision": options.get("precision"),
        "train.progress": options.get("progress") or None,
        "model.strategy": options.get("strategy"),
        "model.readout": options.get("readout"),
        "model.hidden": options.get("hidden"),
        "model.steps": options.get("steps"),
    }
    if options.get("norm"):
        flags.update({"model.norm_columns": True, "model.norm_rows": True})
    flags.update(extra_flags or {})
    return build_cli_config(
        subcommand,
        config_file=options.get("config_file"),
        flags=flags,
        seed=options.get("seed"),
        threads=options.get("threads"),
        paths=paths,
    )


def load_for_training(path):
    """Manifest with splits and normalized labels (computed from train when the file has none)."""
    manifest = load_manifest(path)
    if manifest.label_mean is None or manifest.label_std is None:
        manifest = normalize_labels(manifest)
    return manifest


def load_for_model(path, model):
    """Manifest with labels normalized by the statistics the model was trained with."""
    return apply_label_stats(load_manifest(path), model.label_mean, model.label_std)


def dtype_of(cfg):
    return np.dtype(cfg.train.precision)


def derived_path(path, suffix):
    path = Path(path)
    return path.with_name(f"{path.stem}{suffix}{path.suffix}")


def metrics_frame(method, metrics_by_split):
    rows = [{"method": method, "split": name, **m.as_dict()} for name, m in metrics_by_split.items()]
    return pd.DataFrame(rows, columns=["method", "split", "r2", "rmse", "sre", "mae"])


def echo_csv(df):
    click.echo(df.to_csv(index=False), nl=False)


def write_or_echo_csv(df, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out, index=False)
        logger.info(f"Wrote {out}")
    else:
        echo_csv(df)


def parse_int_list(text, what="values"):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"{what} must be comma separated integers, got {text!r}")


def method_name(model):
    """Table label in the style of the experiment tables, e.g. "MPNN GN +Norm +GR"."""
    if model.kind == "mlp":
        return "MLP"
    cfg = model.config
    name = f"MPNN {cfg.strategy}"
    if cfg.normalized:
        name += " +Norm"
    if cfg.readout != "gated_sum":
        name += f" +{cfg.readout}"
    return name
