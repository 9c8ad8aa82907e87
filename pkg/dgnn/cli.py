import logging

import click

from dgnn.core.baseline import MlpModel
from dgnn.core.checkpoint import load_checkpoint, save_checkpoint
from dgnn.core.dataset import (
    DEFAULT_GAMMA,
    SUBSETS,
    generate_manifest,
    load_library,
    load_manifest,
    normalize_labels,
    save_manifest,
    split,
)
from dgnn.core.mpnn import MpnnModel
from dgnn.core.trainkit import evaluate, predict_samples, train
from dgnn.errors import DgnnError
from dgnn.scripts.common import (
    build_config,
    derived_path,
    dtype_of,
    echo_csv,
    load_for_model,
    load_for_training,
    method_name,
    metrics_frame,
    model_options,
    parse_int_list,
    train_options,
)
from dgnn.scripts.experiments import exp1 as exp1_cmd
from dgnn.scripts.experiments import exp2 as exp2_cmd
from dgnn.scripts.outliers import outliers as outliers_cmd
from dgnn.utils.logging_colors import logger, setup_logging
from dgnn.utils.plots import write_histogram, write_scatter


class DgnnGroup(click.Group):
    """Turns library errors into one machine-parsable stderr line and a nonzero exit."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except DgnnError as e:
            logger.debug(repr(e))
            click.echo(e.one_line(), err=True)
            ctx.exit(1)
        except click.UsageError as e:
            click.echo(f"error: usage: {type(e).__name__}: {' '.join(e.format_message().split())}", err=True)
            ctx.exit(2)


@click.group(cls=DgnnGroup)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Also write JSON-lines logs here.")
def cli(verbose, log_file):
    """Message passing networks on pairs of disjoint molecular graphs."""
    setup_logging(logging.DEBUG if verbose else logging.INFO, log_file)


cli.add_command(outliers_cmd)
cli.add_command(exp1_cmd)
cli.add_command(exp2_cmd)


def _final_metrics(model, manifest):
    results = {}
    for name in ("train", "val", "test"):
        if manifest.subset(name):
            results[name] = evaluate(model, manifest, name)
    return results


@cli.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Manifest JSONL to write.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gamma", type=float, default=DEFAULT_GAMMA, show_default=True, help="Weight of the alcohol x halide cross term.")
@click.option("--library", type=click.Path(exists=True, file_okay=False), default=None,
              help="Directory with alcohols/*.json and halides/*.json (default: bundled toy library).")
@click.option("--subset", type=click.Choice(sorted(SUBSETS)), default="full", show_default=True)
@click.option("--no-noise", is_flag=True, help="Leave out the skewed label noise.")
@click.option("--histogram", type=click.Path(dir_okay=False), default=None, help="gnuplot label histogram.")
def gen(out_path, seed, gamma, library, subset, no_noise, histogram):
    """Pair every alcohol with every acyl halide and label the reactions."""
    alcohols, halides = load_library(library)
    manifest = generate_manifest(alcohols, halides, seed=seed, gamma=gamma, constraints=SUBSETS[subset],
                                 noise=not no_noise)
    save_manifest(manifest, out_path)
    if histogram:
        write_histogram([s.label for s in manifest.samples], histogram)
    click.echo(f"{len(manifest)} samples -> {out_path}")


@cli.command("split")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Split manifest (default <in>_split.jsonl).")
@click.option("--protocol", type=click.Choice(["random", "leave-alcohol-out", "leave-halide-out"]),
              default="random", show_default=True)
@click.option("--fractions", default="0.8,0.1,0.1", show_default=True, help="train,val,test")
@click.option("--seed", type=int, default=0, show_default=True)
def split_cmd(in_path, out_path, protocol, fractions, seed):
    """Assign train/val/test and normalize labels with train statistics."""
    out_path = out_path or derived_path(in_path, "_split")
    manifest = normalize_labels(split(load_manifest(in_path), protocol, fractions, seed))
    save_manifest(manifest, out_path)
    sizes = manifest.split_sizes()
    click.echo(f"train={sizes['train']} val={sizes['val']} test={sizes['test']} -> {out_path}")


@cli.command("train")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint file.")
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None, help="Per-epoch JSONL log.")
@model_options
@train_options
def train_cmd(in_path, out_path, log_path, **options):
    """Train a message passing network and print its final metrics as CSV."""
    cfg = build_config("train", options, paths={"in": in_path, "out": out_path, "log": log_path})
    manifest = load_for_training(in_path)
    model = MpnnModel(cfg.model, dtype=dtype_of(cfg))
    train(model, manifest, cfg.train, log_path=log_path)
    save_checkpoint(out_path, model)
    echo_csv(metrics_frame(method_name(model), _final_metrics(model, manifest)))


@cli.command("baseline")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint file.")
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None, help="Per-epoch JSONL log.")
@click.option("--nbits", type=int, default=None, help="Fingerprint length per molecule.")
@click.option("--radius", type=int, default=None)
@click.option("--hidden-layers", default=None, help="Comma separated hidden widths, e.g. 512,128.")
@train_options
def baseline_cmd(in_path, out_path, log_path, nbits, radius, hidden_layers, **options):
    """Train the fingerprint MLP baseline and print its final metrics as CSV."""
    layers = parse_int_list(hidden_layers, "--hidden-layers") if hidden_layers else None
    cfg = build_config("baseline", options, paths={"in": in_path, "out": out_path, "log": log_path},
                       extra_flags={"mlp.nbits": nbits, "mlp.radius": radius, "mlp.hidden_layers": layers})
    manifest = load_for_training(in_path)
    model = MlpModel(cfg.mlp, dtype=dtype_of(cfg))
    train(model, manifest, cfg.train, log_path=log_path)
    save_checkpoint(out_path, model)
    echo_csv(metrics_frame(method_name(model), _final_metrics(model, manifest)))


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test", "all"]), default="test",
              show_default=True)
@click.option("--scatter", type=click.Path(dir_okay=False), default=None, help="gnuplot residual scatter.")
def eval_cmd(ckpt, in_path, split_name, scatter):
    """Print the metrics of a checkpoint on one split as a CSV row."""
    model = load_checkpoint(ckpt)
    manifest = load_for_model(in_path, model)
    metrics = evaluate(model, manifest, split_name)
    if scatter:
        samples = manifest.samples if split_name == "all" else manifest.subset(split_name)
        write_scatter([s.id for s in samples], [s.label_norm for s in samples], predict_samples(model, samples),
                      scatter)
    echo_csv(metrics_frame(method_name(model), {split_name: metrics}))


if __name__ == "__main__":
    cli()
