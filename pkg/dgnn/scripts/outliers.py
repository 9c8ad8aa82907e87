import click
import pandas as pd

from dgnn.core.dataset import load_manifest, save_manifest
from dgnn.core.outliers import detect_outliers
from dgnn.core.trainkit import predict_samples
from dgnn.scripts.common import build_config, derived_path, model_options, train_options, write_or_echo_csv
from dgnn.utils.logging_colors import logger
from dgnn.utils.plots import write_scatter


def clean_manifest(in_path, cfg, out_path, report_path=None, scatter_path=None):
    manifest = load_manifest(in_path)
    result = detect_outliers(manifest, cfg.model, cfg.train, cfg.outliers)
    save_manifest(result.manifest, out_path)
    logger.info(f"Clean manifest with {len(result.manifest)} samples written to {out_path}")

    if scatter_path and result.model is not None:
        samples = result.manifest.samples
        write_scatter([s.id for s in samples], [s.label_norm for s in samples],
                      predict_samples(result.model, samples), scatter_path)

    report = pd.DataFrame(
        [{"id": r.id, "residual": r.residual, "iteration": r.iteration, "threshold": r.threshold} for r in result.outliers],
        columns=["id", "residual", "iteration", "threshold"],
    )
    write_or_echo_csv(report, report_path)
    return result


@click.command("outliers")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Split manifest with (possibly corrupted) labels.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Clean manifest (default <in>_clean.jsonl).")
@click.option("--max-iters", type=int, default=None, help="Train/flag/remove rounds (0 leaves the data untouched).")
@click.option("--k", type=float, default=None, help="Threshold median + k * MAD of absolute residuals.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="Outlier CSV; printed to stdout when omitted.")
@click.option("--scatter", "scatter_path", type=click.Path(dir_okay=False), default=None,
              help="gnuplot residual scatter of the final model on the clean data.")
@model_options
@train_options
def outliers(in_path, out_path, max_iters, k, report_path, scatter_path, **options):
    """Iteratively remove samples with outsized residuals and write a clean manifest."""
    out_path = out_path or derived_path(in_path, "_clean")
    cfg = build_config("outliers", options, paths={"in": in_path, "out": str(out_path)},
                       extra_flags={"outliers.max_iters": max_iters, "outliers.k": k})
    clean_manifest(in_path, cfg, out_path, report_path, scatter_path)
