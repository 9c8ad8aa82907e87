# dgnn/utils/plots.py
# Whitespace-separated data files for gnuplot: `plot "labels.dat" using 1:2 with boxes`
from pathlib import Path

import numpy as np
import pandas as pd

from dgnn.utils.logging_colors import logger


def _write(df, path, title):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {title}\n# " + " ".join(df.columns) + "\n")
        df.to_csv(f, sep=" ", index=False, header=False, float_format="%.10g")
    logger.info(f"Wrote {title} to {path}")


def histogram_table(values, bins=40):
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins)
    return pd.DataFrame({"bin_center": (edges[:-1] + edges[1:]) / 2.0, "count": counts})


def write_histogram(values, path, bins=40):
    df = histogram_table(values, bins)
    _write(df, path, "histogram")
    return df


def write_scatter(ids, y, yhat, path):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    df = pd.DataFrame({"id": list(ids), "y": y, "yhat": yhat, "residual": yhat - y})
    _write(df, path, "residual scatter")
    return df
