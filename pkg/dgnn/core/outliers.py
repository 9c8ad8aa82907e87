"""
Iterative residual-based outlier removal: train, score every sample, drop the
samples whose absolute residual exceeds median + k * MAD, renormalize, retrain.
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import median_abs_deviation

from dgnn.core.dataset import DatasetManifest, normalize_labels
from dgnn.core.settings import OutlierConfig, TrainConfig
from dgnn.core.trainkit import build_model, compute_metrics, predict_samples, train
from dgnn.errors import OutlierDetectionError
from dgnn.utils.logging_colors import logger


@dataclass(frozen=True)
class OutlierRecord:
    id: str
    residual: float
    iteration: int
    threshold: float


@dataclass
class OutlierResult:
    manifest: DatasetManifest
    outliers: list
    iterations: int
    model: object = None

    @property
    def removed_ids(self):
        return [r.id for r in self.outliers]


def residual_threshold(abs_residuals, k=6.0):
    r = np.asarray(abs_residuals, dtype=np.float64)
    return float(np.median(r) + k * median_abs_deviation(r, scale="normal"))


def flag_outliers(ids, abs_residuals, k=6.0):
    """(flagged [(id, residual)], threshold) for residuals strictly above the threshold."""
    threshold = residual_threshold(abs_residuals, k)
    flagged = [(sid, float(r)) for sid, r in zip(ids, abs_residuals) if r > threshold]
    return flagged, threshold


def detect_outliers(manifest: DatasetManifest, model_config, train_config: TrainConfig,
                    outlier_config: OutlierConfig = None) -> OutlierResult:
    """
    Returns the cleaned (renormalized) manifest and the removed samples with
    the residual and iteration at which each was flagged. The sample set only
    shrinks from one iteration to the next.
    """
    outlier_config = outlier_config or OutlierConfig()
    current = manifest
    records = []
    model = None
    done = 0

    for iteration in range(1, outlier_config.max_iters + 1):
        current = normalize_labels(current)
        model = build_model(model_config)
        result = train(model, current, train_config)

        samples = current.samples
        y = np.array([s.label_norm for s in samples])
        yhat = predict_samples(model, samples)
        abs_res = np.abs(yhat - y)
        flagged, threshold = flag_outliers([s.id for s in samples], abs_res, outlier_config.k)
        done = iteration

        train_m = compute_metrics([s.label_norm for s in current.subset("train")],
                                  predict_samples(model, current.subset("train")))
        logger.info(
            f"outlier iteration {iteration}: {len(samples)} samples, best epoch {result.best_epoch}, "
            f"train rmse {train_m.rmse:.4e}, threshold {threshold:.4e}, flagged {len(flagged)}"
        )

        if len(flagged) == len(samples):
            raise OutlierDetectionError(
                f"every sample exceeds the threshold {threshold:.4g} at iteration {iteration}; k={outlier_config.k} is too aggressive"
            )
        if not flagged:
            break

        records.extend(OutlierRecord(sid, r, iteration, threshold) for sid, r in flagged)
        current = current.without([sid for sid, _ in flagged])

    if done:
        current = normalize_labels(current)
    logger.info(f"Outlier detection removed {len(records)} samples in {done} iterations")
    return OutlierResult(current, records, done, model)
