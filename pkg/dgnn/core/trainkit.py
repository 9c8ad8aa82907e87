"""
Training loop (Adam on minibatch MSE over normalized labels, early stopping on
validation RMSE), batched prediction and the regression metric suite.

Models only need prepare(samples), forward(prepared, params), fit_normalizer,
params, dtype and label statistics, so the MPNN and the fingerprint MLP share
this loop.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from dgnn.core import autodiff as ad
from dgnn.core.baseline import MlpModel
from dgnn.core.dataset import DatasetManifest
from dgnn.core.mpnn import MpnnModel
from dgnn.core.settings import MlpConfig, ModelConfig, TrainConfig
from dgnn.errors import NormalizerError, SplitInfeasibleError, TrainingDivergedError
from dgnn.utils.logging_colors import logger
from dgnn.utils.seeding import rng as seeded_rng

SRE_EPS = 1e-8


@dataclass(frozen=True)
class Metrics:
    r2: float
    rmse: float
    sre: float
    mae: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def compute_metrics(y, yhat) -> Metrics:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    err = yhat - y
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    return Metrics(
        r2=r2,
        rmse=float(np.sqrt(np.mean(err ** 2))),
        sre=float(np.mean((err / (np.abs(y) + SRE_EPS)) ** 2)),
        mae=float(np.mean(np.abs(err))),
    )


def build_model(config, dtype=np.float64):
    if isinstance(config, MlpConfig):
        return MlpModel(config, dtype=dtype)
    if isinstance(config, ModelConfig):
        return MpnnModel(config, dtype=dtype)
    raise TypeError(f"no model for config type {type(config).__name__}")


def frozen(params):
    """Constant copies of the parameters; forward passes on them build no backward closures."""
    return {name: ad.Tensor(p.data) for name, p in params.items()}


def predict_prepared(model, prepared, batch_size=256):
    """Normalized-unit predictions for already prepared inputs."""
    if not prepared:
        return np.zeros(0)
    params = frozen(model.params)
    out = []
    for start in range(0, len(prepared), batch_size):
        out.append(model.forward(prepared[start:start + batch_size], params).data.reshape(-1))
    return np.concatenate(out).astype(np.float64)


def predict_samples(model, samples, batch_size=256, raw=False):
    preds = predict_prepared(model, model.prepare(samples), batch_size)
    if raw:
        return preds * model.label_std + model.label_mean
    return preds


def _targets(samples):
    if any(s.label_norm is None for s in samples):
        raise NormalizerError("samples carry no normalized labels; run normalize_labels first")
    return np.array([s.label_norm for s in samples], dtype=np.float64)


def evaluate(model, manifest: DatasetManifest, split="test") -> Metrics:
    samples = manifest.subset(split) if split != "all" else list(manifest.samples)
    if not samples:
        raise SplitInfeasibleError(f"split {split!r} is empty")
    return compute_metrics(_targets(samples), predict_samples(model, samples))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)


def cast_params(model, precision):
    dtype = np.dtype(precision)
    if model.dtype != dtype:
        model.params = {name: ad.Parameter(p.data.astype(dtype), name=name) for name, p in model.params.items()}
    return model


def _chunk_loss_and_grads(model, prepared, targets, scale):
    pred = model.forward(prepared)
    diff = ad.sub(pred, ad.as_tensor(targets.reshape(-1, 1).astype(pred.dtype)))
    loss = ad.mul(ad.sum_all(ad.mul(diff, diff)), scale)
    by_param = ad.backward(loss)
    return loss.item(), {p.name: g for p, g in by_param.items()}


def batch_gradients(model, prepared, targets, threads=1, pool=None):
    """Mean squared error of one minibatch and its gradients, summed over chunks in chunk order."""
    n = len(prepared)
    scale = 1.0 / n
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    chunks = [(prepared[a:b], targets[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    if pool is not None and len(chunks) > 1:
        results = list(pool.map(lambda c: _chunk_loss_and_grads(model, c[0], c[1], scale), chunks))
    else:
        results = [_chunk_loss_and_grads(model, p, t, scale) for p, t in chunks]

    loss = 0.0
    grads = {}
    for chunk_loss, chunk_grads in results:
        loss += chunk_loss
        for name, g in chunk_grads.items():
            grads[name] = grads[name] + g if name in grads else g
    return loss, grads


def train(model, manifest: DatasetManifest, config: TrainConfig, log_path=None) -> TrainResult:
    """
    Minimize MSE on normalized labels over the train split with Adam.

    Validation RMSE is tracked every epoch; the parameters of the best epoch
    are restored at the end. With no validation samples, training loss takes
    its place.
    """
    train_samples = manifest.subset("train")
    val_samples = manifest.subset("val")
    if not train_samples:
        raise SplitInfeasibleError("no training samples")
    if manifest.label_mean is None or manifest.label_std is None:
        raise NormalizerError("manifest labels are not normalized; run normalize_labels first")

    cast_params(model, config.precision)
    model.label_mean = manifest.label_mean
    model.label_std = manifest.label_std
    model.fit_normalizer(train_samples)

    prepared_train = model.prepare(train_samples)
    y_train = _targets(train_samples)
    prepared_val = model.prepare(val_samples)
    y_val = _targets(val_samples) if val_samples else None

    optimizer = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps)
    order_rng = seeded_rng(config.seed, "train", "shuffle")
    best = {"score": np.inf, "epoch": 0, "params": {k: p.data.copy() for k, p in model.params.items()}}
    history = []
    every = max(1, config.epochs // 10)
    log_file = None
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")

    logger.info(f"Training {model.describe()} on {len(train_samples)} samples ({len(val_samples)} validation)")
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    stopped_early = False
    try:
        for epoch in tqdm(range(1, config.epochs + 1), desc="Training", disable=not config.progress):
            perm = order_rng.permutation(len(prepared_train))
            total = 0.0
            for start in range(0, len(perm), config.batch_size):
                idx = perm[start:start + config.batch_size]
                loss, grads = batch_gradients(model, [prepared_train[i] for i in idx], y_train[idx], config.threads, pool)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"training loss became {loss} at epoch {epoch}", epoch)
                total += loss * len(idx)
                optimizer.step(grads)

            record = {"epoch": epoch, "train_loss": total / len(perm)}
            if y_val is not None:
                val = compute_metrics(y_val, predict_prepared(model, prepared_val))
                record.update(val_rmse=val.rmse, val_mae=val.mae, val_r2=val.r2)
                score = val.rmse
            else:
                score = record["train_loss"]
            if not np.isfinite(score):
                raise TrainingDivergedError(f"validation error became {score} at epoch {epoch}", epoch)

            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")

            if score < best["score"]:
                best = {"score": score, "epoch": epoch, "params": {k: p.data.copy() for k, p in model.params.items()}}

            if epoch % every == 0:
                logger.info(f"epoch {epoch}: train_loss={record['train_loss']:.4e} "
                            + (f"val_rmse={record['val_rmse']:.4e}" if y_val is not None else ""))
            else:
                logger.debug(f"epoch {epoch}: {record}")

            if epoch - best["epoch"] >= config.patience:
                logger.info(f"Early stop at epoch {epoch}; best epoch {best['epoch']} ({best['score']:.4e})")
                stopped_early = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
        if log_file:
            log_file.close()

    for name, p in model.params.items():
        p.data = best["params"][name]
    return TrainResult(model, history, best["epoch"], stopped_early)
