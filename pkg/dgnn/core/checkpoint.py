"""
JSON checkpoint container shared by the MPNN and the fingerprint MLP.

Floats are written with Python's shortest round-trip repr, so float64 values
reload bit-exactly.
"""
import json
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from dgnn.core import autodiff as ad
from dgnn.core.molgraph import Normalizer
from dgnn.errors import CheckpointError
from dgnn.utils.logging_colors import logger

FORMAT = "dgnn-checkpoint"
VERSION = 1
KINDS = ("mpnn", "mlp")


def params_to_json(params):
    return {
        name: {"shape": list(p.shape), "dtype": str(p.dtype), "data": p.data.reshape(-1).tolist()}
        for name, p in params.items()
    }


def params_from_json(obj):
    params = {}
    for name, entry in obj.items():
        try:
            arr = np.asarray(entry["data"], dtype=entry.get("dtype", "float64")).reshape(entry["shape"])
        except (KeyError, ValueError, TypeError) as e:
            raise CheckpointError(f"parameter {name}: {e}")
        params[name] = ad.Parameter(arr, name=name)
    return params


def save_checkpoint(path, model):
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "config": model.config_dict(),
        "params": params_to_json(model.params),
        "normalizer": model.normalizer.to_dict() if getattr(model, "normalizer", None) is not None else None,
        "label_mean": model.label_mean,
        "label_std": model.label_std,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
        f.write("\n")
    logger.info(f"Saved {model.kind} checkpoint to {path}")


def read_checkpoint(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a dgnn checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    if payload.get("kind") not in KINDS:
        raise CheckpointError(f"{path}: unknown model kind {payload.get('kind')!r}")
    return payload


def load_checkpoint(path):
    """Rebuild an MpnnModel or MlpModel from disk."""
    from dgnn.core.baseline import MlpModel
    from dgnn.core.mpnn import MpnnModel, check_params
    from dgnn.core.settings import MlpConfig, ModelConfig

    payload = read_checkpoint(path)
    try:
        params = params_from_json(payload["params"])
        normalizer = Normalizer.from_dict(payload["normalizer"]) if payload.get("normalizer") else None
        config_cls = ModelConfig if payload["kind"] == "mpnn" else MlpConfig
        config = config_cls(**payload["config"])
        label_mean, label_std = payload["label_mean"], payload["label_std"]
    except KeyError as e:
        raise CheckpointError(f"{path}: missing field {e}")
    except (ValidationError, TypeError, AttributeError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e}")

    if payload["kind"] == "mpnn":
        check_params(config, params)
        return MpnnModel(config, params, normalizer, label_mean, label_std)
    return MlpModel(config, params, label_mean, label_std)
