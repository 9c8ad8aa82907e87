# dgnn/utils/config.py
import copy
import os
from pathlib import Path

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from dgnn.core.settings import CliConfig
from dgnn.errors import ConfigError
from dgnn.utils.logging_colors import logger

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "data" / "defaults.yaml"
LIBRARY_PATH = Path(__file__).resolve().parent.parent / "data" / "library"
COMPARISON_PATH = Path(__file__).resolve().parent.parent / "data" / "comparison.yaml"
SECTIONS = ("model", "mlp", "train", "outliers")
DEFAULTS = {
    "model": {"hidden": 64, "steps": 3, "net_width": 128, "readout": "gated_sum", "strategy": "GN"},
    "mlp": {"hidden_layers": [512, 128], "nbits": 1024, "radius": 3},
    "train": {"epochs": 300, "batch_size": 32, "lr": 1e-3, "patience": 50},
    "outliers": {"k": 6.0, "max_iters": 3},
}


def load_defaults():
    try:
        with open(DEFAULTS_PATH, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
    except Exception as e:
        logger.warning(f"Failed to load {DEFAULTS_PATH}: {e}; using built-in defaults")
        return copy.deepcopy(DEFAULTS)

    return {s: dict(config.get(s) or DEFAULTS[s]) for s in SECTIONS}


def _parse_key_value(text, path):
    data = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = yaml.safe_load(value) if value else None
    return data


def read_config_file(path):
    """Read a YAML or key=value config file into a flat or sectioned dict."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError:
        data = None

    if not isinstance(data, dict):
        data = _parse_key_value(text, path)

    return data


def merge_overrides(base, overrides):
    """
    Fold overrides into the sectioned mapping base.

    Keys may be sections ({"train": {...}}), dotted ("train.lr") or bare
    ("lr"); bare keys go to every section that already defines them.
    """
    merged = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in SECTIONS and isinstance(value, dict):
            merged.setdefault(key, {}).update(value)
        elif "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            merged.setdefault(section, {})[name] = value
        else:
            targets = [s for s in SECTIONS if key in merged.get(s, {})]
            if not targets:
                targets = ["model"] if key in ("strategy", "readout", "hidden", "steps") else ["train"]
            for s in targets:
                merged.setdefault(s, {})[key] = value
    return merged


def resolve_threads(threads=None):
    """--threads wins, then DGNN_THREADS (optionally from .env), then 1."""
    if threads:
        return int(threads)

    load_dotenv(dotenv_path=Path.cwd() / ".env")
    env = os.environ.get("DGNN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DGNN_THREADS must be an integer, got {env!r}")
    return 1


def build_cli_config(subcommand, config_file=None, flags=None, seed=None, threads=None, paths=None):
    """Defaults < config file < explicit flags. One seed drives every section."""
    sections = load_defaults()
    file_data = read_config_file(config_file) if config_file else {}
    if seed is None:
        seed = int(file_data.get("seed", 0))
    if threads is None:
        threads = file_data.get("threads")
    file_data = {k: v for k, v in file_data.items() if k not in ("seed", "threads")}

    sections = merge_overrides(sections, file_data)
    sections = merge_overrides(sections, flags)

    for name in ("model", "mlp", "train"):
        sections[name]["seed"] = seed
    sections["train"]["threads"] = resolve_threads(threads)

    try:
        return CliConfig(
            subcommand=subcommand,
            paths=paths or {},
            seed=seed,
            threads=sections["train"]["threads"],
            **sections,
        )
    except ValidationError as e:
        raise ConfigError(str(e).replace("\n", "; "))
