"""
Configuration handling for experiments and the command line.
"""

import math
import os
from dataclasses import fields
from typing import Any, Dict, List, Optional

import yaml

from .evaluation import BASELINES, KAPPA_GRID
from .models import ALL, GmlParams, SynthConfig, ValidationError

EMD_DISTANCES = ("emd_uniform", "emd_independence", "emd_typical")
DISTANCES = BASELINES + EMD_DISTANCES + ("gml",)

DEFAULT_CONFIG: Dict[str, Any] = {
    "seeds": [0],
    "distances": list(DISTANCES),
    "kappa": list(KAPPA_GRID),
    "workers": 1,
    "output": "gml_output",
    "dataset": {"source": "synthetic"},
    "gml": {},
}


def parse_k(value) -> float:
    """Neighbourhood size from config or CLI: an integer, or 'all' / 'inf'."""
    if isinstance(value, str) and value.strip().lower() in ("all", "inf", "infinity"):
        return ALL
    try:
        k = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"invalid neighbourhood size {value!r}")
    if math.isinf(k):
        return ALL
    if k < 1 or k != int(k):
        raise ValidationError(f"neighbourhood size must be a positive integer or 'all', got {value!r}")
    return int(k)


def load_config(config_file: Optional[str] = None) -> Dict[str, Any]:
    """
    Load an experiment configuration from a YAML file, filled with defaults.

    Args:
        config_file: Optional path to YAML config file

    Returns:
        Dictionary with configuration
    """
    config = {key: (dict(value) if isinstance(value, dict) else value)
              for key, value in DEFAULT_CONFIG.items()}
    if not config_file:
        return config
    if not os.path.exists(config_file):
        raise ValidationError(f"config file not found: {config_file}")
    with open(config_file, "r", encoding="utf-8") as f:
        try:
            file_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValidationError(f"error parsing YAML config {config_file}: {e}")
    if not isinstance(file_config, dict):
        raise ValidationError(f"config {config_file} must be a mapping of keys to values")
    for key, value in file_config.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    return config


def validate_config(config: Dict[str, Any]) -> List[str]:
    """
    Validate an experiment configuration.

    Args:
        config: Configuration dictionary

    Returns:
        List of problems, empty when the configuration is valid
    """
    problems = []
    unknown = [d for d in config.get("distances", []) if d not in DISTANCES]
    if unknown:
        problems.append(f"unknown distances {unknown}, expected a subset of {list(DISTANCES)}")
    if not config.get("distances"):
        problems.append("at least one distance is required")
    seeds = config.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        problems.append("seeds must be a non-empty list of integers")
    kappa = config.get("kappa")
    if not isinstance(kappa, list) or not kappa or not all(isinstance(x, int) and x >= 1 for x in kappa):
        problems.append("kappa must be a non-empty list of positive integers")
    if not isinstance(config.get("workers"), int) or config["workers"] < 1:
        problems.append("workers must be a positive integer")

    dataset = config.get("dataset") or {}
    source = dataset.get("source", "synthetic")
    if source == "file":
        if not dataset.get("path"):
            problems.append("dataset.path is required when dataset.source is 'file'")
    elif source == "synthetic":
        try:
            problems.extend(build_synth_config(dataset, seed=0).validate())
        except (ValidationError, TypeError) as e:
            problems.append(str(e))
    else:
        problems.append(f"dataset.source must be 'synthetic' or 'file', got {source!r}")

    try:
        for k in gml_ks(config):
            build_params(config.get("gml") or {}, k=k)
    except (ValidationError, TypeError) as e:
        problems.append(f"gml: {e}")
    return problems


def gml_ks(config: Dict[str, Any]) -> List[float]:
    """The list of neighbourhood sizes to learn metrics for."""
    value = (config.get("gml") or {}).get("k", 3)
    values = value if isinstance(value, list) else [value]
    return [parse_k(v) for v in values]


def build_params(section: Dict[str, Any], **overrides) -> GmlParams:
    """GmlParams from a config section, explicit overrides winning."""
    names = {f.name for f in fields(GmlParams)}
    unknown = set(section) - names
    if unknown:
        raise ValidationError(f"unknown gml keys {sorted(unknown)}")
    values = {key: value for key, value in section.items()}
    values.update({key: value for key, value in overrides.items() if value is not None})
    for key in ("k", "init_k"):
        if key in values:
            values[key] = parse_k(values[key])
    return GmlParams(**values)


def build_synth_config(section: Dict[str, Any], seed: Optional[int] = None) -> SynthConfig:
    """SynthConfig from the dataset section; the task seed replaces any configured seed."""
    names = {f.name for f in fields(SynthConfig)}
    values = {key: value for key, value in section.items() if key in names}
    if seed is not None:
        values["seed"] = seed
    return SynthConfig(**values)
