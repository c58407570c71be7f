"""
Dataset ingestion and the planted-block synthetic generator.
"""

import json
import logging
import os
from typing import Optional

import numpy as np

from .models import LabeledDataset, SynthConfig, ValidationError

logger = logging.getLogger(__name__)

RENORMALIZE_TOL = 1e-6


def _normalize_rows(X: np.ndarray, source: str) -> np.ndarray:
    """Renormalize rows whose mass is within 1e-6 of 1, reject the others."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValidationError(f"{source}: histograms must form a table with at least 2 bins")
    if np.any(~np.isfinite(X)) or np.any(X < 0):
        raise ValidationError(f"{source}: histograms must be finite and nonnegative")
    sums = X.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > RENORMALIZE_TOL)
    if bad.size:
        raise ValidationError(f"{source}: row {bad[0]} sums to {sums[bad[0]]:.9g}, expected 1")
    return X / sums[:, None]


def stratified_split(labels, n_train_per_class: int, seed: int) -> np.ndarray:
    """Boolean train mask holding n_train_per_class random points of every class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    is_train = np.zeros(len(labels), dtype=bool)
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) <= n_train_per_class:
            raise ValidationError(f"class {label} has {len(members)} points, "
                                  f"need more than {n_train_per_class} to split")
        is_train[rng.choice(members, size=n_train_per_class, replace=False)] = True
    return is_train


def load_dataset(path: str) -> LabeledDataset:
    """
    Read a dataset from JSON ({"d", "histograms", "labels", optional "split"})
    or CSV (one histogram per row, integer label in the last column).
    """
    if not os.path.exists(path):
        raise ValidationError(f"dataset file not found: {path}")
    if path.lower().endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}: invalid JSON: {e}")
        for key in ("histograms", "labels"):
            if key not in raw:
                raise ValidationError(f"{path}: missing key {key!r}")
        X = _normalize_rows(raw["histograms"], path)
        if "d" in raw and int(raw["d"]) != X.shape[1]:
            raise ValidationError(f"{path}: declared d={raw['d']} but histograms have {X.shape[1]} bins")
        labels = np.asarray(raw["labels"], dtype=np.int64)
        split = raw.get("split")
        is_train = (np.ones(len(labels), dtype=bool) if split is None
                    else np.array([s == "train" for s in split]))
    else:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
        X = _normalize_rows(table[:, :-1], path)
        labels = table[:, -1].astype(np.int64)
        is_train = np.ones(len(labels), dtype=bool)
    logger.info(f"Loaded {len(labels)} histograms of dimension {X.shape[1]} from {path}")
    return LabeledDataset(histograms=X, labels=labels, is_train=is_train)


def save_dataset(data: LabeledDataset, path: str):
    """Write a dataset as JSON with repr-exact floats."""
    payload = {
        "d": data.dim,
        "histograms": data.histograms.tolist(),
        "labels": data.labels.tolist(),
        "split": ["train" if t else "test" for t in data.is_train],
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def resplit(data: LabeledDataset, n_train_per_class: int, seed: int) -> LabeledDataset:
    return LabeledDataset(histograms=data.histograms, labels=data.labels,
                          is_train=stratified_split(data.labels, n_train_per_class, seed))


def _block_templates(cfg: SynthConfig):
    # shared by every class: geometric profile inside each block
    return [0.5 ** np.arange(len(block)) / np.sum(0.5 ** np.arange(len(block))) for block in cfg.blocks]


def synth_generate(cfg: Optional[SynthConfig] = None) -> LabeledDataset:
    """
    Planted-block dataset.

    Each class puts extra block mass (cross_signal) on its own blocks; inside a
    block, mass follows a shared template whose bins are shuffled by a random
    permutation mixed in with weight within_noise. A ground metric that is cheap
    inside blocks and expensive across them separates the classes best.
    """
    cfg = cfg or SynthConfig()
    problems = cfg.validate()
    if problems:
        raise ValidationError("invalid synthetic config: " + "; ".join(problems))
    rng = np.random.default_rng(cfg.seed)
    templates = _block_templates(cfg)
    n_blocks = len(cfg.blocks)

    profiles = []
    for label in range(cfg.n_classes):
        own = np.array([b % cfg.n_classes == label for b in range(n_blocks)], dtype=np.float64)
        profile = 1.0 + cfg.cross_signal * own
        profiles.append(profile / profile.sum())

    def sample(label):
        mass = profiles[label] * np.exp(0.5 * cfg.within_noise * rng.standard_normal(n_blocks))
        mass /= mass.sum()
        h = np.zeros(cfg.d)
        for b, block in enumerate(cfg.blocks):
            template = templates[b]
            shuffled = template[rng.permutation(len(block))]
            h[block] = mass[b] * ((1.0 - cfg.within_noise) * template + cfg.within_noise * shuffled)
        return h / h.sum()

    histograms, labels, is_train = [], [], []
    for count, train_flag in ((cfg.n_train_per_class, True), (cfg.n_test_per_class, False)):
        for label in range(cfg.n_classes):
            for _ in range(count):
                histograms.append(sample(label))
                labels.append(label)
                is_train.append(train_flag)
    return LabeledDataset(histograms=np.array(histograms), labels=np.array(labels),
                          is_train=np.array(is_train))
