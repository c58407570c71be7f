"""
Functions for reading and writing matrices, traces and reports.
"""

import os
from typing import Dict, List, TextIO

import numpy as np
import pandas as pd
import yaml

from .models import DescentTrace, ValidationError

FLOAT_FORMAT = "%.12g"
TRACE_COLUMNS = ["p", "q", "t", "z_in", "z_out", "step_norm"]


def format_number(x: float) -> str:
    return FLOAT_FORMAT % x


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def read_matrix_csv(path: str) -> np.ndarray:
    """Read a square matrix: d rows of d comma-separated decimals."""
    if not os.path.exists(path):
        raise ValidationError(f"matrix file not found: {path}")
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    if M.shape[0] != M.shape[1]:
        raise ValidationError(f"{path}: matrix must be square, got {M.shape}")
    return M


def write_matrix_csv(M: np.ndarray, stream: TextIO):
    np.savetxt(stream, np.asarray(M), fmt=FLOAT_FORMAT, delimiter=",")


def save_matrix_csv(M: np.ndarray, path: str):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        write_matrix_csv(M, f)


def read_histogram(path: str) -> np.ndarray:
    """A histogram file holds comma-separated (or one-per-line) masses."""
    if not os.path.exists(path):
        raise ValidationError(f"histogram file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read().replace("\n", ",")
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError as e:
        raise ValidationError(f"{path}: {e}")


def write_trace_csv(trace: DescentTrace, stream: TextIO, outer_window: int = 2):
    """
    One row per inner step. Comment lines state the outer stopping rule and the
    true criterion value at every outer point.
    """
    stream.write(f"# outer loop stops when z_out improves by less than progress_eps "
                 f"over {outer_window} rounds\n")
    for record in trace.outer:
        stream.write(f"# outer p={record.p} C_k={format_number(record.value)}\n")
    frame = pd.DataFrame(trace.to_rows(), columns=TRACE_COLUMNS + ["residual"])[TRACE_COLUMNS]
    frame.to_csv(stream, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def save_trace_csv(trace: DescentTrace, path: str, outer_window: int = 2):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        write_trace_csv(trace, f, outer_window)


def report_frame(rows: List[Dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["task", "distance", "kappa", "recall", "error"])


def average_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean recall and error over tasks, in first-seen distance order."""
    order = list(dict.fromkeys(frame["distance"]))
    grouped = frame.groupby(["distance", "kappa"], sort=False)[["recall", "error"]].mean().reset_index()
    grouped["distance"] = pd.Categorical(grouped["distance"], categories=order, ordered=True)
    return grouped.sort_values(["distance", "kappa"]).reset_index(drop=True).astype({"distance": str})


def write_frame_csv(frame: pd.DataFrame, stream: TextIO):
    frame.to_csv(stream, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def save_frame_csv(frame: pd.DataFrame, path: str):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        write_frame_csv(frame, f)


def save_manifest(manifest: Dict, path: str):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
