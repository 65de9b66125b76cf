"""
Artifacts Module
================

CSV and JSON files written by the command line. CSVs go through pandas with
a fixed float format; JSON is key-sorted so identical runs give identical
bytes.
"""

import json
import logging
import math
import os
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .dae_core import Trajectory
from .error_handler import FileLoadError, validate_file_path

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


def _prepare(path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)


def _plain(value):
    # numpy scalars/arrays and non-finite floats to JSON-safe values
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, complex):
        return {"real": _plain(value.real), "imag": _plain(value.imag)}
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_json(data: Dict, path: str) -> str:
    """Write ``data`` with sorted keys and two-space indent."""
    _prepare(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_plain(data), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"[SUCCESS] Saved: {path}")
    return path


def read_json(path: str) -> Dict:
    validate_file_path(path)
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_table(frame: pd.DataFrame, path: str) -> str:
    """Write a DataFrame as CSV without the index."""
    _prepare(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"[SUCCESS] Saved: {path} ({len(frame)} rows)")
    return path


def write_trajectory(trajectory: Trajectory, path: str, metadata_path: Optional[str] = None) -> str:
    """
    Trajectory CSV ``time,<state names>`` plus an optional metadata JSON
    holding solver settings, events and warnings.
    """
    write_table(trajectory.to_frame(), path)
    if metadata_path:
        write_json({**trajectory.metadata, "events": trajectory.events,
                    "rows": int(len(trajectory.times))}, metadata_path)
    return path


def read_trajectory_csv(path: str, metadata_path: Optional[str] = None) -> Trajectory:
    """
    Load a trajectory in the ``time,<state names>`` schema, e.g. an EPANET
    export converted to the same columns.

    Raises:
        FileLoadError: If the file is missing or has no ``time`` column
    """
    validate_file_path(path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FileLoadError(path, str(e))
    if "time" not in frame.columns:
        raise FileLoadError(path, "missing 'time' column")
    if not frame["time"].is_monotonic_increasing:
        raise FileLoadError(path, "'time' column must be increasing")
    metadata = read_json(metadata_path) if metadata_path else None
    trajectory = Trajectory.from_frame(frame, metadata)
    if metadata and "events" in metadata:
        trajectory.events = list(metadata["events"])
    return trajectory


def matrix_frame(matrix: np.ndarray, rows, columns) -> pd.DataFrame:
    """Dense matrix with labelled rows, for linear-model dumps."""
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(columns))
    frame.insert(0, "row", list(rows))
    return frame


def spectrum_frame(values: np.ndarray) -> pd.DataFrame:
    values = np.asarray(values, dtype=complex)
    return pd.DataFrame({"re": values.real, "im": values.imag})
