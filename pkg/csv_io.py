import csv
import json
import math
import os
from typing import Dict, Iterable, List, Sequence

import numpy as np

from imitation import TrajectoryDataset

# experiment records written by `run` and read back by `plot`
RECORD_COLUMNS = ["env", "algorithm", "seed", "expert_queries", "nash_gap", "wall_ms"]
REQUIRED_COLUMNS = ["env", "algorithm", "seed", "expert_queries", "nash_gap"]

DATASET_COLUMNS = ["h", "s", "a", "b"]
COVERAGE_COLUMNS = ["env", "player", "stage", "state", "max_visitation", "ratio", "bound", "ok"]
FORMULA_COLUMNS = ["check", "passed", "detail"]


def format_value(value: object) -> object:
    """Floats keep repr precision; infinities become "inf"."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_rows(path: str, fieldnames: Sequence[str], rows: Iterable[Dict[str, object]]) -> None:
    """Write dict rows with a fixed header; UTF-8 and LF line endings."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(row[k]) for k in fieldnames})


def write_records(path: str, records: Iterable[Dict[str, object]]) -> None:
    write_rows(path, RECORD_COLUMNS, records)


def read_records(path: str) -> List[Dict[str, object]]:
    """Read an experiment records CSV.

    Args:
        path: CSV with at least the REQUIRED_COLUMNS header.

    Returns:
        List of dicts with typed values (seed and expert_queries int, nash_gap float).

    Raises:
        FileNotFoundError: if the file does not exist.
        KeyError: if required columns are missing.
        ValueError: if a value cannot be parsed.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Records file not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        headers = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in headers]
        if missing:
            raise KeyError(f"CSV missing required columns: {missing}")
        for i, row in enumerate(reader, start=1):
            try:
                rows.append({
                    "env": row["env"],
                    "algorithm": row["algorithm"],
                    "seed": int(row["seed"]),
                    "expert_queries": int(row["expert_queries"]),
                    "nash_gap": float(row["nash_gap"]),
                    "wall_ms": float(row.get("wall_ms") or 0.0),
                })
            except (TypeError, ValueError) as exc:
                raise ValueError(f"Row {i} of {path} is malformed: {exc}") from None
    return rows


def sidecar_path(path: str) -> str:
    return os.path.splitext(path)[0] + ".json"


def save_dataset(dataset: TrajectoryDataset, path: str) -> None:
    """Write h,s,a,b records plus a JSON sidecar with the seed and query counters."""
    rows = ({"h": h, "s": s, "a": a, "b": b} for h, s, a, b in zip(dataset.h, dataset.s, dataset.a, dataset.b))
    write_rows(path, DATASET_COLUMNS, rows)
    meta = {"seed": dataset.rng_seed, "queries_p1": dataset.queries_p1, "queries_p2": dataset.queries_p2,
            "horizon": dataset.horizon}
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str) -> TrajectoryDataset:
    """Read a dataset CSV and its sidecar.

    Raises:
        FileNotFoundError: if the CSV or the sidecar is missing.
        KeyError: if columns or sidecar keys are missing.
    """
    meta_path = sidecar_path(path)
    for p in (path, meta_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"Dataset file not found: {p}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("queries_p1", "queries_p2", "horizon"):
        if key not in meta:
            raise KeyError(f"Missing {key} in {meta_path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in DATASET_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise KeyError(f"CSV missing required columns: {missing}")
        cols = {c: [] for c in DATASET_COLUMNS}
        for row in reader:
            for c in DATASET_COLUMNS:
                cols[c].append(int(row[c]))
    return TrajectoryDataset(np.array(cols["h"], dtype=np.int64), np.array(cols["s"], dtype=np.int64),
                             np.array(cols["a"], dtype=np.int64), np.array(cols["b"], dtype=np.int64),
                             int(meta["horizon"]), int(meta["queries_p1"]), int(meta["queries_p2"]),
                             meta.get("seed"))
