"""CSV and JSON artifacts, confined to an output directory."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import GGMoranError


class OutputError(GGMoranError):
    exit_code = 4


def resolve_output(out_dir: str | os.PathLike, name: str) -> Path:
    """``out_dir / name``, refusing anything that escapes ``out_dir``."""
    root = Path(out_dir).resolve()
    target = (root / name).resolve()
    if root != target and root not in target.parents:
        raise OutputError(f"refusing to write {name!r} outside {root}")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    return target


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def to_json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True)


def write_json(out_dir, name: str, obj) -> Path:
    path = resolve_output(out_dir, name)
    try:
        path.write_text(to_json_text(obj) + "\n")
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    return path


def write_csv(out_dir, name: str, header, rows) -> Path:
    path = resolve_output(out_dir, name)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_plain(v) for v in row])
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    return header, data.reshape(-1, len(header))


def long_rows(times, values):
    """Rows ``(replicate, time, value)`` from a ``(len(times), replicates)`` array."""
    values = np.asarray(values)
    for r in range(values.shape[1]):
        for t, v in zip(times, values[:, r]):
            yield r, t, v
