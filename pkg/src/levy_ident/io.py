"""File formats: trajectories and scans as CSV, reports as JSON.

All writes go through a temporary file in the target directory followed by
``os.replace``, so readers never see a partial file.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .linear_system import Trajectory

__all__ = ["atomic_write", "write_json", "dumps_json", "write_trajectory_csv", "read_trajectory_csv", "write_table_csv"]


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps_json(obj) -> str:
    # NaN/inf are not JSON; they become null
    return json.dumps(_sanitize(obj), sort_keys=True, indent=2, ensure_ascii=False, default=_default) + "\n"


def _sanitize(o):
    if isinstance(o, float) and not np.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    if isinstance(o, np.ndarray):
        return _sanitize(o.tolist())
    if isinstance(o, np.generic):
        return _sanitize(o.item())
    if hasattr(o, "to_dict"):
        return _sanitize(o.to_dict())
    if hasattr(o, "as_dict"):
        return _sanitize(o.as_dict())
    return o


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


def write_trajectory_csv(path, traj: Trajectory) -> Path:
    """One value per line under a ``# h=...,N=...`` comment and a ``dy`` header."""
    buf = io.StringIO()
    buf.write(f"# h={float(traj.h)!r},N={len(traj)}\n")
    buf.write("dy\n")
    for v in traj.dy:
        buf.write(f"{float(v)!r}\n")
    return atomic_write(path, buf.getvalue())


def read_trajectory_csv(path) -> Trajectory:
    h, n_expected = 1.0, None
    values = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split(","):
                    key, _, val = item.strip().partition("=")
                    if key == "h":
                        h = float(val)
                    elif key == "N":
                        n_expected = int(val)
                continue
            if line == "dy":
                continue
            try:
                values.append(float(line.split(",")[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    if n_expected is not None and n_expected != len(values):
        raise ValueError(f"{path}: header says N={n_expected} but {len(values)} rows were read")
    return Trajectory(np.array(values), h=h)


def write_table_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(float(x)) if not isinstance(x, str) else x for x in row) + "\n")
    return atomic_write(path, buf.getvalue())
