"""Reading datasets and run configurations, writing result files.

Two dataset layouts are accepted:

* a long CSV with header ``subject,s,t,value`` and one row per grid cell
  and subject;
* a JSON manifest ``{"s_grid": [...], "t_grid": [...], "subjects":
  [{"id": ..., "path": ...}, ...]}`` pointing at one matrix CSV per subject.
  A matrix CSV has the header ``s,<t_1>,...,<t_r>`` and one row per s value,
  starting with that value.

All numbers are written with 12 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .core import DataTensor
from .quadrature import Grid, InvalidGridError

LONG_HEADER = ["subject", "s", "t", "value"]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Unknown or invalid configuration keys."""


def fmt(x) -> str:
    x = float(x)
    if x == 0:
        return "0"
    return format(x, ".12g")


def _float(text: str, where: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(val):
        raise DataError(f"{where}: non-finite value {text!r}")
    return val


def read_long_csv(path) -> DataTensor:
    """Parse a long-format dataset; subjects keep their first-appearance order."""
    path = Path(path)
    cells = {}
    subjects = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != LONG_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(LONG_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != 4:
                raise DataError(f"{where}: expected 4 fields, got {len(row)}")
            subj = row[0].strip()
            s = _float(row[1], where)
            t = _float(row[2], where)
            val = _float(row[3], where)
            if subj not in cells:
                cells[subj] = {}
                subjects.append(subj)
            if (s, t) in cells[subj]:
                raise DataError(f"{where}: duplicate cell (s={s}, t={t}) for subject {subj!r}")
            cells[subj][(s, t)] = val
    if not subjects:
        raise DataError(f"{path}: no data rows")
    s_vals = sorted({s for c in cells.values() for s, _ in c})
    t_vals = sorted({t for c in cells.values() for _, t in c})
    m, r = len(s_vals), len(t_vals)
    values = np.empty((len(subjects), m, r))
    for i, subj in enumerate(subjects):
        c = cells[subj]
        if len(c) != m * r:
            raise DataError(
                f"subject {subj!r} has {len(c)} cells; the grid needs {m}x{r}={m * r}"
            )
        for j, s in enumerate(s_vals):
            for k, t in enumerate(t_vals):
                try:
                    values[i, j, k] = c[(s, t)]
                except KeyError:
                    raise DataError(
                        f"subject {subj!r} is missing cell (s={s}, t={t})"
                    ) from None
    try:
        return DataTensor(Grid(s_vals), Grid(t_vals), values, tuple(subjects))
    except InvalidGridError as exc:
        raise DataError(str(exc)) from exc


def read_matrix_csv(path, s_grid, t_grid, subject: str) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty matrix file for subject {subject!r}")
    header = rows[0]
    t_file = [_float(h, f"{path}:1") for h in header[1:]]
    if len(t_file) != len(t_grid) or not np.allclose(t_file, t_grid, rtol=0, atol=1e-12):
        raise DataError(f"subject {subject!r}: t grid in {path} differs from the manifest")
    if len(rows) - 1 != len(s_grid):
        raise DataError(
            f"subject {subject!r}: {len(rows) - 1} rows in {path}, manifest has {len(s_grid)} s values"
        )
    out = np.empty((len(s_grid), len(t_grid)))
    for j, row in enumerate(rows[1:]):
        where = f"{path}:{j + 2}"
        if len(row) != len(t_grid) + 1:
            raise DataError(f"{where}: expected {len(t_grid) + 1} fields, got {len(row)}")
        s = _float(row[0], where)
        if abs(s - s_grid[j]) > 1e-12:
            raise DataError(f"subject {subject!r}: {where} has s={s}, manifest expects {s_grid[j]}")
        out[j] = [_float(c, where) for c in row[1:]]
    return out


def read_manifest(path) -> DataTensor:
    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    for key in ("s_grid", "t_grid", "subjects"):
        if key not in spec:
            raise DataError(f"{path}: manifest lacks {key!r}")
    s_grid = [float(x) for x in spec["s_grid"]]
    t_grid = [float(x) for x in spec["t_grid"]]
    ids, mats = [], []
    for entry in spec["subjects"]:
        sid = str(entry["id"])
        mats.append(read_matrix_csv(path.parent / entry["path"], s_grid, t_grid, sid))
        ids.append(sid)
    if not ids:
        raise DataError(f"{path}: manifest lists no subjects")
    try:
        return DataTensor(Grid(s_grid), Grid(t_grid), np.array(mats), tuple(ids))
    except InvalidGridError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_dataset(path) -> DataTensor:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file {path} does not exist")
    if path.suffix.lower() == ".json":
        return read_manifest(path)
    return read_long_csv(path)


def write_long_csv(path, data: DataTensor):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for i, subj in enumerate(data.subjects):
            for j, s in enumerate(data.s_grid.points):
                for k, t in enumerate(data.t_grid.points):
                    w.writerow([subj, repr(float(s)), repr(float(t)), repr(float(data.values[i, j, k]))])


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(c) if isinstance(c, (float, np.floating)) else c for c in row])


def read_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [r for r in reader if r]


def write_surface(path, s, t, values):
    write_csv(
        path,
        ["s", "t", "value"],
        ((float(sj), float(tk), float(values[j, k])) for j, sj in enumerate(s) for k, tk in enumerate(t)),
    )


def read_surface(path):
    _, rows = read_csv(path)
    arr = np.array([[float(c) for c in r] for r in rows])
    s = np.unique(arr[:, 0])
    t = np.unique(arr[:, 1])
    return s, t, arr[:, 2].reshape(s.size, t.size)


# key -> parser; values arrive as strings from files or flags
RUN_KEYS = {
    "input": str,
    "out": str,
    "transform": str,
    "order": int,
    "p": str,
    "max_p": int,
    "folds": int,
    "max_knots": int,
    "rel_improvement_tol": float,
    "allow_repeats": lambda x: str(x).strip().lower() in ("1", "true", "yes", "on"),
    "seed": int,
    "mean": str,
    "sigma": float,
    "m": int,
    "n": int,
    "replicates": int,
    "protocols": lambda x: tuple(p.strip() for p in str(x).split(",") if p.strip()),
    "workers": int,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RUN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = coerce(key, val, f"{source}:{lineno}")
    return out


def coerce(key, val, where="config"):
    try:
        return RUN_KEYS[key](val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: invalid value {val!r} for {key!r}") from None


def read_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
