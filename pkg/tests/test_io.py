import json

import numpy as np
import pytest

from fsvd.core import DataTensor
from fsvd.io import (
    ConfigError,
    DataError,
    fmt,
    load_dataset,
    parse_config_text,
    read_config,
    read_long_csv,
    read_surface,
    write_long_csv,
    write_surface,
)
from fsvd.quadrature import Grid


def _toy(n=3, m=4, r=5, seed=0):
    rng = np.random.default_rng(seed)
    return DataTensor(Grid.uniform(m, 0, 3), Grid.uniform(r, 10, 14), rng.random((n, m, r)), tuple(f"c{i}" for i in range(n)))


def test_long_csv_round_trip(tmp_path):
    d = _toy()
    write_long_csv(tmp_path / "x.csv", d)
    back = read_long_csv(tmp_path / "x.csv")
    assert back.subjects == d.subjects
    assert np.array_equal(back.values, d.values)
    assert back.s_grid == d.s_grid and back.t_grid == d.t_grid


def test_row_order_is_irrelevant(tmp_path):
    d = _toy()
    write_long_csv(tmp_path / "x.csv", d)
    lines = (tmp_path / "x.csv").read_text().splitlines()
    body = lines[1:]
    # keep subject first-appearance order, shuffle cells within
    shuffled = [lines[0]] + sorted(body, key=lambda l: (l.split(",")[0], l.split(",")[3]))
    (tmp_path / "y.csv").write_text("\n".join(shuffled) + "\n")
    assert np.array_equal(read_long_csv(tmp_path / "y.csv").values, d.values)


@pytest.mark.parametrize(
    "text, match",
    [
        ("a,b,c,d\n", "header"),
        ("subject,s,t,value\nA,0,0,1\nA,0,1,x\n", ":3"),
        ("subject,s,t,value\nA,0,0,1\nA,0,0,2\n", "duplicate"),
        ("subject,s,t,value\nA,0,0,1\nA,0,1,2\nA,1,0,3\nA,1,1,4\nB,0,0,1\n", "cells"),
        ("subject,s,t,value\nA,0,0,1\nA,0,1,nan\n", "non-finite"),
        ("subject,s,t,value\n", "no data"),
    ],
)
def test_long_csv_errors(tmp_path, text, match):
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(DataError, match=match):
        read_long_csv(tmp_path / "bad.csv")


def _manifest(tmp_path, d):
    subjects = []
    for i, sid in enumerate(d.subjects):
        rows = ["s," + ",".join(repr(float(t)) for t in d.t_grid.points)]
        for j, s in enumerate(d.s_grid.points):
            rows.append(repr(float(s)) + "," + ",".join(repr(float(x)) for x in d.values[i, j]))
        (tmp_path / f"{sid}.csv").write_text("\n".join(rows) + "\n")
        subjects.append({"id": sid, "path": f"{sid}.csv"})
    spec = {"s_grid": d.s_grid.points.tolist(), "t_grid": d.t_grid.points.tolist(), "subjects": subjects}
    (tmp_path / "data.json").write_text(json.dumps(spec))
    return tmp_path / "data.json"


def test_manifest_matches_long(tmp_path):
    d = _toy()
    back = load_dataset(_manifest(tmp_path, d))
    assert back.subjects == d.subjects and np.array_equal(back.values, d.values)


def test_manifest_grid_mismatch(tmp_path):
    d = _toy()
    path = _manifest(tmp_path, d)
    spec = json.loads(path.read_text())
    spec["t_grid"][1] += 0.5
    path.write_text(json.dumps(spec))
    with pytest.raises(DataError, match="t grid"):
        load_dataset(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "nope.csv")


def test_surface_round_trip(tmp_path):
    s, t = np.array([0.0, 0.5, 1.0]), np.array([2.0, 3.0])
    vals = np.array([[1.5, -2.0], [0.0, 1e-7], [3.25, 4.0]])
    write_surface(tmp_path / "f.csv", s, t, vals)
    s2, t2, v2 = read_surface(tmp_path / "f.csv")
    assert np.array_equal(s2, s) and np.array_equal(t2, t) and np.allclose(v2, vals, rtol=1e-12)
    assert b"\r" not in (tmp_path / "f.csv").read_bytes()


def test_fmt():
    assert fmt(0.0) == "0"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(2) == "2"


def test_config_parsing(tmp_path):
    cfg = parse_config_text("# comment\np = cv\nmax-knots = 4  # inline\nallow_repeats = no\n")
    assert cfg == {"p": "cv", "max_knots": 4, "allow_repeats": False}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("colour = red\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("p = 2\nnot a pair\n")
    with pytest.raises(ConfigError, match="invalid value"):
        parse_config_text("order = four\n")
    with pytest.raises(ConfigError):
        read_config(tmp_path / "none.cfg")
