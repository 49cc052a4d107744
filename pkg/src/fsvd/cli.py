"""Command-line interface: ``fsvd {fit,predict,scores,simulate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from functools import partial
from pathlib import Path

import numpy as np

from .bspline import NotPSDError, SplineBasis, SplineCurve
from .core import (
    ComponentPair,
    DataTensor,
    Decomposition,
    RankError,
    cross_validate_order,
    individual_predictor,
    truncated_mean,
)
from .freeknot import KnotSearchConfig, KnotSearchError, fit_fsvd_freeknot
from .io import (
    ConfigError,
    DataError,
    coerce,
    fmt,
    load_dataset,
    read_config,
    read_csv,
    write_csv,
    write_surface,
)
from .quadrature import Grid
from .simulation import SimulationConfig, StudyError, run_study

log = logging.getLogger("fsvd")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
ROBUST_Z_CUTOFF = 3.5
PANELS = "abcdefghijklmnopqrstuvwxyz"

FIT_DEFAULTS = {
    "transform": "none",
    "order": 4,
    "p": "3",
    "max_p": 5,
    "folds": 5,
    "max_knots": 10,
    "rel_improvement_tol": 1e-3,
    "allow_repeats": True,
    "seed": 0,
    "out": "fsvd_out",
}
SIM_DEFAULTS = {
    "mean": "mu1",
    "sigma": 1.0,
    "m": 20,
    "n": 10,
    "replicates": 200,
    "seed": 0,
    "protocols": ("TPS", "SVf", "SVo"),
    "out": "fsvd_sim",
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _settings(args, defaults: dict) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in ("input", "out", "p", "order", "max_knots", "transform", "seed",
                "replicates", "protocols", "mean", "sigma", "m", "n", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = coerce(key, val, f"--{key.replace('_', '-')}")
    return cfg


# --- fit ---------------------------------------------------------------------

def _apply_transform(data: DataTensor, transform: str) -> DataTensor:
    if transform == "none":
        return data
    if transform == "log":
        if np.any(data.values <= 0):
            raise DataError("log transform needs strictly positive data")
        return DataTensor(data.s_grid, data.t_grid, np.log(data.values), data.subjects)
    raise ConfigError(f"unknown transform {transform!r}; use 'none' or 'log'")


def _curve_json(c: SplineCurve) -> dict:
    b = c.basis
    return {
        "order": b.order,
        "a": b.a,
        "b": b.b,
        "knots": [float(x) for x in b.interior_knots],
        "coef": [float(x) for x in c.coef],
    }


def _curve_from_json(d: dict) -> SplineCurve:
    return SplineCurve(SplineBasis(d["order"], d["knots"], d["a"], d["b"]), d["coef"])


def save_model(path, decomp: Decomposition):
    # the transform is not recorded: fitting log-data directly must give
    # the same bytes as fitting raw data with transform=log
    model = {
        "s_grid": [float(x) for x in decomp.s_grid.points],
        "t_grid": [float(x) for x in decomp.t_grid.points],
        "subjects": list(decomp.subjects),
        "components": [
            {
                "root_eigenvalue": c.root_eigenvalue,
                "eigenvalue": c.eigenvalue,
                "psi_eigenvalue": c.psi_eigenvalue,
                "phi": _curve_json(c.phi),
                "psi": _curve_json(c.psi),
            }
            for c in decomp.components
        ],
    }
    Path(path).write_text(json.dumps(model, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(out: Path):
    model_path = out / "model.json"
    scores_path = out / "scores.csv"
    for p in (model_path, scores_path):
        if not p.exists():
            raise DataError(f"missing fit artifact {p}; run 'fsvd fit' first")
    model = json.loads(model_path.read_text(encoding="utf-8"))
    comps = tuple(
        ComponentPair(
            _curve_from_json(c["phi"]),
            _curve_from_json(c["psi"]),
            c["root_eigenvalue"],
            c["eigenvalue"],
            c["psi_eigenvalue"],
        )
        for c in model["components"]
    )
    subjects = tuple(model["subjects"])
    W = _read_scores(scores_path, subjects, len(comps))
    return Decomposition(comps, W, Grid(model["s_grid"]), Grid(model["t_grid"]), subjects)


def _read_scores(path, subjects, p) -> np.ndarray:
    _, rows = read_csv(path)
    index = {s: i for i, s in enumerate(subjects)}
    W = np.full((len(subjects), p), np.nan)
    for subj, k, w in rows:
        W[index[subj], int(k) - 1] = float(w)
    if np.isnan(W).any():
        raise DataError(f"{path} is incomplete")
    return W


def cmd_fit(cfg: dict) -> Path:
    if "input" not in cfg:
        raise UsageError("fit needs --input (or input= in the config file)")
    out = Path(cfg["out"])
    data = _apply_transform(load_dataset(cfg["input"]), cfg["transform"])
    kcfg = KnotSearchConfig(
        max_knots=cfg["max_knots"],
        rel_improvement_tol=cfg["rel_improvement_tol"],
        allow_repeats=cfg["allow_repeats"],
    )
    order = cfg["order"]
    fitter = partial(fit_fsvd_freeknot, config=kcfg, order=order)
    p_spec = str(cfg["p"]).strip().lower()
    if p_spec == "cv":
        if data.n < 2:
            raise DataError("cross-validation needs at least 2 subjects")
        p = cross_validate_order(
            data, cfg["max_p"], min(cfg["folds"], data.n), cfg["seed"], fitter
        )
        log.info("cross-validation selected p=%d", p)
    else:
        try:
            p = int(p_spec)
        except ValueError:
            raise ConfigError(f"p must be an integer or 'cv', got {cfg['p']!r}") from None
        if p < 1:
            raise ConfigError("p must be at least 1")
    decomp = fitter(data, p)

    out.mkdir(parents=True, exist_ok=True)
    s, t = data.s_grid.points, data.t_grid.points
    rows = []
    for k, c in enumerate(decomp.components, start=1):
        rows += [(k, "phi", float(x), float(y)) for x, y in zip(s, c.phi(s))]
        rows += [(k, "psi", float(x), float(y)) for x, y in zip(t, c.psi(t))]
    write_csv(out / "components.csv", ["k", "axis", "point", "value"], rows)
    write_csv(
        out / "eigenvalues.csv",
        ["k", "root_eigenvalue", "eigenvalue"],
        [(k, float(c.root_eigenvalue), float(c.eigenvalue)) for k, c in enumerate(decomp.components, 1)],
    )
    write_csv(
        out / "scores.csv",
        ["subject", "k", "w"],
        [
            (subj, k + 1, float(decomp.scores[i, k]))
            for i, subj in enumerate(decomp.subjects)
            for k in range(p)
        ],
    )
    write_surface(out / "mu_hat_p.csv", s, t, truncated_mean(decomp, p).values)
    knots = {
        "order": order,
        "components": [
            {
                "k": k,
                "phi": [float(fmt(x)) for x in c.phi.basis.interior_knots],
                "psi": [float(fmt(x)) for x in c.psi.basis.interior_knots],
            }
            for k, c in enumerate(decomp.components, 1)
        ],
    }
    (out / "knots.json").write_text(json.dumps(knots, indent=1) + "\n", encoding="utf-8")
    save_model(out / "model.json", decomp)
    _write_plot_data(out / "plot_data", decomp)
    return out


def _write_plot_data(folder: Path, decomp: Decomposition, npts: int = 201):
    folder.mkdir(parents=True, exist_ok=True)
    xs = np.linspace(decomp.s_grid.a, decomp.s_grid.b, npts)
    xt = np.linspace(decomp.t_grid.a, decomp.t_grid.b, npts)
    panel = 0
    for k, c in enumerate(decomp.components, start=1):
        for axis, x, f in (("phi", xs, c.phi), ("psi", xt, c.psi)):
            name = f"panel_{PANELS[panel % 26]}_{axis}{k}.csv"
            write_csv(folder / name, ["x", "y"], zip(x.astype(float), f(x).astype(float)))
            panel += 1


# --- predict -------------------------------------------------------------------

def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def cmd_predict(cfg: dict) -> Path:
    out = Path(cfg["out"])
    decomp = load_model(out)
    p = decomp.p if cfg.get("p") in (None, "") else int(cfg["p"])
    if not 0 <= p <= decomp.p:
        raise UsageError(f"p={p} outside 0..{decomp.p}")
    folder = out / "predictions"
    folder.mkdir(parents=True, exist_ok=True)
    s, t = decomp.s_grid.points, decomp.t_grid.points
    width = len(str(len(decomp.subjects)))
    for i, subj in enumerate(decomp.subjects):
        surf = individual_predictor(decomp, decomp.scores, i, p)
        write_surface(folder / f"{i + 1:0{width}d}_{_safe(subj)}.csv", s, t, surf.values)
    return folder


# --- scores --------------------------------------------------------------------

def robust_z(W: np.ndarray) -> np.ndarray:
    """Modified z-scores ``0.6745 (w - median) / MAD`` per column.

    Columns with zero MAD fall back to the mean absolute deviation; columns
    with no spread at all get zeros.
    """
    W = np.asarray(W, dtype=float)
    med = np.median(W, axis=0)
    dev = np.abs(W - med)
    mad = np.median(dev, axis=0)
    meanad = dev.mean(axis=0)
    z = np.zeros_like(W)
    for k in range(W.shape[1]):
        if mad[k] > 0:
            z[:, k] = 0.6745 * (W[:, k] - med[k]) / mad[k]
        elif meanad[k] > 0:
            z[:, k] = 0.7979 * (W[:, k] - med[k]) / meanad[k]
    return z


def cmd_scores(cfg: dict) -> Path:
    out = Path(cfg["out"])
    decomp = load_model(out)
    if decomp.p < 2:
        raise DataError("score plots need a fit with p >= 2")
    W = decomp.scores
    z = robust_z(W)
    header = ["subject"] + [f"w{k}" for k in range(1, decomp.p + 1)] + ["outlier", "flagged_components"]
    rows = []
    for i, subj in enumerate(decomp.subjects):
        hits = [str(k + 1) for k in range(decomp.p) if abs(z[i, k]) > ROBUST_Z_CUTOFF]
        rows.append([subj] + [float(w) for w in W[i]] + [int(bool(hits)), ";".join(hits)])
    path = out / "scores_plot.csv"
    write_csv(path, header, rows)
    return path


# --- simulate ------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> Path:
    try:
        sim = SimulationConfig(
            mean_id=cfg["mean"],
            sigma=cfg["sigma"],
            m=cfg["m"],
            n=cfg["n"],
            replicates=cfg["replicates"],
            seed=cfg["seed"],
            protocols=cfg["protocols"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = run_study(sim, workers=cfg.get("workers"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    summ = result.summary()
    write_csv(
        out / "table1.csv",
        ["mean", "sigma", "m", "n", "protocol", "root_mise", "replicates"],
        [(sim.mean_id, fmt(sim.sigma), sim.m, sim.n, p, summ[p], sim.replicates) for p in sim.protocols],
    )
    write_csv(
        out / "raw_errors.csv",
        ["replicate", "protocol", "root_ise"],
        [
            (i, p, float(result.errors[p][i]))
            for p in sim.protocols
            for i in range(sim.replicates)
        ],
    )
    return out


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsvd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="estimate components from a dataset")
    fit.add_argument("--input")
    fit.add_argument("--p", help="number of components or 'cv'")
    fit.add_argument("--order")
    fit.add_argument("--max-knots", dest="max_knots")
    fit.add_argument("--transform", choices=("none", "log"))
    fit.add_argument("--seed")

    pred = sub.add_parser("predict", help="per-subject smoothed surfaces")
    pred.add_argument("--p")

    sub.add_parser("scores", help="score table with outlier flags")

    sim = sub.add_parser("simulate", help="Monte Carlo comparison study")
    sim.add_argument("--mean", choices=("mu1", "mu2"))
    sim.add_argument("--sigma")
    sim.add_argument("--m")
    sim.add_argument("--n")
    sim.add_argument("--replicates")
    sim.add_argument("--protocols", help="comma-separated subset of TPS,SVf,SVo")
    sim.add_argument("--seed")
    sim.add_argument("--workers")

    for p in (fit, pred, sub.choices["scores"], sim):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", help="output directory")
    return parser


COMMANDS = {
    "fit": (cmd_fit, FIT_DEFAULTS),
    "predict": (cmd_predict, {"out": FIT_DEFAULTS["out"], "p": None}),
    "scores": (cmd_scores, {"out": FIT_DEFAULTS["out"]}),
    "simulate": (cmd_simulate, SIM_DEFAULTS),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    func, defaults = COMMANDS[args.command]
    try:
        cfg = _settings(args, defaults)
        result = func(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"fsvd {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"fsvd {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankError, NotPSDError, KnotSearchError, StudyError, np.linalg.LinAlgError) as exc:
        print(f"fsvd {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fsvd {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
