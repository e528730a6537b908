"""Command-line interface: simulate, fit, predict, cluster and study.

Settings come from flags, optionally on top of a JSON file given with
``--config`` (flags win).  Exit codes: 0 success, 2 usage, 3 input data,
4 invalid configuration or parameters, 5 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .clustering import kmeans_warps, mixture_em
from .errors import DataError, InvalidBasisError, NumericalError, ParameterError, SaemRegError
from .metrics import run_study
from .model import family_kappas, scenario, simulate, simulate_families
from .saem import FitResult, SaemConfig, fit, predict
from .splines import make_basis

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3, 4, 5

# built-in value of every setting; --config and then explicit flags override these
DEFAULTS = {
    "input": None,
    "output": None,
    "kf": 5,
    "kh": 6,
    "burnin": 2000,
    "iters": 12000,
    "alpha": 0.75,
    "inner": 5,
    "seed": 0,
    "scenario": "shape1",
    "n": 100,
    "curves": 20,
    "replicates": 10,
    "method": "kmeans",
    "M": 3,
    "families": 1,
    "tau": None,
    "grid": 101,
    "times": None,
}


class ConfigError(SaemRegError, ValueError):
    pass


def _add_common(p: argparse.ArgumentParser, *names):
    spec = {
        "input": dict(help="input file or fit directory"),
        "output": dict(help="output directory"),
        "kf": dict(type=int, help="number of shape basis functions"),
        "kh": dict(type=int, help="number of warp basis functions"),
        "burnin": dict(type=int, help="burn-in iterations"),
        "iters": dict(type=int, help="total SAEM iterations, burn-in included"),
        "alpha": dict(type=float, help="step-size exponent in (0.5, 1]"),
        "inner": dict(type=int, help="MCMC rounds per SAEM iteration"),
        "seed": dict(type=int, help="random seed"),
        "scenario": dict(choices=["shape1", "shape2"], help="simulation scenario"),
        "n": dict(type=int, help="points per curve"),
        "curves": dict(type=int, help="number of curves"),
        "replicates": dict(type=int, help="study replicates"),
        "method": dict(choices=["kmeans", "mixture"], help="clustering method"),
        "M": dict(type=int, help="number of clusters"),
        "families": dict(type=int, help="number of warp families to simulate"),
        "tau": dict(type=float, help="override the warp concentration when simulating"),
        "grid": dict(type=int, help="uniform prediction grid size"),
        "times": dict(help="comma-separated prediction times (overrides --grid)"),
    }
    for name in names:
        p.add_argument(f"--{name}", default=None, **spec[name])
    p.add_argument("--config", default=None, help="JSON file with default values for the flags")
    p.set_defaults(fields=names)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saemreg", description="Curve registration by SAEM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    saem_flags = ("burnin", "iters", "alpha", "inner", "seed")
    _add_common(sub.add_parser("simulate", help="simulate a scenario dataset"),
                "output", "scenario", "n", "curves", "seed", "families", "tau")
    _add_common(sub.add_parser("fit", help="fit the registration model to a CSV file"),
                "input", "output", "kf", "kh", *saem_flags)
    _add_common(sub.add_parser("predict", help="evaluate a saved fit on a grid"), "input", "output", "grid", "times")
    _add_common(sub.add_parser("cluster", help="cluster curves"), "input", "output", "method", "M", "kf", "seed")
    _add_common(sub.add_parser("study", help="replicated simulation study"),
                "output", "scenario", "n", "curves", "replicates", *saem_flags)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON file and explicit flags (in increasing priority)."""
    cfg = {k: DEFAULTS[k] for k in args.fields}
    if args.config:
        loaded = io.read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError("--config must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"config field(s) not used by {args.command}: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for k in args.fields:
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    return cfg


def _require(cfg, *names):
    for name in names:
        if cfg.get(name) in (None, ""):
            raise ConfigError(f"missing required field --{name}")


def _outdir(cfg) -> Path:
    _require(cfg, "output")
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _saem_config(cfg) -> SaemConfig:
    return SaemConfig(
        burn_in=int(cfg["burnin"]),
        total_iters=int(cfg["iters"]),
        alpha=float(cfg["alpha"]),
        n_inner=int(cfg["inner"]),
        seed=int(cfg["seed"]),
    ).validate()


def _echo(cfg) -> dict:
    # paths are left out so that outputs depend only on settings and data content
    return {k: cfg[k] for k in sorted(cfg) if k not in ("input", "output")}


def cmd_simulate(cfg) -> None:
    out = _outdir(cfg)
    params, basis_f, basis_h = scenario(cfg["scenario"])
    if cfg["tau"] is not None:
        params = params.copy(tau=float(cfg["tau"]))
    fam = int(cfg["families"])
    if fam > 1:
        kappas = family_kappas(basis_h, fam)
        dataset, effects, labels = simulate_families(params, basis_f, basis_h, kappas, int(cfg["curves"]), int(cfg["n"]), cfg["seed"])
    else:
        dataset, effects = simulate(params, basis_f, basis_h, int(cfg["curves"]), int(cfg["n"]), cfg["seed"])
        kappas, labels = params.kappa0[None, :], np.zeros(len(dataset), dtype=int)
    io.write_dataset_csv(dataset, out / "data.csv")
    io.write_json(out / "truth.json", {
        "config": _echo(cfg),
        "params": params.to_dict(),
        "kf": basis_f.num_basis,
        "kh": basis_h.num_basis,
        "curve_ids": dataset.ids,
        "a": effects.a,
        "w": effects.w,
        "family": labels,
        "family_kappa0": kappas,
    })


def cmd_fit(cfg) -> None:
    _require(cfg, "input")
    out = _outdir(cfg)
    dataset = io.ingest_csv(cfg["input"])
    basis_f, basis_h = make_basis(int(cfg["kf"])), make_basis(int(cfg["kh"]))
    config = _saem_config(cfg)
    start = time.perf_counter()
    result = fit(dataset, basis_f, basis_h, config)
    seconds = time.perf_counter() - start
    header = {"config": _echo(cfg), "saem": config.to_dict(), "seed": config.seed, "input_sha256": io.file_sha256(cfg["input"])}
    io.write_json(out / "theta.json", {**header, "theta": result.theta.to_dict()})
    rows = []
    for cid in result.curve_ids:
        y_hat, h_hat = predict(result, cid, result.grid)
        rows += [(cid, t, h, y) for t, h, y in zip(result.grid, h_hat, y_hat)]
    io.write_rows(out / "curves.csv", ("curve_id", "t", "h_hat", "y_hat"), rows)
    io.write_json(out / "diagnostics.json", {
        **header,
        "seconds": seconds,
        "acceptance_rate": dict(zip(result.curve_ids, result.acceptance_rate)),
        "proposal_scale": dict(zip(result.curve_ids, result.sigma_q)),
        "trajectory": result.trajectory,
    })
    io.write_json(out / "fit_state.json", result.to_dict())


def _load_fit(path) -> FitResult:
    p = Path(path)
    if p.is_dir():
        p = p / "fit_state.json"
    try:
        return FitResult.from_dict(io.read_json(p))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{p}: not a saved fit ({exc})") from None


def cmd_predict(cfg) -> None:
    _require(cfg, "input")
    out = _outdir(cfg)
    result = _load_fit(cfg["input"])
    if cfg["times"]:
        try:
            ts = np.array([float(s) for s in str(cfg["times"]).split(",")])
        except ValueError:
            raise ConfigError(f"--times must be comma-separated numbers, got {cfg['times']!r}") from None
    else:
        if int(cfg["grid"]) < 2:
            raise ConfigError("--grid must be >= 2")
        ts = np.linspace(0.0, 1.0, int(cfg["grid"]))
    rows = []
    for cid in result.curve_ids:
        y_hat, h_hat = predict(result, cid, ts)
        rows += [(cid, t, h, y) for t, h, y in zip(ts, h_hat, y_hat)]
    io.write_rows(out / "predictions.csv", ("curve_id", "t", "h_hat", "y_hat"), rows)


def cmd_cluster(cfg) -> None:
    _require(cfg, "input")
    out = _outdir(cfg)
    M = int(cfg["M"])
    if cfg["method"] == "kmeans":
        result = _load_fit(cfg["input"])
        ids = result.curve_ids
        res = kmeans_warps(result.w_hat, M, seed=cfg["seed"])
    else:
        dataset = io.ingest_csv(cfg["input"])
        ids = dataset.ids
        res = mixture_em(dataset, M, make_basis(int(cfg["kf"])), seed=cfg["seed"])
    io.write_rows(out / "labels.csv", ("curve_id", "label"), zip(ids, res.labels.tolist()))
    io.write_json(out / "cluster.json", {"config": _echo(cfg), **res.to_dict()})


def cmd_study(cfg) -> None:
    out = _outdir(cfg)
    report = run_study(cfg["scenario"], int(cfg["n"]), int(cfg["replicates"]), seed=int(cfg["seed"]),
                       config=_saem_config(cfg), n_curves=int(cfg["curves"]))
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    print(io.dumps(report.aggregate()), end="")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "cluster": cmd_cluster, "study": cmd_study}


def run(cfg: dict) -> int:
    try:
        COMMANDS[cfg["command"]](cfg)
    except (DataError, FileNotFoundError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ParameterError, InvalidBasisError, ValueError, TypeError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SaemRegError, OSError) as exc:
        print(f"error[other]: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except (ConfigError, DataError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
