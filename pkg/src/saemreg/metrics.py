"""Error measures for fitted shapes and warps, and the replicated simulation study."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DataError, NumericalError, ParameterError, SaemRegError
from .model import scenario as make_scenario
from .model import simulate
from .saem import SaemConfig, fit, predict
from .splines import BasisSpec, eval_spline, eval_warp

logger = logging.getLogger(__name__)


def _trapezoid_grid(grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise ParameterError("grid_size must be >= 2")
    return np.linspace(0.0, 1.0, grid_size)


def imse(f_hat_coef, f_true_coef, basis_f: BasisSpec, grid_size: int = 1001) -> float:
    """Integrated squared difference of two splines on [0, 1] (trapezoidal rule)."""
    g = _trapezoid_grid(grid_size)
    d = eval_spline(basis_f, np.asarray(f_hat_coef, float), g) - eval_spline(basis_f, np.asarray(f_true_coef, float), g)
    return float(np.trapezoid(d**2, g))


def imspe(h_hat, h_true, grid=None) -> float:
    """Integrated squared warp error, averaged over curves.

    ``h_hat`` and ``h_true`` hold values on a common uniform grid over [0, 1],
    one row per curve (a single row may be passed as a vector).
    """
    h_hat = np.atleast_2d(np.asarray(h_hat, dtype=float))
    h_true = np.atleast_2d(np.asarray(h_true, dtype=float))
    if h_hat.shape != h_true.shape:
        raise DataError(f"warp grids differ in shape: {h_hat.shape} vs {h_true.shape}")
    g = np.linspace(0.0, 1.0, h_hat.shape[1]) if grid is None else np.asarray(grid, dtype=float)
    if g.size != h_hat.shape[1]:
        raise DataError("grid length does not match the warp values")
    return float(np.trapezoid((h_hat - h_true) ** 2, g, axis=1).mean())


def rmse(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise DataError("shape mismatch")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def acceptance_summary(rates, band=(0.17, 0.33)) -> dict:
    rates = np.asarray(rates, dtype=float)
    return {
        "min": float(rates.min()),
        "max": float(rates.max()),
        "mean": float(rates.mean()),
        "fraction_in_band": float(np.mean((rates >= band[0]) & (rates <= band[1]))),
    }


FAILURE_CATEGORIES = ("max_time_exceeded", "numerical_error", "other_error")


@dataclass
class ReplicateResult:
    index: int
    sim_seed: int
    fit_seed: int
    status: str
    imse: float = float("nan")
    imspe: float = float("nan")
    seconds: float = float("nan")
    tau: float = float("nan")
    sigma: float = float("nan")
    accept_min: float = float("nan")
    accept_max: float = float("nan")
    message: str = ""


@dataclass
class StudyReport:
    scenario: str
    n_points: int
    n_curves: int
    seed: int
    config: dict
    replicates: list = field(default_factory=list)

    @property
    def completed(self) -> list:
        return [r for r in self.replicates if r.status == "ok"]

    def mean(self, name: str) -> float:
        vals = [getattr(r, name) for r in self.completed]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def failures(self) -> dict:
        counts = dict.fromkeys(FAILURE_CATEGORIES, 0)
        for r in self.replicates:
            if r.status != "ok":
                counts[r.status] += 1
        return counts

    def aggregate(self) -> dict:
        return {
            "completed": len(self.completed),
            "mean_imse": self.mean("imse"),
            "mean_imspe": self.mean("imspe"),
            "mean_seconds": self.mean("seconds"),
            "mean_tau": self.mean("tau"),
            "mean_sigma": self.mean("sigma"),
            "failures": self.failures,
        }

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_points": self.n_points,
            "n_curves": self.n_curves,
            "seed": self.seed,
            "config": self.config,
            "replicates": [asdict(r) for r in self.replicates],
            "aggregate": self.aggregate(),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        names = list(ReplicateResult.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.replicates:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])


def _replicate(rep: ReplicateResult, scenario_name, n_points, n_curves, config, grid_size, max_seconds):
    params, basis_f, basis_h = make_scenario(scenario_name)
    dataset, effects = simulate(params, basis_f, basis_h, n_curves, n_points, seed=rep.sim_seed)
    cfg = replace(config, seed=rep.fit_seed)
    start = time.perf_counter()
    result = fit(dataset, basis_f, basis_h, cfg)
    grid = _trapezoid_grid(grid_size)
    h_hat = np.array([predict(result, cid, grid)[1] for cid in dataset.ids])
    h_true = eval_warp(effects.w, basis_h, grid)
    rep.seconds = time.perf_counter() - start
    rep.imse = imse(result.theta.alpha, params.alpha, basis_f, grid_size)
    rep.imspe = imspe(h_hat, h_true, grid)
    rep.tau = result.theta.tau
    rep.sigma = float(np.sqrt(result.theta.sigma2))
    rep.accept_min = float(result.acceptance_rate.min())
    rep.accept_max = float(result.acceptance_rate.max())
    if not (np.isfinite(rep.imse) and np.isfinite(rep.imspe)):
        raise NumericalError("non-finite replicate metrics")
    if max_seconds is not None and rep.seconds > max_seconds:
        rep.status = "max_time_exceeded"
        rep.message = f"{rep.seconds:.1f} s > {max_seconds} s"
    else:
        rep.status = "ok"


def run_study(
    scenario: str,
    n_points: int,
    n_replicates: int,
    seed: int = 0,
    config: SaemConfig | None = None,
    n_curves: int = 20,
    grid_size: int = 1001,
    max_seconds: float | None = None,
) -> StudyReport:
    """Simulate, fit and score ``n_replicates`` independent datasets.

    Replicate ``r`` draws its simulation and sampler seeds from child ``r`` of
    ``SeedSequence(seed)``, so results do not depend on execution order.
    Failing replicates are recorded with a category instead of aborting.
    """
    make_scenario(scenario)  # reject unknown names up front
    if n_replicates < 1 or n_points < 2 or n_curves < 1:
        raise ParameterError("need n_replicates >= 1, n_points >= 2 and n_curves >= 1")
    config = (config or SaemConfig()).validate()
    report = StudyReport(scenario, n_points, n_curves, seed, config.to_dict())
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(n_replicates)):
        sim_seed, fit_seed = (int(s) for s in child.generate_state(2))
        rep = ReplicateResult(index=r, sim_seed=sim_seed, fit_seed=fit_seed, status="running")
        try:
            _replicate(rep, scenario, n_points, n_curves, config, grid_size, max_seconds)
        except NumericalError as exc:
            rep.status, rep.message = "numerical_error", str(exc)
        except (SaemRegError, ArithmeticError, np.linalg.LinAlgError) as exc:
            rep.status, rep.message = "other_error", f"{type(exc).__name__}: {exc}"
        logger.info("replicate %d: %s imse=%.4g imspe=%.4g %.1fs", r, rep.status, rep.imse, rep.imspe, rep.seconds)
        report.replicates.append(rep)
    return report
