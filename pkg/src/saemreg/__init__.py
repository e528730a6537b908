"""Curve registration with Dirichlet warping effects, fitted by stochastic-approximation EM."""

from .clustering import ClusterResult, kmeans_warps, mixture_em
from .errors import (
    DataError,
    DomainError,
    InvalidBasisError,
    InvalidWarpError,
    NumericalError,
    ParameterError,
    SaemRegError,
    UnsupportedOracleError,
)
from .io import ingest_csv, write_dataset_csv
from .metrics import StudyReport, imse, imspe, run_study
from .model import (
    Curve,
    Dataset,
    Effects,
    ModelParams,
    SufficientStats,
    complete_loglik,
    family_kappas,
    scenario,
    simulate,
    simulate_families,
    suff_stats,
)
from .oracle import QuadratureSpec, oracle_e_step
from .saem import FitResult, SaemConfig, fit, m_step, newton_tau, predict, sa_e_step
from .splines import BasisSpec, eval_basis, eval_spline, eval_warp, greville, make_basis

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "ClusterResult", "Curve", "DataError", "Dataset", "DomainError", "Effects",
    "FitResult", "InvalidBasisError", "InvalidWarpError", "ModelParams", "NumericalError",
    "ParameterError", "QuadratureSpec", "SaemConfig", "SaemRegError", "StudyReport",
    "SufficientStats", "UnsupportedOracleError", "complete_loglik", "eval_basis", "eval_spline",
    "eval_warp", "family_kappas", "fit", "greville", "imse", "imspe", "ingest_csv", "kmeans_warps",
    "m_step", "make_basis", "mixture_em", "newton_tau", "oracle_e_step", "predict", "run_study",
    "sa_e_step", "scenario", "simulate", "simulate_families", "suff_stats", "write_dataset_csv",
]
