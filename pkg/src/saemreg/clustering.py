"""Grouping curves: K-means on predicted warp increments and a mixture-of-curves EM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ParameterError
from .model import Dataset
from .splines import BasisSpec, eval_basis

EMPTY_MASS = 1e-8


@dataclass
class ClusterResult:
    """Labels in ``[0, M)`` plus centers and the objective of the returned solution.

    For K-means ``objective`` is the inertia and ``history`` the inertia after
    each Lloyd iteration; for the mixture it is the observed log-likelihood
    and ``history`` its value after each EM iteration.
    """

    labels: np.ndarray
    centers: np.ndarray
    objective: float
    weights: np.ndarray | None = None
    sigma2: float | None = None
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "centers": self.centers.tolist(),
            "objective": self.objective,
            "weights": None if self.weights is None else self.weights.tolist(),
            "sigma2": self.sigma2,
            "history": list(self.history),
        }


def _kmeanspp(X, M, rng):
    centers = [X[rng.integers(X.shape[0])]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, M):
        tot = d2.sum()
        # all remaining points coincide with a center: any choice is as good
        i = rng.integers(X.shape[0]) if tot <= 0 else rng.choice(X.shape[0], p=d2 / tot)
        centers.append(X[i])
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, C, max_iter):
    history = []
    labels = None
    for _ in range(max_iter):
        D = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new = D.argmin(axis=1)
        history.append(float(D[np.arange(X.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = C.copy()
        for m in range(C.shape[0]):
            members = X[labels == m]
            if members.size:  # an emptied cluster keeps its previous center
                C[m] = members.mean(axis=0)
    return labels, C, history


def kmeans_warps(warp_coeffs, M: int, seed=None, restarts: int = 10, max_iter: int = 300) -> ClusterResult:
    """Lloyd's algorithm from k-means++ starts; the run with the smallest inertia wins."""
    X = np.asarray(warp_coeffs, dtype=float)
    if X.ndim != 2:
        raise DataError("warp coefficients must be an (N, d) matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("warp coefficients must be finite")
    if not 1 <= M <= X.shape[0]:
        raise ParameterError(f"need 1 <= M <= N, got M={M} with N={X.shape[0]}")
    if restarts < 1:
        raise ParameterError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, C, hist = _lloyd(X, _kmeanspp(X, M, rng), max_iter)
        if best is None or hist[-1] < best.objective:
            best = ClusterResult(labels=labels, centers=C, objective=hist[-1], history=hist)
    return best


def _curve_designs(dataset: Dataset, basis: BasisSpec):
    out = []
    for c in dataset.curves:
        B = eval_basis(basis, c.ts)
        out.append((B.T @ B, B.T @ c.ys, float(c.ys @ c.ys)))
    return out


def _rss(designs, coefs):
    """RSS of every curve under every component, shape (N, M)."""
    return np.array([[yy - 2.0 * By @ a + a @ BB @ a for a in coefs] for BB, By, yy in designs])


def _solve_components(designs, R, K):
    coefs = np.empty((R.shape[1], K))
    for m in range(R.shape[1]):
        G = sum(r * BB for r, (BB, _, _) in zip(R[:, m], designs))
        b = sum(r * By for r, (_, By, _) in zip(R[:, m], designs))
        try:
            coefs[m] = np.linalg.solve(G, b)
        except np.linalg.LinAlgError:
            coefs[m] = np.linalg.lstsq(G, b, rcond=None)[0]
    return coefs


def mixture_em(
    dataset: Dataset,
    M: int,
    basis: BasisSpec,
    seed=None,
    max_iters: int = 500,
    tol: float = 1e-8,
) -> ClusterResult:
    """EM for a finite mixture of spline curves with a common noise variance.

    Curve ``i`` belongs to component ``m`` with probability ``pi_m`` and then
    ``y_ij = f_m(t_ij) + eps_ij``.  Starts from a hard partition around M
    curves picked k-means++ style; stops when the observed log-likelihood
    improves by less than ``tol``.
    """
    N = len(dataset)
    K = basis.num_basis
    if M < 1:
        raise ParameterError("M must be >= 1")
    if M > N:
        raise ParameterError(f"M={M} exceeds the number of curves ({N})")
    if dataset.n_tot <= M * K:
        raise ParameterError("need more observations than M times the number of basis functions")
    rng = np.random.default_rng(seed)
    designs = _curve_designs(dataset, basis)
    n = np.array([c.n for c in dataset.curves], dtype=float)

    # starting partition: curves compared on a common grid
    grid = np.linspace(0.0, 1.0, 101)
    Y = np.array([np.interp(grid, c.ts, c.ys) for c in dataset.curves])
    seeds = _kmeanspp(Y, M, rng)
    R = np.zeros((N, M))
    R[np.arange(N), ((Y[:, None, :] - seeds[None]) ** 2).sum(axis=2).argmin(axis=1)] = 1.0
    for m in np.flatnonzero(R.sum(axis=0) == 0):
        # duplicated seed curves: give the empty component one curve of its own
        i = int(np.argmax(R[:, R.sum(axis=0).argmax()] * rng.random(N)))
        R[i] = 0.0
        R[i, m] = 1.0

    history = []
    for _ in range(max_iters):
        coefs = _solve_components(designs, R, K)
        rss = _rss(designs, coefs)
        sigma2 = max(float((R * rss).sum() / n.sum()), 1e-12 * float(np.mean([d[2] for d in designs]) + 1e-300))
        pi = R.sum(axis=0) / N
        with np.errstate(divide="ignore"):
            logp = np.log(pi)[None, :] - 0.5 * n[:, None] * np.log(2 * np.pi * sigma2) - 0.5 * rss / sigma2
        ll_i = logsumexp(logp, axis=1)
        history.append(float(ll_i.sum()))
        R = np.exp(logp - ll_i[:, None])
        empty = np.flatnonzero(R.sum(axis=0) < EMPTY_MASS)
        if empty.size:
            # re-seed each empty component from the currently worst-explained curve
            for m in empty:
                worst = int(np.argmin(ll_i))
                warnings.warn(f"mixture component {m} emptied; re-seeding from curve {worst}", RuntimeWarning, stacklevel=2)
                R[worst] = 0.0
                R[worst, m] = 1.0
                ll_i[worst] = np.inf
            continue
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
    labels = R.argmax(axis=1)
    return ClusterResult(labels=labels, centers=coefs, objective=history[-1], weights=pi, sigma2=sigma2, history=history)
