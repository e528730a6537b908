"""Deterministic reference for the E-step on a one-dimensional warp space.

With three warp basis functions the increments ``w = (u, 1 - u)`` have a
single free coordinate.  Given ``w`` the amplitude effects are Gaussian, so
their contribution to every sufficient statistic is integrated exactly; the
remaining integral over ``x = logit(u)`` uses composite Gauss-Legendre rules
that are refined until successive answers agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .errors import NumericalError, UnsupportedOracleError
from .model import Curve, ModelParams, SufficientStats
from .splines import BasisSpec, eval_basis, eval_warp


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 16
    panels: int = 32
    max_panels: int = 8192
    rtol: float = 1e-10
    scan_points: int = 4001
    scan_range: float = 60.0
    log_window: float = 60.0


def _node_moments(curve: Curve, params: ModelParams, basis_f: BasisSpec, basis_h: BasisSpec, x):
    """Log integrand and conditional statistic means at logit nodes ``x``."""
    W = np.stack([expit(x), expit(-x)], axis=-1)
    logW = np.stack([-np.logaddexp(0.0, -x), -np.logaddexp(0.0, x)], axis=-1)
    M, n = x.size, curve.n
    K = basis_f.num_basis
    H = eval_warp(W, basis_h, curve.ts)
    B = eval_basis(basis_f, H.ravel()).reshape(M, n, K)
    f = B @ params.alpha
    F = np.stack([np.ones_like(f), f], axis=-1)  # (M, n, 2)

    s2 = params.sigma2
    Sinv = np.linalg.inv(params.Sigma)
    y = curve.ys
    P = np.einsum("mji,mjk->mik", F, F) / s2 + Sinv
    C = np.linalg.inv(P)
    b = np.einsum("mji,j->mi", F, y) / s2 + Sinv @ params.mu0
    m = np.einsum("mik,mk->mi", C, b)

    # log p(y | w): Gaussian integral over a, in information form
    _, logdetP = np.linalg.slogdet(P)
    _, logdetS = np.linalg.slogdet(params.Sigma)
    quad = y @ y / s2 + params.mu0 @ Sinv @ params.mu0 - np.einsum("mi,mi->m", b, m)
    log_y = -0.5 * (n * np.log(2 * np.pi * s2) + logdetS + logdetP + quad)

    conc = params.tau * params.kappa0
    log_prior = logW @ (conc - 1.0) + gammaln(params.tau) - gammaln(conc).sum()
    log_jac = logW.sum(axis=1)
    logf = log_y + log_prior + log_jac

    m0, m1 = m[:, 0], m[:, 1]
    r = y[None, :] - m0[:, None]
    S_yy = (r**2).sum(axis=1) + n * C[:, 0, 0]
    v = m1[:, None] * y[None, :] - (m0 * m1 + C[:, 0, 1])[:, None]
    S_By = np.einsum("mjk,mj->mk", B, v)
    S_BB = (m1**2 + C[:, 1, 1])[:, None, None] * np.einsum("mjk,mjl->mkl", B, B)
    dm = m - params.mu0
    S_a = C + dm[:, :, None] * dm[:, None, :]
    return logf, {"S_yy": S_yy, "S_By": S_By, "S_BB": S_BB, "S_a": S_a, "S_w": logW}


def warp_logpdf(curve: Curve, params: ModelParams, basis_f: BasisSpec, basis_h: BasisSpec, u) -> np.ndarray:
    """Unnormalised log posterior density of the first increment ``u`` (amplitudes integrated out)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = np.log(u) - np.log1p(-u)
    logf, _ = _node_moments(curve, params, basis_f, basis_h, x)
    return logf - np.log(u) - np.log1p(-u)


def _integrate(fn, lo, hi, panels, nodes):
    g, gw = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    wq = (half[:, None] * gw[None, :]).ravel()
    logf, stats = fn(x)
    lw = logf + np.log(wq)
    log_z = logsumexp(lw)
    p = np.exp(lw - log_z)
    return log_z, {k: np.tensordot(p, v, axes=(0, 0)) for k, v in stats.items()}


def oracle_e_step(
    curve: Curve,
    params: ModelParams,
    basis_f: BasisSpec,
    basis_h: BasisSpec,
    quadrature: QuadratureSpec | None = None,
) -> SufficientStats:
    """Posterior expectations of the sufficient statistics of a single curve."""
    if basis_h.num_basis != 3:
        raise UnsupportedOracleError(
            f"quadrature oracle needs exactly 3 warp basis functions, got {basis_h.num_basis}"
        )
    q = quadrature or QuadratureSpec()
    params.validate()
    fn = lambda x: _node_moments(curve, params, basis_f, basis_h, x)  # noqa: E731

    # locate the posterior mass on a coarse logit grid, then integrate over it
    xs = np.linspace(-q.scan_range, q.scan_range, q.scan_points)
    logf, _ = fn(xs)
    if not np.any(np.isfinite(logf)):
        raise NumericalError("posterior density is not finite anywhere on the scan grid")
    keep = np.flatnonzero(logf > logf.max() - q.log_window)
    step = xs[1] - xs[0]
    lo, hi = xs[keep[0]] - step, xs[keep[-1]] + step

    panels = q.panels
    log_z, prev = _integrate(fn, lo, hi, panels, q.nodes)
    while True:
        panels *= 2
        log_z, cur = _integrate(fn, lo, hi, panels, q.nodes)
        err = max(np.max(np.abs(cur[k] - prev[k])) / max(np.max(np.abs(cur[k])), 1e-300) for k in cur)
        if err < q.rtol:
            break
        if panels >= q.max_panels:
            raise NumericalError(f"quadrature did not converge (relative change {err:.3g})")
        prev = cur
    return SufficientStats(**cur)
