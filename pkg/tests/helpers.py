"""Shared oracles for the M-step tests: random statistics and numeric maximisers of Q."""

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from saemreg.model import SufficientStats, default_kappa0, loglik_a, loglik_y, sample_dirichlet
from saemreg.splines import eval_basis, make_basis


def random_stats(seed, K_f=6, K_h=6):
    """Statistics shaped like those of a real data set, with random effects and noise."""
    rng = np.random.default_rng(seed)
    N = int(rng.integers(5, 40))
    n = int(rng.integers(10, 60))
    bf = make_basis(K_f)
    k0 = default_kappa0(make_basis(K_h))
    a = rng.multivariate_normal([0, 1], np.diag([rng.uniform(1, 400), rng.uniform(1e-3, 0.1)]), size=N)
    ts = np.sort(rng.uniform(0, 1, (N, n)), axis=1)
    alpha = rng.normal(0, 100, K_f)
    S_yy, S_By, S_BB = 0.0, np.zeros(K_f), np.zeros((K_f, K_f))
    for i in range(N):
        B = eval_basis(bf, ts[i])
        y = a[i, 0] + a[i, 1] * B @ alpha + rng.normal(0, rng.uniform(0.5, 10), n)
        yc = y - a[i, 0]
        S_yy += yc @ yc
        S_By += a[i, 1] * B.T @ yc
        S_BB += a[i, 1] ** 2 * B.T @ B
    d = a - [0, 1]
    w = sample_dirichlet(rng, rng.uniform(2, 50) * k0, N)
    stats = SufficientStats(S_yy, S_By, S_BB, d.T @ d, np.log(w).sum(axis=0))
    return stats, N * n, N, k0


def numeric_alpha_sigma2(stats, n_tot):
    """Maximise the Gaussian term by quasi-Newton over alpha, then a bounded scalar search over log sigma2."""
    scale = np.sqrt(np.diag(stats.S_BB))

    def neg(v):
        a = v / scale
        return 0.5 * a @ stats.S_BB @ a - stats.S_By @ a

    def grad(v):
        a = v / scale
        return (stats.S_BB @ a - stats.S_By) / scale

    res = optimize.minimize(neg, np.zeros(scale.size), jac=grad, method="BFGS", options={"gtol": 1e-10, "maxiter": 10_000})
    alpha = res.x / scale
    rss = stats.S_yy - 2 * stats.S_By @ alpha + alpha @ stats.S_BB @ alpha
    r = optimize.minimize_scalar(
        lambda ls: -loglik_y(alpha, np.exp(ls), stats, n_tot),
        bounds=(np.log(rss / n_tot) - 3, np.log(rss / n_tot) + 3),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return alpha, float(np.exp(r.x))


def numeric_sigma(stats, N):
    """Maximise the amplitude term over the Cholesky factor of Sigma."""

    def unpack(v):
        L = np.array([[np.exp(v[0]), 0.0], [v[1], np.exp(v[2])]])
        return L @ L.T

    def neg(v):
        return -loglik_a(unpack(v), stats.S_a, N)

    res = optimize.minimize(neg, np.zeros(3), method="Nelder-Mead", options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 40_000, "maxfev": 40_000})
    return unpack(res.x)


def grid_tau(stats, kappa0, N, lo=1e-3, hi=1e5, points=10_000):
    """Two-stage log-spaced grid search for the Dirichlet concentration."""

    def f(taus):
        conc = taus[:, None] * kappa0[None, :]
        return (conc - 1.0) @ stats.S_w - N * (gammaln(conc).sum(axis=1) - gammaln(taus))

    g = np.geomspace(lo, hi, points)
    i = int(np.argmax(f(g)))
    g2 = np.geomspace(g[max(i - 2, 0)], g[min(i + 2, points - 1)], points)
    return float(g2[np.argmax(f(g2))]), float(np.log(g2[1] / g2[0]))
