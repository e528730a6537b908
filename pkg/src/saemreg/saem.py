"""Stochastic-approximation EM for the shape-invariant registration model.

Each iteration advances every curve's MCMC chain a few steps, folds the
resulting sufficient statistics into a running stochastic-approximation
average, and maximises the complete-data likelihood in closed form (plus a
one-dimensional Newton solve for the Dirichlet concentration).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .errors import NumericalError, ParameterError
from .model import Dataset, ModelParams, SufficientStats, default_kappa0
from .sampler import ChainBatch, CurveBatch, adapt_scale
from .splines import BasisSpec, _local, eval_basis, eval_basis_local, eval_warp, local_to_dense

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12
# the M-step maximises tau over (0, TAU_MAX]; identical warps push the unconstrained maximiser to infinity
TAU_MAX = 1e6


@dataclass
class SaemConfig:
    """Iteration schedule and sampler settings.

    ``total_iters`` counts burn-in iterations as well, so the defaults give
    2000 burn-in plus 10000 decreasing-step iterations.
    """

    burn_in: int = 2000
    total_iters: int = 12000
    alpha: float = 0.75
    n_inner: int = 5
    seed: int = 0
    adapt: bool = True
    adapt_every: int = 50
    sigma_q0: float = 0.1
    pred_grid: int = 101
    init: ModelParams | None = None

    def validate(self) -> "SaemConfig":
        if not (0 <= self.burn_in < self.total_iters):
            raise ParameterError("need 0 <= burn_in < total_iters")
        if not (0.5 < self.alpha <= 1.0):
            raise ParameterError("step exponent alpha must lie in (0.5, 1]")
        if self.n_inner < 1:
            raise ParameterError("n_inner must be >= 1")
        if self.adapt_every < 1 or self.sigma_q0 <= 0:
            raise ParameterError("adapt_every must be >= 1 and sigma_q0 > 0")
        if self.pred_grid < 2:
            raise ParameterError("pred_grid must be >= 2")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = None if self.init is None else self.init.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SaemConfig":
        d = dict(d)
        if d.get("init") is not None:
            d["init"] = ModelParams.from_dict(d["init"])
        return cls(**d)


def step_size(k: int, B: int, alpha: float) -> float:
    """gamma_k = 1 during the first B iterations, then (k - B) ** -alpha."""
    if k < 1:
        raise ValueError("iteration index starts at 1")
    return 1.0 if k <= B else float((k - B) ** -alpha)


def sa_update(old: SufficientStats, mc: SufficientStats, gamma: float) -> SufficientStats:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    return old.map(lambda o, m: o + gamma * (m - o), mc)


def _tau_grad(tau, S_w, kappa0, N):
    return kappa0 @ S_w - N * (kappa0 @ digamma(tau * kappa0) - digamma(tau))


def _tau_hess(tau, kappa0, N):
    return -N * ((kappa0**2) @ polygamma(1, tau * kappa0) - polygamma(1, tau))


def tau_objective(tau, S_w, kappa0, N):
    conc = tau * kappa0
    return (conc - 1.0) @ S_w - N * (gammaln(conc).sum() - gammaln(tau))


def newton_tau(
    S_w, kappa0, N: int, tau_init: float = 1.0, tol: float = 1e-8, max_iter: int = 200, tau_max: float | None = None
) -> float:
    """Maximise the Dirichlet log-likelihood over the concentration tau.

    Newton iterations in log(tau), kept inside a bracket on which the
    gradient changes sign; a step leaving the bracket is replaced by bisection.
    With ``tau_max`` set, a likelihood still increasing at ``tau_max`` returns
    ``tau_max`` instead of raising.
    """
    S_w = np.asarray(S_w, dtype=float)
    kappa0 = np.asarray(kappa0, dtype=float)
    if not np.all(np.isfinite(S_w)):
        raise NumericalError("S_w must be finite")
    grad = lambda u: _tau_grad(np.exp(u), S_w, kappa0, N)  # noqa: E731

    if tau_max is not None and grad(np.log(tau_max)) > 0:
        return float(tau_max)
    u = float(np.log(tau_init if tau_init > 0 else 1.0))
    g = grad(u)
    if g == 0:
        return float(np.exp(u))
    lo = hi = u
    u_max, u_min = np.log(1e12), np.log(1e-12)
    if g > 0:
        while grad(hi) > 0:
            lo = hi
            hi += 1.0
            if hi > u_max:
                raise NumericalError(
                    f"tau likelihood increasing up to tau=1e12 (gradient {grad(u_max):.3g}); "
                    f"S_w/N={(S_w / N).tolist()}"
                )
    else:
        while grad(lo) < 0:
            hi = lo
            lo -= 1.0
            if lo < u_min:
                raise NumericalError("tau likelihood decreasing down to tau=1e-12")
    u = 0.5 * (lo + hi) if not lo < u < hi else u
    for _ in range(max_iter):
        tau = np.exp(u)
        g = _tau_grad(tau, S_w, kappa0, N)
        if abs(g) < tol:
            return float(tau)
        if g > 0:
            lo = u
        else:
            hi = u
        if hi - lo < 1e-15:
            return float(tau)
        d1 = tau * g
        d2 = tau * g + tau**2 * _tau_hess(tau, kappa0, N)
        u_new = u - d1 / d2 if d2 < 0 else np.nan
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        u = u_new
    tau = np.exp(u)
    g = _tau_grad(tau, S_w, kappa0, N)
    if abs(g) < tol * max(1.0, N):
        return float(tau)
    raise NumericalError(f"tau Newton iteration did not converge: tau={tau:.6g}, gradient={g:.3g}")


def m_step(stats: SufficientStats, n_tot: int, N: int, kappa0, tau_prev: float) -> ModelParams:
    """Closed-form maximiser of the expected complete-data log-likelihood."""
    stats = stats.total()
    K = stats.S_By.size
    S_BB = 0.5 * (stats.S_BB + stats.S_BB.T)
    try:
        if np.linalg.cond(S_BB) > 1e12:
            raise np.linalg.LinAlgError
        alpha = np.linalg.solve(S_BB, stats.S_By)
    except np.linalg.LinAlgError:
        warnings.warn("S_BB is numerically singular; adding a ridge", RuntimeWarning, stacklevel=2)
        ridge = 1e-8 * np.trace(S_BB) / K or 1e-8
        S_BB = S_BB + ridge * np.eye(K)
        alpha = np.linalg.solve(S_BB, stats.S_By)
    sigma2 = (stats.S_yy - 2.0 * stats.S_By @ alpha + alpha @ S_BB @ alpha) / n_tot
    if not sigma2 > SIGMA2_FLOOR:
        warnings.warn(f"sigma2 update {sigma2:.3g} floored at {SIGMA2_FLOOR}", RuntimeWarning, stacklevel=2)
        sigma2 = SIGMA2_FLOOR
    Sigma = stats.S_a / N
    Sigma = 0.5 * (Sigma + Sigma.T)
    if np.linalg.eigvalsh(Sigma).min() <= 0:
        warnings.warn("amplitude covariance update is singular; adding jitter", RuntimeWarning, stacklevel=2)
        Sigma = Sigma + (1e-10 * np.trace(Sigma) + 1e-300) * np.eye(2)
    tau = newton_tau(stats.S_w, kappa0, N, tau_prev, tau_max=TAU_MAX)
    if tau == TAU_MAX:
        warnings.warn(f"warp concentration update capped at {TAU_MAX:g} (likelihood increasing)", RuntimeWarning, stacklevel=2)
    return ModelParams(alpha=alpha, sigma2=float(sigma2), Sigma=Sigma, tau=tau, kappa0=np.asarray(kappa0))


def init_params(dataset: Dataset, basis_f: BasisSpec, basis_h: BasisSpec) -> ModelParams:
    """Starting values from a pooled least-squares fit with identity warps."""
    K = basis_f.num_basis
    if dataset.n_tot <= K:
        raise ParameterError("need more observations than shape basis functions")
    ts = np.concatenate([c.ts for c in dataset.curves])
    ys = np.concatenate([c.ys for c in dataset.curves])
    B = eval_basis(basis_f, ts)
    alpha, _, rank, _ = np.linalg.lstsq(B, ys, rcond=None)
    if rank < K:
        logger.warning("pooled design is rank deficient (rank %d < %d); using ridge", rank, K)
        G = B.T @ B
        alpha = np.linalg.solve(G + 1e-8 * np.trace(G) / K * np.eye(K), B.T @ ys)
    r = ys - B @ alpha
    sigma2 = max(float(r @ r) / max(dataset.n_tot - K, 1), 1e-8 * float(np.var(ys)), SIGMA2_FLOOR)
    return ModelParams(
        alpha=alpha,
        sigma2=sigma2,
        Sigma=np.diag([sigma2, 0.01]),
        tau=float(basis_h.num_basis),
        kappa0=default_kappa0(basis_h),
    )


@dataclass
class FitResult:
    """Estimated parameters plus SA-averaged per-curve predictions and diagnostics.

    ``w_hat`` and ``a_hat`` hold E[w_i | y_i] and E[a_i | y_i]; ``ascB_hat[i, g, k]``
    holds E[a_sc B^f_k(h_i(grid[g])) | y_i].
    """

    theta: ModelParams
    curve_ids: list
    basis_f: BasisSpec
    basis_h: BasisSpec
    w_hat: np.ndarray
    a_hat: np.ndarray
    grid: np.ndarray
    ascB_hat: np.ndarray
    sa_stats: SufficientStats
    acceptance_rate: np.ndarray
    sigma_q: np.ndarray
    trajectory: dict = field(repr=False)
    config: SaemConfig = None
    n_tot: int = 0

    def index(self, curve_id: str) -> int:
        try:
            return self.curve_ids.index(curve_id)
        except ValueError:
            raise KeyError(f"unknown curve id {curve_id!r}") from None

    def warp_coefficients(self) -> np.ndarray:
        """Predicted warp spline coefficients (N, K^h)."""
        return np.concatenate([np.zeros((len(self.curve_ids), 1)), np.cumsum(self.w_hat, axis=1)], axis=1)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "curve_ids": list(self.curve_ids),
            "basis_f": {"num_basis": self.basis_f.num_basis, "order": self.basis_f.order},
            "basis_h": {"num_basis": self.basis_h.num_basis, "order": self.basis_h.order},
            "w_hat": self.w_hat.tolist(),
            "a_hat": self.a_hat.tolist(),
            "grid": self.grid.tolist(),
            "ascB_hat": self.ascB_hat.tolist(),
            "sa_stats": {k: v.tolist() for k, v in self.sa_stats.as_dict().items()},
            "acceptance_rate": self.acceptance_rate.tolist(),
            "sigma_q": self.sigma_q.tolist(),
            "trajectory": {k: v.tolist() for k, v in self.trajectory.items()},
            "config": None if self.config is None else self.config.to_dict(),
            "n_tot": self.n_tot,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        from .splines import make_basis

        return cls(
            theta=ModelParams.from_dict(d["theta"]),
            curve_ids=list(d["curve_ids"]),
            basis_f=make_basis(d["basis_f"]["num_basis"], d["basis_f"]["order"]),
            basis_h=make_basis(d["basis_h"]["num_basis"], d["basis_h"]["order"]),
            w_hat=np.array(d["w_hat"]),
            a_hat=np.array(d["a_hat"]),
            grid=np.array(d["grid"]),
            ascB_hat=np.array(d["ascB_hat"]),
            sa_stats=SufficientStats(**{k: np.array(v) for k, v in d["sa_stats"].items()}),
            acceptance_rate=np.array(d["acceptance_rate"]),
            sigma_q=np.array(d["sigma_q"]),
            trajectory={k: np.array(v) for k, v in d["trajectory"].items()},
            config=None if d.get("config") is None else SaemConfig.from_dict(d["config"]),
            n_tot=d.get("n_tot", 0),
        )


def curve_rngs(seed, n_curves: int) -> list:
    """Independent generator per curve, derived from (seed, curve index)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_curves)]


class _Engine:
    def __init__(self, dataset, basis_f, basis_h, config: SaemConfig, params: ModelParams):
        self.config = config.validate()
        self.batch = CurveBatch(dataset, basis_f, basis_h)
        self.params = params.validate()
        N = self.batch.N
        self.chains = ChainBatch(
            self.batch,
            a=np.tile(params.mu0, (N, 1)),
            w=np.tile(params.kappa0, (N, 1)),
            sigma_q=config.sigma_q0,
            rngs=curve_rngs(config.seed, N),
        )
        self.sa = SufficientStats.zeros(basis_f.num_basis, basis_h.num_basis, N)
        self.grid = np.linspace(0.0, 1.0, config.pred_grid)
        self._grid_h = eval_basis(basis_h, self.grid)
        self.w_hat = np.zeros((N, basis_h.num_basis - 1))
        self.a_hat = np.zeros((N, 2))
        self.ascB_hat = np.zeros((N, self.grid.size, basis_f.num_basis))
        self.post_accept = np.zeros(N, dtype=np.int64)
        self.post_propose = 0

    def _accumulate_predictions(self, gamma):
        c = self.chains
        beta = np.concatenate([np.zeros((c.w.shape[0], 1)), np.cumsum(c.w, axis=1)], axis=1)
        beta[:, -1] = 1.0
        h = np.clip(beta @ self._grid_h.T, 0.0, 1.0)
        bf = self.batch.basis_f
        first, vals = _local(bf.knots, bf.order, h.ravel())
        B = local_to_dense(first, vals, bf.num_basis).reshape(self.ascB_hat.shape)
        B *= c.a[:, 1][:, None, None]
        self.ascB_hat += gamma * (B - self.ascB_hat)
        self.w_hat += gamma * (c.w - self.w_hat)
        self.a_hat += gamma * (c.a - self.a_hat)

    def run(self, update_params: bool = True, trajectory: dict | None = None):
        cfg = self.config
        B = cfg.burn_in
        c = self.chains
        win_accept = np.zeros(self.batch.N, dtype=np.int64)
        win_props = 0
        for k in range(1, cfg.total_iters + 1):
            accepted = c.update(self.params, cfg.n_inner)
            gamma = step_size(k, B, cfg.alpha)
            mc = c.stats(self.params.mu0)
            self.sa = sa_update(self.sa, mc, gamma)
            if k <= B:
                win_accept += accepted
                win_props += cfg.n_inner
                if cfg.adapt and k % cfg.adapt_every == 0:
                    c.sigma_q = adapt_scale(c.sigma_q, win_accept / win_props)
                    win_accept[:] = 0
                    win_props = 0
            else:
                self.post_accept += accepted
                self.post_propose += cfg.n_inner
                self._accumulate_predictions(gamma)
            if update_params:
                prev = self.params
                self.params = m_step(self.sa, self.batch.n_tot, self.batch.N, prev.kappa0, prev.tau)
                p = self.params
                if not (np.all(np.isfinite(p.alpha)) and np.isfinite(p.sigma2) and np.all(np.isfinite(p.Sigma))):
                    raise NumericalError(f"non-finite parameter estimate at iteration {k}")
            if trajectory is not None:
                p = self.params
                trajectory["alpha"][k - 1] = p.alpha
                trajectory["sigma2"][k - 1] = p.sigma2
                trajectory["Sigma"][k - 1] = p.Sigma[[0, 0, 1], [0, 1, 1]]
                trajectory["tau"][k - 1] = p.tau
                trajectory["gamma"][k - 1] = gamma


def fit(dataset: Dataset, basis_f: BasisSpec, basis_h: BasisSpec, config: SaemConfig | None = None) -> FitResult:
    """Maximum-likelihood fit of the registration model by SAEM."""
    config = (config or SaemConfig()).validate()
    params = config.init.copy() if config.init is not None else init_params(dataset, basis_f, basis_h)
    engine = _Engine(dataset, basis_f, basis_h, config, params)
    T = config.total_iters
    traj = {
        "alpha": np.empty((T, basis_f.num_basis)),
        "sigma2": np.empty(T),
        "Sigma": np.empty((T, 3)),
        "tau": np.empty(T),
        "gamma": np.empty(T),
    }
    engine.run(update_params=True, trajectory=traj)
    w_hat = engine.w_hat / engine.w_hat.sum(axis=1, keepdims=True)
    return FitResult(
        theta=engine.params,
        curve_ids=dataset.ids,
        basis_f=basis_f,
        basis_h=basis_h,
        w_hat=w_hat,
        a_hat=engine.a_hat,
        grid=engine.grid,
        ascB_hat=engine.ascB_hat,
        sa_stats=engine.sa,
        acceptance_rate=engine.post_accept / max(engine.post_propose, 1),
        sigma_q=engine.chains.sigma_q.copy(),
        trajectory=traj,
        config=config,
        n_tot=dataset.n_tot,
    )


def sa_e_step(
    dataset: Dataset, params: ModelParams, basis_f: BasisSpec, basis_h: BasisSpec, config: SaemConfig | None = None
) -> tuple[SufficientStats, np.ndarray]:
    """Stochastic-approximation estimate of E[S | y; params] with the parameters held fixed.

    Returns the per-curve SA statistics and the post-burn-in acceptance rates.
    """
    config = (config or SaemConfig()).validate()
    engine = _Engine(dataset, basis_f, basis_h, config, params)
    engine.run(update_params=False)
    return engine.sa, engine.post_accept / max(engine.post_propose, 1)


def predict(result: FitResult, curve_id: str, ts) -> tuple[np.ndarray, np.ndarray]:
    """Conditional-mean fitted curve and warping function of one curve.

    The warp is exact at any ``ts``; the fitted curve is exact on the stored
    prediction grid and linearly interpolated between grid points.
    """
    i = result.index(curve_id)
    ts = np.asarray(ts, dtype=float)
    h_hat = eval_warp(result.w_hat[i], result.basis_h, ts)
    ascB = np.stack(
        [np.interp(ts, result.grid, result.ascB_hat[i, :, k]) for k in range(result.basis_f.num_basis)],
        axis=-1,
    )
    y_hat = result.a_hat[i, 0] + ascB @ result.theta.alpha
    return y_hat, h_hat
