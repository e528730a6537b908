"""Metropolis-Hastings-within-Gibbs kernel for the per-curve random effects.

The amplitude effects are drawn exactly from their Gaussian full conditional.
The warping increments move by a Gaussian random walk in centred-log-ratio
coordinates, mapped back to the simplex by softmax.

All curves are advanced together (:class:`ChainBatch`), but each curve
consumes its own random stream, so a curve's trajectory does not depend on
which other curves share the batch. The single-curve functions
(:func:`gibbs_a`, :func:`mh_step_w`, :func:`chain_update`) wrap a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, NumericalError
from .model import Curve, Dataset, ModelParams, SufficientStats
from .splines import BasisSpec, _local, check_simplex, eval_basis_local, local_to_dense

TARGET_RATE = 0.25
ACCEPT_BAND = (0.17, 0.33)


def clr(w) -> np.ndarray:
    """Centred log-ratio of simplex increments (last axis)."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DomainError("clr requires strictly positive increments")
    lw = np.log(w)
    return lw - lw.mean(axis=-1, keepdims=True)


def softmax_inv(x) -> np.ndarray:
    """Softmax back onto the simplex, stabilised by subtracting the maximum."""
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def centered_step(z: np.ndarray, sigma_q) -> np.ndarray:
    """Project iid N(0, 1) draws onto the zero-sum hyperplane and scale them.

    The result has covariance ``sigma_q**2 * (I - J / d)``: diagonal
    ``sigma_q**2 (d - 1) / d`` and off-diagonal ``-sigma_q**2 / d``.
    """
    z = z - z.mean(axis=-1, keepdims=True)
    return np.asarray(sigma_q)[..., None] * z


def proposal_covariance(d: int, sigma_q: float) -> np.ndarray:
    return sigma_q**2 * (np.eye(d) - np.full((d, d), 1.0 / d))


def propose_w(w, sigma_q: float, rng: np.random.Generator) -> np.ndarray:
    """Random-walk proposal in clr coordinates."""
    w = np.asarray(w, dtype=float)
    z = rng.standard_normal(w.shape)
    return softmax_inv(clr(w) + centered_step(z, sigma_q))


def adapt_scale(sigma_q, recent_accept_rate, c: float = 1.0):
    """Multiplicative Robbins-Monro correction of the proposal scale toward a 25% acceptance rate.

    Scales whose rate already lies in [0.17, 0.33] are left unchanged.
    """
    sigma_q = np.asarray(sigma_q, dtype=float)
    rate = np.asarray(recent_accept_rate, dtype=float)
    if np.any((rate < 0) | (rate > 1)):
        raise DomainError("acceptance rate must lie in [0, 1]")
    lo, hi = ACCEPT_BAND
    in_band = (rate >= lo) & (rate <= hi)
    out = np.where(in_band, sigma_q, np.exp(np.log(sigma_q) + c * (rate - TARGET_RATE)))
    return float(out) if out.ndim == 0 else out


class CurveBatch:
    """Flattened view of a dataset with the warp basis pre-evaluated at every sample time."""

    def __init__(self, dataset: Dataset, basis_f: BasisSpec, basis_h: BasisSpec):
        self.dataset = dataset
        self.basis_f = basis_f
        self.basis_h = basis_h
        self.N = len(dataset)
        self.counts = np.array([c.n for c in dataset.curves])
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)
        self.idx = np.repeat(np.arange(self.N), self.counts)
        self.ts = np.concatenate([c.ts for c in dataset.curves])
        self.ys = np.concatenate([c.ys for c in dataset.curves])
        self.n_tot = self.ys.size
        # h(t) = sum_j w_j C_j(t) with C_j the tail sum of the warp basis from index j + 1 on
        Bh = local_to_dense(*eval_basis_local(basis_h, self.ts), basis_h.num_basis)
        self.tail = np.ascontiguousarray(np.cumsum(Bh[:, ::-1], axis=1)[:, ::-1][:, 1:])

    def sums(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.idx, weights=values, minlength=self.N)

    def warped_times(self, w: np.ndarray) -> np.ndarray:
        h = np.einsum("ij,ij->i", self.tail, w[self.idx])
        return np.clip(h, 0.0, 1.0)

    def shape_local(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Local shape-basis values at the warped sample times."""
        return _local(self.basis_f.knots, self.basis_f.order, self.warped_times(w))

    def shape_values(self, first: np.ndarray, vals: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        f = alpha[first] * vals[:, 0]
        for r in range(1, vals.shape[1]):
            f += alpha[first + r] * vals[:, r]
        return f

    def stats(self, a: np.ndarray, w: np.ndarray, first: np.ndarray, vals: np.ndarray, mu0) -> SufficientStats:
        """Per-curve sufficient statistics for the given effects."""
        N, K = self.N, self.basis_f.num_basis
        S_yy = np.empty(N)
        S_By = np.empty((N, K))
        S_BB = np.empty((N, K, K))
        _kernels.curve_stats(self.ys, self.offsets, a, first, vals, K, S_yy, S_By, S_BB)
        d = a - mu0
        S_a = d[:, :, None] * d[:, None, :]
        return SufficientStats(S_yy, S_By, S_BB, S_a, np.log(w))


def conditional_a_moments(batch: CurveBatch, f: np.ndarray, params: ModelParams):
    """Mean (N, 2) and covariance (N, 2, 2) of a | w, y for every curve, given f(h(t)) at the samples."""
    s2 = params.sigma2
    FtF = np.empty((batch.N, 2, 2))
    FtF[:, 0, 0] = batch.counts
    FtF[:, 0, 1] = FtF[:, 1, 0] = batch.sums(f)
    FtF[:, 1, 1] = batch.sums(f * f)
    Fty = np.stack([batch.sums(batch.ys), batch.sums(f * batch.ys)], axis=1)
    Sinv = np.linalg.inv(params.Sigma)
    C = np.linalg.inv(FtF / s2 + Sinv)
    mu = np.einsum("nij,nj->ni", C, Fty / s2 + Sinv @ params.mu0)
    return mu, C


@dataclass
class CurveState:
    """Chain state of a single curve."""

    a: np.ndarray
    w: np.ndarray
    sigma_q: float = 0.1
    accept_count: int = 0
    propose_count: int = 0
    sa_stats: SufficientStats | None = None


@dataclass
class ChainBatch:
    """Chain states of every curve, advanced together.

    ``rngs`` holds one generator per curve. The shape-basis values at the
    current warped sample times are cached and refreshed on acceptance.
    """

    batch: CurveBatch
    a: np.ndarray
    w: np.ndarray
    sigma_q: np.ndarray
    rngs: list
    accept_count: np.ndarray = None
    propose_count: np.ndarray = None
    _first: np.ndarray = field(default=None, repr=False)
    _vals: np.ndarray = field(default=None, repr=False)
    _f: np.ndarray = field(default=None, repr=False)
    _f_alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        N = self.batch.N
        self.a = np.array(np.broadcast_to(self.a, (N, 2)), dtype=float)
        w = np.asarray(self.w, dtype=float)
        self.w = check_simplex(np.array(np.broadcast_to(w, (N, w.shape[-1])))).copy()
        self.sigma_q = np.broadcast_to(np.asarray(self.sigma_q, dtype=float), (N,)).copy()
        if len(self.rngs) != N:
            raise ValueError("one random generator per curve is required")
        if self.accept_count is None:
            self.accept_count = np.zeros(N, dtype=np.int64)
        if self.propose_count is None:
            self.propose_count = np.zeros(N, dtype=np.int64)
        self.refresh()

    @property
    def shape_local(self):
        """Cached local shape-basis values at the current warped times."""
        return self._first, self._vals

    def refresh(self):
        self._first, self._vals = self.batch.shape_local(self.w)
        self._f = None

    def current_f(self, alpha: np.ndarray) -> np.ndarray:
        """Base shape at the current warped times, recomputed only when alpha changes."""
        if self._f is None or not np.array_equal(alpha, self._f_alpha):
            self._f = self.batch.shape_values(self._first, self._vals, alpha)
            self._f_alpha = np.array(alpha, copy=True)
        return self._f

    def draws(self, n_inner: int):
        """Per-curve random numbers for ``n_inner`` rounds, each from that curve's own stream."""
        d = self.w.shape[1]
        z = np.empty((n_inner, self.batch.N, 2 + d))
        u = np.empty((n_inner, self.batch.N))
        for i, rng in enumerate(self.rngs):
            z[:, i, :] = rng.standard_normal((n_inner, 2 + d))
            u[:, i] = rng.random(n_inner)
        return z, u

    def _sweep(self, params: ModelParams, z, u, gibbs: bool, mh: bool) -> np.ndarray:
        b = self.batch
        f = self.current_f(params.alpha)
        accepted = np.zeros(b.N, dtype=np.int64)
        status = _kernels.sweep(
            b.ys, b.offsets, b.tail, b.basis_f.knots, b.basis_f.order,
            np.ascontiguousarray(params.alpha, dtype=float), params.sigma2,
            np.linalg.inv(params.Sigma), params.mu0, params.tau * params.kappa0,
            self.a, self.w, f, self._first, self._vals, self.sigma_q,
            np.ascontiguousarray(z), np.ascontiguousarray(u), accepted, gibbs, mh,
        )  # fmt: skip
        if status >= 0:
            raise NumericalError(f"amplitude conditional covariance is singular for curve {status}")
        if mh:
            self.accept_count += accepted
            self.propose_count += z.shape[0]
        return accepted

    def update(self, params: ModelParams, n_inner: int = 5) -> np.ndarray:
        """Alternate Gibbs and MH steps ``n_inner`` times; returns accepted counts per curve."""
        if n_inner < 1:
            raise ValueError("n_inner must be >= 1")
        z, u = self.draws(n_inner)
        return self._sweep(params, z, u, gibbs=True, mh=True)

    def gibbs_step(self, params: ModelParams, z: np.ndarray):
        """Amplitude draws only; ``z`` is (N, 2) standard normals."""
        zz = np.zeros((1, self.batch.N, 2 + self.w.shape[1]))
        zz[0, :, :2] = z
        self._sweep(params, zz, np.zeros((1, self.batch.N)), gibbs=True, mh=False)

    def mh_step(self, params: ModelParams, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Warp updates only; ``z`` is (N, d) standard normals, ``u`` (N,) uniforms."""
        zz = np.zeros((1, self.batch.N, 2 + self.w.shape[1]))
        zz[0, :, 2:] = z
        return self._sweep(params, zz, np.asarray(u, dtype=float).reshape(1, -1), gibbs=False, mh=True) > 0

    def stats(self, mu0) -> SufficientStats:
        return self.batch.stats(self.a, self.w, self._first, self._vals, mu0)

    def state(self, i: int) -> CurveState:
        return CurveState(
            a=self.a[i].copy(),
            w=self.w[i].copy(),
            sigma_q=float(self.sigma_q[i]),
            accept_count=int(self.accept_count[i]),
            propose_count=int(self.propose_count[i]),
        )


def _single(curve: Curve, basis_f: BasisSpec, basis_h: BasisSpec) -> CurveBatch:
    return CurveBatch(Dataset((curve,)), basis_f, basis_h)


def gibbs_a(curve: Curve, w, params: ModelParams, basis_f: BasisSpec, basis_h: BasisSpec, rng) -> np.ndarray:
    """Exact draw of (a_sh, a_sc) from its Gaussian full conditional."""
    chain = ChainBatch(_single(curve, basis_f, basis_h), a=params.mu0, w=w, sigma_q=1.0, rngs=[rng])
    chain.gibbs_step(params, rng.standard_normal((1, 2)))
    return chain.a[0].copy()


def mh_step_w(curve: Curve, a, w, params: ModelParams, sigma_q: float, basis_f, basis_h, rng):
    """One MH update of the warping increments given the amplitude effects.

    Returns the new increments and whether the proposal was accepted.
    """
    d = np.asarray(w).size
    chain = ChainBatch(_single(curve, basis_f, basis_h), a=a, w=w, sigma_q=sigma_q, rngs=[rng])
    accepted = chain.mh_step(params, rng.standard_normal((1, d)), rng.random(1))
    return chain.w[0].copy(), bool(accepted[0])


def chain_update(state: CurveState, curve: Curve, params: ModelParams, basis_f, basis_h, n_inner: int, rng) -> CurveState:
    """``n_inner`` rounds of Gibbs (amplitude) then MH (warp) for one curve."""
    chain = ChainBatch(
        _single(curve, basis_f, basis_h),
        a=state.a,
        w=state.w,
        sigma_q=state.sigma_q,
        rngs=[rng],
        accept_count=np.array([state.accept_count]),
        propose_count=np.array([state.propose_count]),
    )
    chain.update(params, n_inner)
    new = chain.state(0)
    new.sa_stats = state.sa_stats
    return new
