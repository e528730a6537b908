"""Clamped B-spline bases on [0, 1] and monotone warping functions built on them.

Bases are evaluated with the triangular Cox--de Boor recursion, which yields the
``order`` nonzero basis values on the knot span containing each point. Dense
matrices are assembled from those local blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidBasisError, InvalidWarpError

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """A clamped B-spline basis on [0, 1].

    Attributes
    ----------
    order : int
        Spline order (degree + 1); 4 gives cubic splines.
    knots : ndarray
        Nondecreasing knot vector with both boundary knots repeated ``order`` times.
    """

    order: int
    knots: np.ndarray

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.order

    @property
    def degree(self) -> int:
        return self.order - 1

    def __eq__(self, other):
        if not isinstance(other, BasisSpec):
            return NotImplemented
        return self.order == other.order and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.order, tuple(self.knots)))

    def __repr__(self):
        return f"BasisSpec(num_basis={self.num_basis}, order={self.order})"


def make_basis(num_basis: int, order: int = 4) -> BasisSpec:
    """Clamped basis with ``num_basis`` functions and equally spaced interior knots."""
    if order < 2:
        raise InvalidBasisError(f"order must be >= 2, got {order}")
    if num_basis < order:
        raise InvalidBasisError(f"num_basis ({num_basis}) must be >= order ({order})")
    n_interior = num_basis - order
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate([np.zeros(order), interior, np.ones(order)])
    knots.setflags(write=False)
    return BasisSpec(order=order, knots=knots)


def _check_domain(ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    if ts.size and (not np.all(np.isfinite(ts)) or ts.min() < 0.0 or ts.max() > 1.0):
        raise DomainError("evaluation points must lie in [0, 1]")
    return ts


def eval_basis_local(basis: BasisSpec, ts) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero basis values at each point.

    Returns
    -------
    first : int ndarray, shape (m,)
        Index of the first nonzero basis function for each point.
    values : ndarray, shape (m, order)
        ``values[j, r]`` is ``B_{first[j] + r}(ts[j])``.
    """
    ts = _check_domain(ts).ravel()
    return _local(basis.knots, basis.order, ts)


def _local(knots: np.ndarray, order: int, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # no domain check; callers guarantee ts in [0, 1]
    ts = np.ascontiguousarray(ts, dtype=float)
    first = np.empty(ts.shape[0], dtype=np.int64)
    vals = np.empty((ts.shape[0], order))
    _kernels.local_basis(np.ascontiguousarray(knots, dtype=float), order, ts, first, vals)
    return first, vals


def local_to_dense(first: np.ndarray, values: np.ndarray, num_basis: int) -> np.ndarray:
    m, order = values.shape
    out = np.zeros((m, num_basis))
    rows = np.repeat(np.arange(m), order)
    cols = (first[:, None] + np.arange(order)).ravel()
    out[rows, cols] = values.ravel()
    return out


def eval_basis(basis: BasisSpec, ts) -> np.ndarray:
    """Dense basis matrix with one row per point and one column per basis function."""
    first, values = eval_basis_local(basis, ts)
    return local_to_dense(first, values, basis.num_basis)


def eval_spline(basis: BasisSpec, coef, ts) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)
    if coef.shape[-1] != basis.num_basis:
        raise InvalidBasisError(f"expected {basis.num_basis} coefficients, got {coef.shape[-1]}")
    first, values = eval_basis_local(basis, ts)
    idx = first[:, None] + np.arange(basis.order)
    return np.sum(coef[..., idx] * values, axis=-1)


def greville(basis: BasisSpec) -> np.ndarray:
    """Knot averages; used as coefficients they reproduce the identity function."""
    p = basis.order - 1
    t = basis.knots
    K = basis.num_basis
    return np.array([t[k + 1 : k + 1 + p].mean() for k in range(K)])


def check_simplex(w, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate strictly positive increments summing to one (along the last axis)."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 0 or w.shape[-1] < 1:
        raise InvalidWarpError("warping increments must be a nonempty vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise InvalidWarpError("warping increments must be finite and strictly positive")
    if np.any(np.abs(w.sum(axis=-1) - 1.0) > tol):
        raise InvalidWarpError("warping increments must sum to 1")
    return w


def warp_coefficients(w) -> np.ndarray:
    """Monotone spline coefficients: a leading 0 followed by cumulative sums of ``w``."""
    w = check_simplex(w)
    beta = np.concatenate([np.zeros(w.shape[:-1] + (1,)), np.cumsum(w, axis=-1)], axis=-1)
    beta[..., -1] = 1.0
    return beta


def eval_warp(w, basis_h: BasisSpec, ts) -> np.ndarray:
    """Warping function h(t) whose coefficients are the cumulative sums of ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != basis_h.num_basis - 1:
        raise InvalidWarpError(
            f"expected {basis_h.num_basis - 1} increments for this basis, got {w.shape[-1]}"
        )
    beta = warp_coefficients(w)
    return np.clip(eval_spline(basis_h, beta, ts), 0.0, 1.0)


def warp_basis_matrix(w, basis_h: BasisSpec, basis_f: BasisSpec, ts) -> np.ndarray:
    """Shape basis evaluated at warped times, ``B^f_k(h(t_j; w))``."""
    return eval_basis(basis_f, eval_warp(w, basis_h, ts))
