import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from saemreg.errors import DomainError, InvalidBasisError, InvalidWarpError
from saemreg.splines import (
    eval_basis,
    eval_spline,
    eval_warp,
    greville,
    make_basis,
    warp_basis_matrix,
)

GRID = np.linspace(0.0, 1.0, 1000)


def random_simplex(rng, d):
    g = rng.gamma(2.0, size=d)
    return g / g.sum()


class TestMakeBasis:
    def test_one_interior_knot(self):
        np.testing.assert_array_equal(make_basis(5, 4).knots, [0, 0, 0, 0, 0.5, 1, 1, 1, 1])

    def test_bernstein(self):
        np.testing.assert_array_equal(make_basis(4, 4).knots, [0, 0, 0, 0, 1, 1, 1, 1])

    def test_eleven(self):
        b = make_basis(11, 4)
        np.testing.assert_allclose(b.knots[4:-4], np.arange(1, 8) / 8)
        assert len(b.knots) - b.order == 11

    def test_too_few(self):
        with pytest.raises(InvalidBasisError):
            make_basis(3, 4)


class TestEvalBasis:
    @pytest.mark.parametrize("K", [4, 5, 6, 9, 11])
    def test_endpoints(self, K):
        B = eval_basis(make_basis(K), [0.0, 1.0])
        np.testing.assert_array_equal(B[0], np.eye(K)[0])
        np.testing.assert_array_equal(B[1], np.eye(K)[-1])

    def test_bernstein_midpoint(self):
        np.testing.assert_allclose(eval_basis(make_basis(4), [0.5])[0], [0.125, 0.375, 0.375, 0.125], atol=1e-15)

    @pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, np.nan])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            eval_basis(make_basis(5), [t])

    @pytest.mark.parametrize("K,order", [(4, 4), (5, 4), (9, 4), (11, 4), (3, 3), (6, 2)])
    def test_matches_scipy(self, K, order):
        b = make_basis(K, order)
        ours = eval_basis(b, GRID)
        ref = BSpline.design_matrix(GRID, b.knots, order - 1).toarray()
        np.testing.assert_allclose(ours, ref, atol=1e-13)

    @pytest.mark.parametrize("K", [4, 5, 6, 9, 11])
    def test_partition_local_support(self, K):
        B = eval_basis(make_basis(K), GRID)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) < 1e-12
        assert (B >= 0).all()
        assert ((B > 0).sum(axis=1) <= 4).all()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(4, 15), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
    def test_partition_property(self, K, ts):
        B = eval_basis(make_basis(K), ts)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) < 1e-12

    def test_batched_coefficients(self):
        b = make_basis(6)
        C = np.random.default_rng(0).normal(size=(3, 6))
        out = eval_spline(b, C, GRID)
        for i in range(3):
            np.testing.assert_allclose(out[i], eval_basis(b, GRID) @ C[i], rtol=1e-13, atol=1e-10)


class TestGreville:
    def test_bernstein(self):
        np.testing.assert_allclose(greville(make_basis(4)), [0, 1 / 3, 2 / 3, 1])

    @pytest.mark.parametrize("K", [4, 5, 6, 9, 11])
    def test_identity(self, K):
        b = make_basis(K)
        g = greville(b)
        assert g[0] == 0 and g[-1] == 1
        assert np.max(np.abs(eval_spline(b, g, GRID) - GRID)) < 1e-12


class TestWarp:
    @pytest.mark.parametrize("K", [3, 6, 9])
    def test_identity_warp(self, K):
        b = make_basis(K, min(K, 4))
        w = np.diff(greville(b))
        assert np.max(np.abs(eval_warp(w, b, GRID) - GRID)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(4, 10))
    def test_endpoints_and_monotone(self, seed, K):
        b = make_basis(K)
        w = random_simplex(np.random.default_rng(seed), K - 1)
        h = eval_warp(w, b, GRID)
        assert h[0] == 0.0 and h[-1] == 1.0
        assert np.all(np.diff(h) > 0)

    def test_invalid(self):
        b = make_basis(6)
        with pytest.raises(InvalidWarpError):
            eval_warp([0.5, 0.5, 0.0, 0.0, 0.0], b, GRID)
        with pytest.raises(InvalidWarpError):
            eval_warp([0.2, 0.2, 0.2, 0.2, 0.3], b, GRID)
        with pytest.raises(InvalidWarpError):
            eval_warp([0.5, 0.5], b, GRID)

    def test_warp_basis_matrix(self, shape1):
        params, bf, bh = shape1
        ident = np.diff(greville(bh))
        np.testing.assert_allclose(warp_basis_matrix(ident, bh, bf, GRID), eval_basis(bf, GRID), atol=1e-12)
        w = random_simplex(np.random.default_rng(1), 5)
        np.testing.assert_allclose(warp_basis_matrix(w, bh, bf, GRID).sum(axis=1), 1.0, atol=1e-12)
        assert (warp_basis_matrix(ident, bh, bf, [0.0]) @ params.alpha)[0] == 0.0
