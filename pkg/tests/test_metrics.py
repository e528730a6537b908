import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import saemreg.metrics as metrics
from saemreg.errors import DataError, NumericalError, ParameterError
from saemreg.metrics import acceptance_summary, imse, imspe, rmse, run_study
from saemreg.saem import SaemConfig
from saemreg.splines import make_basis

SHORT = SaemConfig(burn_in=100, total_iters=250)
coef = st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6).map(np.array)


class TestImse:
    def test_zero(self):
        a = np.arange(5.0)
        assert imse(a, a, make_basis(5)) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(coef, st.floats(-100, 100))
    def test_constant_offset(self, a, c):
        assert imse(a + c, a, make_basis(6)) == pytest.approx(c * c, rel=1e-9, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(coef, coef, st.floats(-10, 10), st.floats(-100, 100))
    def test_affine(self, f_hat, f, a, b):
        basis = make_basis(6)
        assert imse(a * f_hat + b, a * f + b, basis) == pytest.approx(a * a * imse(f_hat, f, basis), rel=1e-7, abs=1e-7)

    def test_grid(self):
        with pytest.raises(ParameterError):
            imse(np.zeros(5), np.zeros(5), make_basis(5), grid_size=1)


class TestImspe:
    def test_zero(self):
        g = np.linspace(0, 1, 11)
        assert imspe(g, g) == 0.0

    def test_polynomial(self):
        g = np.linspace(0, 1, 1001)
        assert imspe(g, g**2) == pytest.approx(1 / 30, rel=1e-5)

    def test_average_over_curves(self):
        g = np.linspace(0, 1, 1001)
        assert imspe(np.stack([g, g]), np.stack([g, g**2])) == pytest.approx(1 / 60, rel=1e-5)

    def test_mismatch(self):
        with pytest.raises(DataError):
            imspe(np.zeros(3), np.zeros(4))


def test_rmse_and_acceptance():
    assert rmse([1.0, 1.0], [0.0, 0.0]) == 1.0
    s = acceptance_summary([0.1, 0.2, 0.3, 0.4])
    assert s["fraction_in_band"] == 0.5 and s["min"] == 0.1


class TestStudy:
    def test_smoke_and_deterministic(self, tmp_path):
        a = run_study("shape1", 40, 2, seed=5, config=SHORT, n_curves=4)
        b = run_study("shape1", 40, 2, seed=5, config=SHORT, n_curves=4)
        assert a.aggregate()["completed"] == 2
        for ra, rb in zip(a.replicates, b.replicates):
            assert (ra.imse, ra.imspe) == (rb.imse, rb.imspe)
            assert np.isfinite(ra.imse) and ra.imse >= 0 and ra.imspe >= 0
        assert a.replicates[0].sim_seed != a.replicates[1].sim_seed
        a.write_json(tmp_path / "r.json")
        a.write_csv(tmp_path / "r.csv")
        back = json.loads((tmp_path / "r.json").read_text())
        assert back["aggregate"]["mean_imse"] == pytest.approx(a.mean("imse"))
        assert (tmp_path / "r.csv").read_text().count("\n") == 3

    def test_order_independent(self):
        both = run_study("shape1", 40, 2, seed=5, config=SHORT, n_curves=4)
        first = run_study("shape1", 40, 1, seed=5, config=SHORT, n_curves=4)
        assert first.replicates[0].imse == both.replicates[0].imse

    def test_failures_recorded(self, monkeypatch):
        def boom(*a, **k):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(metrics, "fit", boom)
        r = run_study("shape1", 20, 2, seed=0, config=SHORT, n_curves=3)
        assert r.failures["numerical_error"] == 2
        assert np.isnan(r.aggregate()["mean_imse"])

    def test_time_budget(self):
        r = run_study("shape1", 20, 1, seed=0, config=SHORT, n_curves=3, max_seconds=0.0)
        assert r.failures["max_time_exceeded"] == 1

    def test_bad_scenario(self):
        with pytest.raises(ParameterError):
            run_study("shape9", 20, 1)
