import numpy as np
import pytest

from vecross import _kernels, bspline, coxph, set_backend
from vecross._reference import loglik_naive
from vecross.coxph import (ConstantModel, LogLinearModel, PiecewiseModel,
                           SplineModel)
from vecross.pspline import build_basis

from conftest import random_interval_data


def test_compiled_backend_available():
    # the package builds its compiled kernel in this repository; the numpy
    # fallback exists for source checkouts without a C toolchain
    assert _kernels.HAVE_COMPILED
    assert _kernels.active_backend() == "compiled"


def test_set_backend_round_trip():
    old = set_backend("python")
    assert _kernels.active_backend() == "python"
    set_backend(old)
    assert _kernels.active_backend() == "compiled"
    with pytest.raises(ValueError):
        set_backend("fortran")


class TestBSpline:
    def test_partition_of_unity(self):
        knots = bspline.knot_vector(np.linspace(0, 730, 6))
        s = np.linspace(0, 730, 2001)
        rows = bspline.design_matrix(s, knots)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)

    def test_nonnegative_local_support(self):
        knots = bspline.knot_vector(np.linspace(0, 100, 7))
        s = np.linspace(0, 100, 1001)
        rows = bspline.design_matrix(s, knots)
        assert rows.min() >= 0.0
        # each basis function spans degree+1 knot intervals
        L = rows.shape[1]
        for col in range(L):
            support = s[rows[:, col] > 1e-14]
            lo, hi = knots[col], knots[col + 4]
            assert support.min() >= lo - 1e-9
            assert support.max() <= hi + 1e-9

    def test_clamping_beyond_domain(self):
        knots = bspline.knot_vector(np.linspace(0, 50, 4))
        inside = bspline.design_matrix(np.array([50.0]), knots)
        beyond = bspline.design_matrix(np.array([80.0]), knots)
        np.testing.assert_array_equal(inside, beyond)

    def test_matches_scipy(self):
        from scipy.interpolate import BSpline

        knots = bspline.knot_vector(np.linspace(0, 365, 8))
        s = np.linspace(0, 365, 777)
        ours = bspline.design_matrix(s, knots)
        theirs = BSpline.design_matrix(s, knots, 3).toarray()
        np.testing.assert_allclose(ours, theirs, atol=1e-12)


class TestBackendAgreement:
    def evaluate_all(self, data, model, params, ties):
        out = {}
        for backend in ("compiled", "python"):
            set_backend(backend)
            try:
                work = coxph._CoxWork(data)
                out[backend] = work.evaluate(model, params, ties=ties, want=2)
            finally:
                set_backend("compiled")
        return out

    @pytest.mark.parametrize("ties", ["breslow", "efron"])
    def test_differential_random(self, ties):
        rng = np.random.default_rng(21)
        basis = build_basis(120.0, 6)
        models = [ConstantModel(), LogLinearModel(slope_scale=30.0),
                  PiecewiseModel([20.0, 60.0]), SplineModel(basis)]
        checked = 0
        for trial in range(30):
            data = random_interval_data(
                rng, int(rng.integers(6, 40)),
                with_covariates=trial % 2 == 0,
                n_strata=1 + trial % 3,
                force_ties=trial % 3 == 0)
            if data.n_events == 0:
                continue
            model = models[trial % len(models)]
            params = rng.normal(scale=0.4, size=model.n_params
                                + data.n_covariates)
            res = self.evaluate_all(data, model, params, ties)
            ll_c, g_c, H_c = res["compiled"]
            ll_p, g_p, H_p = res["python"]
            assert ll_c == pytest.approx(ll_p, rel=1e-10, abs=1e-10)
            np.testing.assert_allclose(g_c, g_p, rtol=1e-9, atol=1e-10)
            np.testing.assert_allclose(H_c, H_p, rtol=1e-9, atol=1e-10)
            ll_n = loglik_naive(data, model, params, ties=ties)
            assert ll_c == pytest.approx(ll_n, rel=1e-10, abs=1e-10)
            checked += 1
        assert checked >= 20

    def test_fit_agrees_across_backends(self, example_data):
        fits = {}
        for backend in ("compiled", "python"):
            set_backend(backend)
            try:
                fits[backend] = coxph.fit(example_data,
                                          LogLinearModel(slope_scale=1.0))
            finally:
                set_backend("compiled")
        np.testing.assert_allclose(fits["compiled"].params,
                                   fits["python"].params, atol=1e-9)
        np.testing.assert_allclose(fits["compiled"].cov, fits["python"].cov,
                                   rtol=1e-7, atol=1e-12)


def test_spline_row_matches_python_basis():
    # the C translation of the de Boor recursion must agree with bspline.py
    rng = np.random.default_rng(3)
    basis = build_basis(400.0, 9)
    data = random_interval_data(rng, 30)
    model = SplineModel(basis)
    params = rng.normal(scale=0.3, size=9)
    res = {}
    for backend in ("compiled", "python"):
        set_backend(backend)
        try:
            work = coxph._CoxWork(data)
            res[backend] = work.evaluate(model, params, ties="breslow", want=2)
        finally:
            set_backend("compiled")
    np.testing.assert_allclose(res["compiled"][1], res["python"][1],
                               rtol=1e-10, atol=1e-12)
