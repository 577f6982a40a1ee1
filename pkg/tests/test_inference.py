import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, special

from vecross import coxph, inference, pspline
from vecross.coxph import ConstantModel, LogLinearModel
from vecross.inference import (chisq_sf, crossover_period_ve, lrt_time_varying,
                               ve_change, ve_curve)

from conftest import random_interval_data


@pytest.fixture(scope="module")
def loglinear_fit():
    rng = np.random.default_rng(14)
    data = random_interval_data(rng, 200)
    return data, coxph.fit(data, LogLinearModel(slope_scale=365.0))


class TestVECurve:
    def test_constant_model_flat_curve(self):
        rng = np.random.default_rng(1)
        data = random_interval_data(rng, 80)
        fit = coxph.fit(data, ConstantModel())
        curve = ve_curve(fit, np.array([0.0, 100.0, 400.0]))
        assert np.ptp(curve.linear_predictor) == 0.0
        assert np.ptp(curve.se) == 0.0
        est, se = fit.params[0], fit.se()[0]
        np.testing.assert_allclose(curve.ve, 1 - math.exp(est))
        np.testing.assert_allclose(curve.ve_lo,
                                   1 - math.exp(est + 1.959964 * se))

    def test_worked_example_ve_values(self, example_data):
        fit = coxph.fit(example_data, LogLinearModel(slope_scale=1.0))
        curve = ve_curve(fit, np.array([0.0, 30.0]))
        assert curve.ve[0] == pytest.approx(0.561, abs=1e-3)
        assert curve.ve[1] == pytest.approx(0.028, abs=1e-3)

    def test_ci_contains_estimate_and_ve_below_one(self, loglinear_fit):
        _, fit = loglinear_fit
        curve = ve_curve(fit, np.linspace(0, 900, 31))
        assert np.all(curve.ve_lo <= curve.ve)
        assert np.all(curve.ve <= curve.ve_hi)
        assert np.all(curve.ve < 1.0)

    def test_wald_variance_vs_parametric_bootstrap(self, loglinear_fit):
        _, fit = loglinear_fit
        s = 365.0
        rng = np.random.default_rng(99)
        draws = rng.multivariate_normal(fit.params, fit.cov, size=10_000)
        f_draws = draws[:, 0] + draws[:, 1] * (s / 365.0)
        curve = ve_curve(fit, np.array([s]))
        analytic = curve.se[0] ** 2
        boot = f_draws.var(ddof=1)
        assert analytic == pytest.approx(boot, rel=0.03)
        expected = fit.cov[0, 0] + 2 * fit.cov[0, 1] + fit.cov[1, 1]
        assert analytic == pytest.approx(expected, rel=1e-12)

    def test_negative_s_rejected(self, loglinear_fit):
        _, fit = loglinear_fit
        with pytest.raises(ValueError):
            ve_curve(fit, np.array([-1.0]))


class TestVEChange:
    def test_zero_at_origin(self, loglinear_fit):
        _, fit = loglinear_fit
        est, se, _ = ve_change(fit, 0.0)
        assert est == 0.0
        assert se == 0.0

    def test_loglinear_change_is_slope_times_s(self, loglinear_fit):
        _, fit = loglinear_fit
        est, se, _ = ve_change(fit, 1.5 * 365.0)
        assert est == pytest.approx(1.5 * fit.params[1], rel=1e-12)
        assert se == pytest.approx(1.5 * math.sqrt(fit.cov[1, 1]), rel=1e-12)
        # the waning scenario's change over 1.5 years
        assert 1.5 * 0.98 == pytest.approx(1.47)
        assert -1.9 + 1.47 == pytest.approx(-0.43)

    def test_constant_model_change_is_zero(self):
        rng = np.random.default_rng(2)
        data = random_interval_data(rng, 80)
        fit = coxph.fit(data, ConstantModel())
        for s in (10.0, 365.0, 900.0):
            est, se, _ = ve_change(fit, s)
            assert est == 0.0 and se == 0.0

    def test_change_per_unit_constant_in_s(self, loglinear_fit):
        _, fit = loglinear_fit
        vals = [ve_change(fit, s)[0] / s for s in (50.0, 200.0, 700.0)]
        assert max(vals) - min(vals) < 1e-15


class TestChisqSf:
    def test_at_zero(self):
        assert chisq_sf(0.0, 1.0) == 1.0
        assert chisq_sf(0.0, 3.1) == 1.0

    def test_df1_critical_value(self):
        # quadrature oracle for the df=1 upper tail at the 5% critical value
        pdf = lambda u: math.exp(-u / 2) / math.sqrt(2 * math.pi * u)
        oracle, _ = integrate.quad(pdf, 3.84146, np.inf)
        assert chisq_sf(3.84146, 1.0) == pytest.approx(0.0500, abs=1e-4)
        assert chisq_sf(3.84146, 1.0) == pytest.approx(oracle, abs=1e-10)

    def test_fractional_df_against_quadrature(self):
        df = 3.1
        norm = 1.0 / (2 ** (df / 2) * math.gamma(df / 2))
        pdf = lambda u: norm * u ** (df / 2 - 1) * math.exp(-u / 2)
        oracle, err = integrate.quad(pdf, 20.0, np.inf, epsabs=1e-14,
                                     epsrel=1e-12)
        assert err < 1e-10
        assert chisq_sf(20.0, df) == pytest.approx(oracle, abs=1e-8)

    def test_against_scipy_grid(self):
        for df in (0.5, 1.0, 2.0, 3.1, 7.7, 40.0):
            for x in (1e-8, 0.3, 1.0, 4.0, 15.0, 80.0):
                assert chisq_sf(x, df) == pytest.approx(
                    float(special.gammaincc(df / 2, x / 2)), abs=1e-12)

    def test_monotonicity(self):
        xs = np.linspace(0.01, 30, 50)
        vals = [chisq_sf(x, 3.1) for x in xs]
        assert all(b < a for a, b in zip(vals[:-1], vals[1:]))
        dfs = np.linspace(0.5, 20, 40)
        vals = [chisq_sf(5.0, d) for d in dfs]
        assert all(b > a for a, b in zip(vals[:-1], vals[1:]))

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            chisq_sf(-1.0, 1.0)
        with pytest.raises(ValueError):
            chisq_sf(1.0, 0.0)


class TestLRT:
    def test_identical_models(self):
        rng = np.random.default_rng(3)
        data = random_interval_data(rng, 80)
        fit = coxph.fit(data, ConstantModel())
        res = lrt_time_varying(fit, fit)
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_loglinear_df_one(self, example_data):
        null = coxph.fit(example_data, ConstantModel())
        full = coxph.fit(example_data, LogLinearModel(slope_scale=1.0))
        res = lrt_time_varying(full, null)
        assert res.df == 1.0
        assert res.statistic == pytest.approx(
            2 * (full.loglik - null.loglik))
        assert 0.0 <= res.p_value <= 1.0

    def test_pspline_uses_effective_df(self, example_data):
        rng = np.random.default_rng(4)
        data = random_interval_data(rng, 150)
        null = coxph.fit(data, ConstantModel())
        full = pspline.fit_pspline(data, lam=50.0, n_terms=5)
        res = lrt_time_varying(full, null)
        assert res.df == pytest.approx(full.eff_df)

    def test_non_nesting_rejected(self, example_data):
        full = coxph.fit(example_data, LogLinearModel(slope_scale=1.0))
        with pytest.raises(ValueError, match="constant"):
            lrt_time_varying(full, full)

    def test_null_above_full_rejected(self, example_data):
        null = coxph.fit(example_data, ConstantModel())
        full = coxph.fit(example_data, LogLinearModel(slope_scale=1.0))
        # swap the roles: the "full" fit now has the lower likelihood
        with pytest.raises(ValueError, match="not nested|below"):
            broken = coxph.FitResult(
                model=full.model, params=full.params, names=full.names,
                cov=full.cov, loglik=null.loglik - 5.0,
                penalized_loglik=0.0, iterations=1, converged=True,
                eff_df=2.0, n_events=3, n_intervals=15, ties="breslow")
            lrt_time_varying(broken, null)


class TestPeriodArithmetic:
    def test_worked_split(self):
        res = crossover_period_ve(20, 100, 20, 12)
        assert res.ve_period1 == Fraction(4, 5)
        assert res.counterfactual_placebo_cases == Fraction(60)
        assert res.ve_period2 == Fraction(2, 3)

    def test_exactness_not_float(self):
        res = crossover_period_ve(1, 3, 1, 1)
        assert res.ve_period1 == Fraction(2, 3)
        assert res.counterfactual_placebo_cases == Fraction(3, 1)
        assert res.ve_period2 == Fraction(2, 3)

    def test_full_protection_rejected(self):
        with pytest.raises(ValueError):
            crossover_period_ve(0, 100, 5, 10)


class TestSplineTrend:
    def test_recovers_linear_truth_shape(self):
        # a spline fit to a clean log-linear signal projects to that slope
        from vecross import config as cfgmod
        from vecross.simulate import simulate_trial
        from vecross.trialdata import records_to_arrays, reshape_arrays

        doc = cfgmod.load_document("waning_ve_parallel")
        scn = cfgmod.build_scenario(cfgmod.from_dict(doc))
        records, _ = simulate_trial(scn, seed=7)
        data = reshape_arrays(records_to_arrays(records))
        fit = pspline.fit_pspline(data, target_df=3.1)
        trend, trend_se = inference.spline_linear_trend(fit)
        ll = coxph.fit(data, LogLinearModel(), work=None)
        assert trend == pytest.approx(ll.params[1], abs=3 * trend_se)

    def test_equivariance_under_level_shift(self):
        # moving a constant from the coefficients into the level leaves every
        # reported value unchanged (the curve is the invariant object)
        rng = np.random.default_rng(5)
        data = random_interval_data(rng, 150)
        fit = pspline.fit_pspline(data, lam=30.0, n_terms=5)
        curve = inference.ve_curve(fit, np.linspace(0, 100, 7))
        shifted = coxph.FitResult(
            model=fit.model, params=fit.params + 0.0, names=fit.names,
            cov=fit.cov, loglik=fit.loglik,
            penalized_loglik=fit.penalized_loglik, iterations=fit.iterations,
            converged=fit.converged, eff_df=fit.eff_df,
            n_events=fit.n_events, n_intervals=fit.n_intervals, ties=fit.ties)
        curve2 = inference.ve_curve(shifted, np.linspace(0, 100, 7))
        np.testing.assert_allclose(curve.linear_predictor,
                                   curve2.linear_predictor)
        np.testing.assert_allclose(curve.se, curve2.se)
