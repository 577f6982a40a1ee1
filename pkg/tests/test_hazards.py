import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecross import hazards
from vecross.hazards import (BaselineHazard, ConstantVE, HazardContext,
                             LogLinearVE, PiecewiseConstantVE, PSplineVE,
                             cumulative_hazard, hazard_at, linear_predictor,
                             ve_at)
from vecross.pspline import build_basis


def trapezoid_cumhaz(t1, t2, baseline, ctx, profile, n=10_000):
    """Trapezoid-rule oracle; valid on intervals where the hazard is smooth."""
    grid = np.linspace(t1, t2, n + 1)
    vals = hazard_at(grid, baseline, ctx, profile)
    return float(np.trapezoid(vals, grid))


def midpoint_cumhaz(t1, t2, breaks, baseline, ctx, profile, n=20_000):
    """Composite midpoint oracle; never samples the jump points themselves."""
    pts = sorted({t1, t2, *(b for b in breaks if t1 < b < t2)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        h = (b - a) / n
        mids = a + h * (np.arange(n) + 0.5)
        total += float(hazard_at(mids, baseline, ctx, profile).sum() * h)
    return total


class TestProfiles:
    def test_constant(self):
        p = ConstantVE(math.log(0.25))
        assert linear_predictor(p, 0.0) == pytest.approx(-1.3862943611, abs=1e-9)
        assert linear_predictor(p, 500.0) == linear_predictor(p, 0.0)
        assert ve_at(p, 123.0) == pytest.approx(0.75)

    def test_loglinear_values(self):
        p = LogLinearVE(-1.9, 0.98)
        assert linear_predictor(p, 0.0) == pytest.approx(-1.9)
        assert ve_at(p, 0.0) == pytest.approx(0.8504, abs=1e-4)
        s = 1.5 * hazards.DAYS_PER_YEAR
        assert linear_predictor(p, s) == pytest.approx(-0.43, abs=1e-9)
        assert ve_at(p, s) == pytest.approx(0.3495, abs=1e-4)

    def test_negative_s_rejected(self):
        p = LogLinearVE(-1.9, 0.98)
        with pytest.raises(ValueError):
            linear_predictor(p, -1.0)

    def test_piecewise_right_open_segments(self):
        p = PiecewiseConstantVE((-1.0, -0.5, 0.1), (30.0, 90.0))
        assert linear_predictor(p, 0.0) == -1.0
        assert linear_predictor(p, 29.999) == -1.0
        assert linear_predictor(p, 30.0) == -0.5   # closed-left
        assert linear_predictor(p, 90.0) == 0.1
        assert linear_predictor(p, 1e6) == 0.1

    def test_loglinear_nests_constant(self):
        p0 = LogLinearVE(-0.7, 0.0)
        pc = ConstantVE(-0.7)
        s = np.linspace(0, 900, 37)
        np.testing.assert_allclose(linear_predictor(p0, s),
                                   linear_predictor(pc, s))

    def test_pspline_profile_centered(self):
        basis = build_basis(730.0, 8)
        rng = np.random.default_rng(0)
        p = PSplineVE(level=-1.2, coefs=tuple(rng.normal(size=8)), basis=basis)
        assert linear_predictor(p, 0.0) == pytest.approx(-1.2, abs=1e-12)
        s = np.linspace(0, 730, 50)
        vals = linear_predictor(p, s)
        assert np.all(np.isfinite(vals))

    def test_ve_examples_from_fit(self):
        assert 1 - math.exp(-0.82335) == pytest.approx(0.561, abs=5e-4)
        assert 1 - math.exp(-0.82335 + 30 * 0.02649) == pytest.approx(0.028, abs=5e-4)
        assert ve_at(ConstantVE(0.0), 5.0) == 0.0


class TestBaseline:
    def test_rate_lookup(self):
        h0 = BaselineHazard((10.0, 20.0), (1.0, 2.0, 3.0))
        assert h0.rate_at(0.0) == 1.0
        assert h0.rate_at(10.0) == 2.0   # closed-left
        assert h0.rate_at(25.0) == 3.0
        assert h0.cumulative(0.0, 25.0) == pytest.approx(10 + 20 + 15)

    def test_validation(self):
        with pytest.raises(ValueError):
            BaselineHazard((10.0,), (1.0,))
        with pytest.raises(ValueError):
            BaselineHazard((10.0, 5.0), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            BaselineHazard((), (-1.0,))


class TestHazardAt:
    def test_zero_before_entry(self):
        h0 = BaselineHazard((), (0.01,))
        ctx = HazardContext(entry=50.0)
        assert hazard_at(10.0, h0, ctx, ConstantVE(-1.0)) == 0.0
        assert hazard_at(50.0, h0, ctx, ConstantVE(-1.0)) == 0.0
        assert hazard_at(50.0001, h0, ctx, ConstantVE(-1.0)) > 0.0

    def test_placebo_rate(self):
        h0 = BaselineHazard((), (0.013,))
        ctx = HazardContext(entry=0.0, vacc_time=math.inf)
        assert hazard_at(100.0, h0, ctx, ConstantVE(-5.0)) == pytest.approx(0.013)

    def test_vaccinated_multiplier(self):
        h0 = BaselineHazard((), (0.013,))
        ctx = HazardContext(entry=0.0, vacc_time=100.0)
        assert hazard_at(200.0, h0, ctx, ConstantVE(math.log(0.25))) == \
            pytest.approx(0.25 * 0.013)

    def test_frailty_and_covariates_multiply(self):
        h0 = BaselineHazard((), (0.01,))
        ctx = HazardContext(entry=0.0, vacc_time=math.inf, frailty=2.5,
                            covariate_effect=0.3)
        assert hazard_at(5.0, h0, ctx, ConstantVE(0.0)) == \
            pytest.approx(2.5 * 0.01 * math.exp(0.3))


class TestCumulativeHazard:
    h0 = BaselineHazard((100.0, 250.0), (0.002, 0.005, 0.001))

    def test_constant_rate_unvaccinated(self):
        h0 = BaselineHazard((), (0.004,))
        ctx = HazardContext(entry=0.0)
        assert cumulative_hazard(10.0, 60.0, h0, ctx, ConstantVE(-1.0)) == \
            pytest.approx(0.004 * 50.0)

    def test_entry_clips_integration(self):
        h0 = BaselineHazard((), (0.004,))
        ctx = HazardContext(entry=30.0)
        assert cumulative_hazard(0.0, 60.0, h0, ctx, ConstantVE(-1.0)) == \
            pytest.approx(0.004 * 30.0)

    def test_loglinear_against_trapezoid_oracle(self):
        # one smooth segment: vaccinated well before, no baseline changepoint
        ctx = HazardContext(entry=0.0, vacc_time=30.0)
        profile = LogLinearVE(-1.9, 0.98)
        exact = cumulative_hazard(40.0, 99.0, self.h0, ctx, profile)
        approx = trapezoid_cumhaz(40.0, 99.0, self.h0, ctx, profile)
        assert exact == pytest.approx(approx, rel=1e-8)

    def test_piecewise_profile_against_oracle(self):
        ctx = HazardContext(entry=10.0, vacc_time=50.0, frailty=1.7)
        profile = PiecewiseConstantVE((-2.0, -1.0, -0.2), (60.0, 180.0))
        exact = cumulative_hazard(0.0, 400.0, self.h0, ctx, profile)
        approx = midpoint_cumhaz(0.0, 400.0, (10.0, 50.0, 100.0, 110.0, 230.0,
                                              250.0), self.h0, ctx, profile)
        assert exact == pytest.approx(approx, rel=1e-7)

    def test_spline_profile_quadrature(self):
        basis = build_basis(500.0, 6)
        rng = np.random.default_rng(3)
        profile = PSplineVE(-1.0, tuple(rng.normal(scale=0.5, size=6)), basis)
        ctx = HazardContext(entry=0.0, vacc_time=20.0)
        exact = cumulative_hazard(20.0, 300.0, self.h0, ctx, profile)
        approx = midpoint_cumhaz(20.0, 300.0, (100.0, 250.0), self.h0, ctx,
                                 profile, 40_000)
        assert exact == pytest.approx(approx, rel=1e-7)

    def test_slope_to_zero_limit_branch(self):
        ctx = HazardContext(entry=0.0, vacc_time=0.0)
        tiny = LogLinearVE(-1.0, 1e-12)
        zero = LogLinearVE(-1.0, 0.0)
        a = cumulative_hazard(0.0, 365.0, self.h0, ctx, tiny)
        b = cumulative_hazard(0.0, 365.0, self.h0, ctx, zero)
        assert a == pytest.approx(b, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 400), st.floats(0, 400), st.floats(0, 400))
    def test_additivity(self, x, y, z):
        a, b, c = sorted((x, y, z))
        ctx = HazardContext(entry=25.0, vacc_time=120.0, frailty=0.8)
        profile = LogLinearVE(-1.5, 0.7)
        left = cumulative_hazard(a, b, self.h0, ctx, profile) + \
            cumulative_hazard(b, c, self.h0, ctx, profile)
        both = cumulative_hazard(a, c, self.h0, ctx, profile)
        assert both == pytest.approx(left, abs=1e-12, rel=1e-12)

    def test_nondecreasing_in_t2(self):
        ctx = HazardContext(entry=0.0, vacc_time=50.0)
        profile = LogLinearVE(-1.0, -2.0)
        grid = np.linspace(0, 500, 101)
        vals = [cumulative_hazard(0.0, t, self.h0, ctx, profile) for t in grid]
        assert all(b >= a - 1e-15 for a, b in zip(vals[:-1], vals[1:]))
