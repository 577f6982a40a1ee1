"""Vaccine-efficacy durability under placebo crossover.

Simulates randomized vaccine trials with placebo crossover and estimates
time-varying vaccine efficacy VE(s) = 1 - exp(f(s)) via calendar-time
proportional-hazards regression with constant, log-linear,
piecewise-constant and penalized-spline decay models.
"""

from ._kernels import HAVE_COMPILED, active_backend, set_backend
from .coxph import (ConstantModel, FitResult, LogLinearModel, PiecewiseModel,
                    SplineModel, fit, information, log_partial_likelihood,
                    score)
from .hazards import (DAYS_PER_YEAR, BaselineHazard, ConstantVE,
                      HazardContext, LogLinearVE, PiecewiseConstantVE,
                      PSplineVE, cumulative_hazard, hazard_at,
                      linear_predictor, ve_at)
from .inference import (LRTResult, VECurve, chisq_sf, crossover_period_ve,
                        lrt_time_varying, ve_change, ve_curve)
from .pspline import PSplineBasis, build_basis, choose_lambda, effective_df, fit_pspline
from .simulate import (AtCases, AtTime, ContinuousUniform, FrailtySpec,
                       Parallel, Scenario, TrialDesign, calibrate_rates,
                       draw_entry_times, draw_event_time, nominal_rates,
                       simulate_trial)
from .study import (ModelRequest, StudySpec, compare_designs, frailty_study,
                    run_study)
from .trialdata import (IntervalArrays, ParticipantRecord, RiskInterval,
                        read_intervals, read_records, reshape_counting_process,
                        validate, write_intervals, write_records)

__version__ = "0.1.0"
