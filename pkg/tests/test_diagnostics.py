"""Dominance thresholds and the solution-stability probe.

The dominance values are checked two ways: against the published planning
table for the two-component logistic setting (percent above control, ±3
percentage points), and against the defining property itself — power
certifies at the returned level and fails just below it — which is
independent of the bisection that produced the number.
"""

import json
import math

import numpy as np
import pytest

from lago.cost import CostFunction
from lago.diagnostics import (
    Assumption7Report,
    DominanceDesign,
    dominance_design,
    dominance_threshold,
    verify_assumption7,
)
from lago.errors import InfeasibleError
from lago.model import FittedModel, expit
from lago.optimizer import min_cost_subject_to_threshold
from lago.power import ArmSummary, TestSelector as Selector, unconditional_power_at_level
from lago.sim import StagePlan

BETA = (0.1, 0.3, 0.15)
CONTROL = expit(0.1)


# ---------------------------------------------------------------------------
# dominance threshold
# ---------------------------------------------------------------------------

def pct_above_control(level):
    return 100.0 * (level - CONTROL) / CONTROL


@pytest.mark.parametrize(
    "pi, published_pct",
    [(0.8, 35.4), (0.9, 46.5)],
)
def test_dominance_matches_published_planning_values(pi, published_pct):
    level = dominance_threshold(dominance_design(40), BETA, pi=pi)
    assert pct_above_control(level) == pytest.approx(published_pct, abs=3.0)


def test_dominance_level_is_the_smallest_certifying_level():
    # defining property, independent of how the bisection found the number
    design = dominance_design(40)
    level = dominance_threshold(design, BETA, pi=0.8)
    from lago.diagnostics import _expectation_model, _expectation_summary

    model = _expectation_model(design, BETA)
    summary = _expectation_summary(design, BETA)
    sel = Selector("z_unpooled")
    assert unconditional_power_at_level(level, model, summary, sel, 0.05) >= 0.8
    assert unconditional_power_at_level(level - 1e-3, model, summary, sel, 0.05) < 0.8


def test_dominance_collapses_to_control_as_pi_approaches_alpha():
    level = dominance_threshold(dominance_design(40), BETA, pi=0.0501, alpha=0.05)
    assert level == pytest.approx(CONTROL, abs=1e-3)


def test_dominance_nondecreasing_in_power_goal():
    design = dominance_design(40)
    levels = [dominance_threshold(design, BETA, pi=pi) for pi in (0.5, 0.7, 0.8, 0.9, 0.95)]
    assert all(b >= a - 1e-12 for a, b in zip(levels, levels[1:]))


def test_dominance_nonincreasing_in_sample_size():
    levels = [
        dominance_threshold(dominance_design(nj), BETA, pi=0.8)
        for nj in (20, 40, 60, 100)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(levels, levels[1:]))


def test_dominance_conditional_approach_is_finite_and_ordered():
    design = dominance_design(40)
    level = dominance_threshold(design, BETA, pi=0.8, approach="conditional")
    assert CONTROL < level < 1.0


def test_dominance_wald_test_requires_a_cost():
    with pytest.raises(ValueError, match="cost"):
        dominance_threshold(
            dominance_design(40), BETA, pi=0.8, test=Selector("wald_pdf_binary")
        )


def test_dominance_design_validation():
    stage = StagePlan(2, 2, 40, probe_packages=((1.0, 0.0), (0.0, 4.0)))
    with pytest.raises(ValueError, match="two stages"):
        DominanceDesign(stages=(stage,), bounds=((0, 2), (0, 8)))
    bare = StagePlan(2, 2, 40)
    with pytest.raises(ValueError, match="probe"):
        DominanceDesign(stages=(bare, bare), bounds=((0, 2), (0, 8)))


# ---------------------------------------------------------------------------
# stability probe
# ---------------------------------------------------------------------------

LIN_COST = CostFunction(((0, 1, 1.0), (1, 1, 4.0)))
BOUNDS = ((0.0, 4.0), (0.0, 8.0))


def test_distinct_benefit_cost_ratios_pass():
    report = verify_assumption7(
        BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.02, L=100, eta=0.5, seed=11
    )
    assert report.passed
    assert report.delta_max < 0.5
    assert not report.failures
    direct = min_cost_subject_to_threshold(
        FittedModel(np.array(BETA), "logit", np.zeros((3, 3)), 0, "assumed"),
        LIN_COST, BOUNDS, 0.7455,
    )
    assert np.allclose(report.x_hat, direct)


def test_delta_max_vanishes_with_epsilon():
    report = verify_assumption7(
        BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=1e-9, L=50, eta=0.01, seed=11
    )
    assert report.delta_max < 1e-6
    assert report.passed


def test_equal_ratio_tie_fails():
    # both components buy linear predictor at the same price, so the
    # minimizer jumps between single-component corners under perturbation
    tie_cost = CostFunction(((0, 1, 1.0), (1, 1, 1.0)))
    report = verify_assumption7(
        (0.0, 0.3, 0.3), tie_cost, ((0, 4), (0, 4)),
        goal=0.70, epsilon=0.05, L=200, eta=0.5, seed=7,
    )
    assert not report.passed
    # corners sit at (eta/0.3, 0) and (0, eta/0.3): about 2.82 * sqrt(2) apart
    assert report.delta_max > 3.0


def test_same_seed_reproduces_report():
    kw = dict(goal=0.7455, epsilon=0.05, L=60, eta=0.5, seed=3)
    a = verify_assumption7(BETA, LIN_COST, BOUNDS, **kw)
    b = verify_assumption7(BETA, LIN_COST, BOUNDS, **kw)
    assert a.to_dict() == b.to_dict()
    assert a.seed == 3


def test_different_seeds_differ():
    a = verify_assumption7(BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.05, L=60, seed=3)
    b = verify_assumption7(BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.05, L=60, seed=4)
    assert a.delta_max != b.delta_max


def test_perturbed_infeasibility_is_recorded_not_raised():
    # predictor ceiling at the estimate is 0.36 (p_max 0.589); goal 0.585
    # is feasible there but not at many ball draws
    beta = (0.1, 0.05, 0.02)
    cost = CostFunction(((0, 1, 1.0), (1, 1, 1.0)))
    report = verify_assumption7(
        beta, cost, ((0, 2), (0, 8)), goal=0.585, epsilon=0.08, L=150, eta=5.0, seed=13
    )
    assert report.failures
    assert {f["error"] for f in report.failures} == {"InfeasibleError"}
    assert report.centers[0]["failed_samples"] == len(report.failures)
    assert report.samples_per_center == 150


def test_infeasible_at_the_estimate_raises():
    with pytest.raises(InfeasibleError):
        verify_assumption7(
            (0.1, 0.05, 0.02), CostFunction(((0, 1, 1.0), (1, 1, 1.0))),
            ((0, 2), (0, 8)), goal=0.60, epsilon=0.08, L=10, seed=13,
        )


def test_extended_mode_sweeps_confidence_band():
    cov = np.diag([0.04, 0.01, 0.0025])
    model = FittedModel(np.array(BETA), "logit", cov, n_used=160, kind="binary")
    report = verify_assumption7(
        model, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.02,
        L=40, eta=2.0, extended=True, M=3, seed=5,
    )
    assert len(report.centers) == 4  # estimate + M band points
    centers = [c["beta"] for c in report.centers]
    assert centers[0] == pytest.approx(list(BETA))
    # band points sweep outward with the quantile, same direction each axis
    assert centers[1][1] < centers[2][1] < centers[3][1]


def test_extended_mode_needs_a_covariance():
    with pytest.raises(ValueError, match="covariance"):
        verify_assumption7(
            BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.02,
            L=10, extended=True, seed=5,
        )


def test_report_serializes_to_json():
    report = verify_assumption7(
        BETA, LIN_COST, BOUNDS, goal=0.7455, epsilon=0.02, L=20, seed=1
    )
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload["passed"] is True
    assert payload["seed"] == 1
    assert isinstance(payload["delta_max"], float)


@pytest.mark.parametrize(
    "kw",
    [dict(epsilon=0.0), dict(epsilon=-1.0), dict(eta=0.0), dict(L=0), dict(M=0)],
)
def test_probe_argument_validation(kw):
    args = dict(goal=0.7455, epsilon=0.02, L=10, eta=0.5, seed=1)
    args.update(kw)
    with pytest.raises(ValueError):
        verify_assumption7(BETA, LIN_COST, BOUNDS, **args)
