"""Separable polynomial cost functions."""

import numpy as np
import pytest
import sympy as sp

from lago.cost import CostFunction

# the two cost functions used throughout the worked scenarios
CUBIC_TWO_COMPONENT = CostFunction((
    (0, 3, 2.0), (0, 2, -1.19), (0, 1, 10.0), (None, 0, 10.0),
    (1, 3, 0.1), (1, 2, -0.2), (1, 1, 2.0),
))
BETTERBIRTH = CostFunction.from_config([
    [1, 1, 380.0], [1, 2, -24.0], [1, 3, 0.6],
    [2, 1, 1700.0], [2, 2, -950.0], [2, 3, 220.0],
])


def test_cubic_cost_fixture_values():
    assert CUBIC_TWO_COMPONENT.evaluate([0.0, 0.0]) == pytest.approx(10.0)
    # 2 - 1.19 + 10 + 10 + 0.1 - 0.2 + 2
    assert CUBIC_TWO_COMPONENT.evaluate([1.0, 1.0]) == pytest.approx(22.71)
    grad0 = CUBIC_TWO_COMPONENT.marginal([0.0, 0.0])
    assert grad0 == pytest.approx([10.0, 2.0])
    grad1 = CUBIC_TWO_COMPONENT.marginal([1.0, 0.0])
    assert grad1[0] == pytest.approx(6.0 - 2.38 + 10.0)  # 13.62


def test_betterbirth_cost_at_published_package():
    # 27 visits, 1 launch-phase unit
    assert BETTERBIRTH.evaluate([27.0, 1.0]) == pytest.approx(5543.8)


def test_evaluation_and_gradient_match_sympy():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(1, 4))
        xs = sp.symbols(f"x0:{n}")
        expr = sp.Integer(0)
        terms = []
        for comp in range(n):
            for degree in range(1, 4):
                if rng.random() < 0.6:
                    c = float(rng.normal())
                    terms.append((comp, degree, c))
                    expr += c * xs[comp] ** degree
        const = float(rng.normal())
        terms.append((None, 0, const))
        expr += const
        cost = CostFunction(tuple(terms))
        point = rng.uniform(0.0, 3.0, n)
        subs = dict(zip(xs, point))
        assert cost.evaluate(point) == pytest.approx(float(expr.subs(subs)), rel=1e-10, abs=1e-10)
        sym_grad = [float(sp.diff(expr, xv).subs(subs)) for xv in xs]
        assert np.allclose(cost.marginal(point), sym_grad, rtol=1e-10, atol=1e-10)


def test_linear_constructor_and_flags():
    lin = CostFunction.linear([1.0, 4.0])
    assert lin.evaluate([3.2496, 0.0]) == pytest.approx(3.2496)
    assert lin.is_linear
    assert not CUBIC_TWO_COMPONENT.is_linear
    assert lin.constant == 0.0
    assert CUBIC_TWO_COMPONENT.constant == pytest.approx(10.0)


def test_component_coefficients_ascending():
    coeffs = CUBIC_TWO_COMPONENT.component_coefficients(0)
    assert coeffs == pytest.approx([0.0, 10.0, -1.19, 2.0])
    # absent component -> all zeros, padded to the requested minimum length
    assert CUBIC_TWO_COMPONENT.component_coefficients(5).tolist() == [0.0, 0.0]


def test_config_round_trip_is_one_based():
    cfg = BETTERBIRTH.to_config()
    assert cfg[0] == [1, 1, 380.0]
    assert CostFunction.from_config(cfg) == BETTERBIRTH
    cubic_cfg = CUBIC_TWO_COMPONENT.to_config()
    assert [None, 0, 10.0] in cubic_cfg
    assert CostFunction.from_config(cubic_cfg) == CUBIC_TWO_COMPONENT


def test_validation_errors():
    with pytest.raises(ValueError):
        CostFunction(((0, 1),))  # wrong arity
    with pytest.raises(ValueError):
        CostFunction(((0, -1, 2.0),))
    with pytest.raises(ValueError):
        CostFunction(((None, 2, 1.0),))  # constant with a degree
    with pytest.raises(ValueError):
        CostFunction(((-1, 1, 1.0),))
    with pytest.raises(ValueError):
        CostFunction.from_config([[0, 1, 1.0]])  # config components are 1-based
    with pytest.raises(ValueError):
        CUBIC_TWO_COMPONENT.evaluate([1.0])  # package too short


def test_separability():
    """Changing one component moves the cost by that component's polynomial only."""
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 2, 2)
    y = x.copy()
    y[1] = 1.7
    delta = CUBIC_TWO_COMPONENT.evaluate(y) - CUBIC_TWO_COMPONENT.evaluate(x)
    poly = CUBIC_TWO_COMPONENT.component_coefficients(1)
    direct = np.polyval(poly[::-1], 1.7) - np.polyval(poly[::-1], x[1])
    assert delta == pytest.approx(direct, rel=1e-12)
