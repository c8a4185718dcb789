import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from wlde import growth
from wlde.errors import DegenerateThresholdWarning, DomainError
from wlde.growth import GrowthParams


def test_fixed_points_are_fixed(params):
    for v_star in growth.fixed_points(params):
        assert growth.evaluate(params, v_star) == pytest.approx(v_star, abs=1e-12)


def test_fixed_points_order(params):
    assert growth.fixed_points(params) == pytest.approx((0.0, 0.3 / 0.7, 1.0))


def test_slopes_at_fixed_points(params):
    s_f, s_h = params.s_f, params.s_h
    assert growth.derivative(params, 0.0) == pytest.approx(1 - s_f)
    assert growth.derivative(params, 1.0) == pytest.approx((1 - s_h) / (1 - s_f))
    assert growth.derivative(params, s_f / s_h) == pytest.approx((s_h - s_f**2) / (s_h - s_h * s_f))
    assert growth.derivative(params, s_f / s_h) > 1


@pytest.mark.parametrize("s_f,s_h", [(0.7, 0.7), (0.8, 0.3), (0.0, 0.5), (0.2, 1.0)])
def test_invalid_params_rejected(s_f, s_h):
    with pytest.raises(ValueError, match="GrowthParams"):
        GrowthParams(s_f=s_f, s_h=s_h)


def test_domain_checks(params):
    with pytest.raises(DomainError):
        growth.evaluate(params, 1.5)
    with pytest.raises(DomainError):
        growth.derivative(params, -0.1)
    assert growth.evaluate(params, -1e-13) == 0.0


def test_vectorized_matches_scalar(params):
    grid = np.linspace(0, 1, 11)
    values = growth.evaluate(params, grid)
    assert values.shape == grid.shape
    assert values[3] == growth.evaluate(params, grid[3])


def test_from_allee():
    p = growth.from_allee(0.8, 0.4)
    assert p.s_f == pytest.approx(0.32)
    assert p.allee_threshold == pytest.approx(0.4)
    with pytest.raises(DomainError):
        growth.from_allee(0.8, 1.0)


def test_threshold_near_one_warns():
    p = GrowthParams(s_f=0.8995, s_h=0.9)
    with pytest.warns(DegenerateThresholdWarning):
        growth.fixed_points(p)


@st.composite
def growth_params(draw):
    s_h = draw(st.floats(min_value=0.1, max_value=0.95))
    ratio = draw(st.floats(min_value=0.05, max_value=0.95))
    return GrowthParams(s_f=ratio * s_h, s_h=s_h)


@given(p=growth_params(), v=st.floats(min_value=0.0, max_value=1.0))
def test_map_stays_in_unit_interval(p, v):
    assert 0.0 <= growth.evaluate(p, v) <= 1.0


@given(p=growth_params(), u=st.floats(min_value=0.01, max_value=0.99))
def test_bistable_direction(p, u):
    """Below the threshold frequencies fall, above it they rise."""
    a = p.allee_threshold
    below = u * a
    above = a + u * (1 - a)
    assert growth.evaluate(p, below) < below
    assert growth.evaluate(p, above) > above


@given(p=growth_params(), v=st.floats(min_value=0.05, max_value=0.95))
def test_derivative_matches_finite_difference(p, v):
    h = 1e-6
    numeric = (growth.evaluate(p, v + h) - growth.evaluate(p, v - h)) / (2 * h)
    assert growth.derivative(p, v) == pytest.approx(numeric, rel=1e-5, abs=1e-6)
