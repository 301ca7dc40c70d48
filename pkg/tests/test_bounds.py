import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctstl.encoder import term_extremes, term_window_min

from oracles import dense_term_min


def test_linear_decrease_min_at_end():
    v, t = term_window_min(-1.0, 0.0, 1, 0.5)
    assert v == pytest.approx(-0.5, abs=1e-15)
    assert t == pytest.approx(0.5)


def test_interior_stationary_point():
    v, t = term_window_min(-1.0, -2.0, 1, 1.0)
    assert v == pytest.approx(-0.5 * math.exp(-1.0), abs=1e-15)
    assert t == pytest.approx(0.5)


def test_positive_growing_term_min_at_start():
    v, t = term_window_min(2.0, 1.0, 0, 3.0)
    assert v == 2.0 and t == 0.0


def test_extremes_bracket_the_basis_function():
    ext = term_extremes(-2.0, 1, 1.0)
    assert ext.phi_min == 0.0
    assert ext.phi_max == pytest.approx(0.5 * math.exp(-1.0))
    assert ext.min_of(-1.0) == pytest.approx((-0.5 * math.exp(-1.0), 0.5))
    assert ext.min_of(1.0) == (0.0, 0.0)


def test_constant_term():
    assert term_extremes(0.0, 0, 0.4).constant
    assert not term_extremes(-3.0, 0, 0.4).constant
    assert term_window_min(-7.0, 0.0, 0, 2.0) == (-7.0, 0.0)


def test_nonpositive_window_rejected():
    with pytest.raises(ValueError):
        term_extremes(1.0, 0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(-5, 5), st.floats(-4, 4), st.integers(0, 4), st.floats(0.01, 2.0))
def test_matches_dense_sampling(coef, lam, j, tau):
    v, t = term_window_min(coef, lam, j, tau)
    dense, _ = dense_term_min(coef, lam, j, tau)
    assert v <= dense + 1e-12 * (1 + abs(coef))
    assert v >= dense - 1e-8 * (1 + abs(coef))
    assert 0.0 <= t <= tau
    assert coef * math.exp(lam * t) * t ** j == pytest.approx(v, abs=1e-12 * (1 + abs(v)))


def test_min_of_sum_bounded_by_sum_of_mins():
    rng = np.random.default_rng(1)
    s = np.linspace(0.0, 1.0, 2001)
    for _ in range(50):
        terms = [(rng.uniform(-2, 2), rng.uniform(-3, 3), int(rng.integers(0, 3))) for _ in range(3)]
        total = sum(c * np.exp(l * s) * s ** j for c, l, j in terms)
        bound = sum(term_window_min(c, l, j, 1.0)[0] for c, l, j in terms)
        assert bound <= total.min() + 1e-12
