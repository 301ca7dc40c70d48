import numpy as np
import pytest

from ctstl import stl
from ctstl.dynamics import TimeGrid
from ctstl.errors import (HorizonExceeded, InsufficientTrace, STLParseError, UnalignedInterval,
                          UnknownStateIndex)

from generators import random_formula
from oracles import robustness_brute

P = stl.Predicate


def test_parse_phi3():
    f = stl.parse("G[0.63,0.80](x2 >= 3) & F[1.4,2.0](x2 <= -4)", 2)
    assert f == stl.And((stl.Always(0.63, 0.8, P((0, 1), -3)),
                         stl.Eventually(1.4, 2.0, P((0, -1), -4))))


def test_parse_negation():
    assert stl.parse("!(x1 >= 0)", 1) == stl.Not(P((1,), 0))


def test_parse_eventually_over_conjunction():
    f = stl.parse("F[0.1,0.6](x1 <= -0.5 & x3 >= 0.5)", 4)
    assert f == stl.Eventually(0.1, 0.6, stl.And((P((-1, 0, 0, 0), -0.5), P((0, 0, 1, 0), -0.5))))


def test_precedence_not_and_or():
    f = stl.parse("!x1 >= 0 & x2 >= 0 | x1 >= 1", 2)
    assert isinstance(f, stl.Or)
    assert isinstance(f.children[0], stl.And)
    assert isinstance(f.children[0].children[0], stl.Not)


@pytest.mark.parametrize("text,exc", [
    ("x1 >= ", STLParseError),
    ("x3 >= 0", UnknownStateIndex),
    ("G[1,0](x1 >= 0)", STLParseError),
    ("F[0,1](x1 >= 0", STLParseError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        stl.parse(text, 2)


def test_parse_error_reports_position():
    with pytest.raises(STLParseError) as info:
        stl.parse("F[0,1](x1 >= 0", 2)
    assert info.value.position == 14


def test_round_trip_random():
    rng = np.random.default_rng(2)
    for _ in range(100):
        f = random_formula(rng, 3, 0.25, 6)
        assert stl.parse(stl.to_text(f), 3) == f


def test_nnf_de_morgan():
    p, q = P((1.0, 0.0), 0.0), P((0.0, 1.0), -1.0)
    got = stl.to_nnf(stl.Not(stl.And((p, q))), eps=0.0)
    assert got == stl.Or((P((-1.0, 0.0), 0.0), P((0.0, -1.0), 1.0)))


def test_nnf_temporal_duality_and_double_negation():
    p = P((1.0,), 0.0)
    assert stl.to_nnf(stl.Not(stl.Always(0.0, 1.0, p)), 0.0) == stl.Eventually(0.0, 1.0, p.negate(0.0))
    assert stl.to_nnf(stl.Not(stl.Eventually(0.0, 1.0, p)), 0.0) == stl.Always(0.0, 1.0, p.negate(0.0))
    assert stl.to_nnf(stl.Not(stl.Not(p))) == p


def test_negated_predicate_absorbs_strict_margin():
    assert stl.to_nnf(stl.Not(P((2.0,), 1.0)), 1e-6) == P((-2.0,), -1.0 - 1e-6)


def test_nnf_preserves_robustness():
    rng = np.random.default_rng(4)
    eps = 1e-6
    for _ in range(200):
        N = int(rng.integers(1, 9))
        times = np.arange(N + 1) * 0.25
        states = rng.uniform(-2, 2, (N + 1, 2))
        f = random_formula(rng, 2, 0.25, N)
        a = stl.discrete_robustness((times, states), f)
        b = stl.discrete_robustness((times, states), stl.to_nnf(f, eps))
        if np.isfinite(a):
            assert abs(a - b) <= eps + 1e-12
        else:
            assert a == b


def test_ground_aligned_window():
    f = stl.parse("G[0.2,0.4](x1 >= 0)", 1)
    g = stl.ground(f, TimeGrid.uniform(1.0, 5))
    assert g.nodes_for(f, 0) == (1, 2)
    assert g.windows_for(f, 0) == (1,)


def test_ground_unaligned_endpoint():
    f = stl.parse("G[0.63,0.80](x2 >= 3)", 2)
    with pytest.raises(UnalignedInterval) as info:
        stl.ground(f, TimeGrid.uniform(2.0, 10))
    assert info.value.endpoints == [0.63]


def test_ground_full_horizon_and_excess():
    f = stl.parse("F[0,2](x1 >= 0)", 1)
    assert stl.ground(f, TimeGrid.uniform(2.0, 10)).nodes_for(f, 0) == tuple(range(11))
    with pytest.raises(HorizonExceeded):
        stl.ground(stl.parse("F[0,3](x1 >= 0)", 1), TimeGrid.uniform(2.0, 10))


def test_ground_deterministic():
    f = stl.parse("G[0,1](F[0,0.5](x1 >= 0) | x2 >= 1)", 2)
    grid = TimeGrid.uniform(2.0, 8)
    a, b = stl.ground(f, grid), stl.ground(f, grid)
    assert a.index_sets == b.index_sets and a.windows == b.windows


def test_robustness_examples():
    t = np.linspace(0.0, 1.0, 5)
    X = np.column_stack([np.zeros(5), np.full(5, 5.0)])
    assert stl.discrete_robustness((t, X), stl.parse("G[0,1](x2 >= 3)", 2)) == 2.0
    t = np.array([0.0, 0.5, 1.0])
    X = np.array([[1.0], [-1.0], [1.0]])
    assert stl.discrete_robustness((t, X), stl.parse("G[0,1](x1 >= 0)", 1)) == -1.0


def test_robustness_accepts_pairs():
    samples = [(0.0, [1.0]), (0.5, [3.0])]
    assert stl.discrete_robustness(samples, stl.parse("F[0,0.5](x1 >= 2)", 1)) == 1.0


def test_truncated_trace():
    with pytest.raises(InsufficientTrace):
        stl.discrete_robustness((np.array([0.0, 0.5]), np.zeros((2, 1))), stl.parse("G[0,1](x1 >= 0)", 1))


def test_robustness_matches_recursive_definition():
    rng = np.random.default_rng(9)
    for _ in range(200):
        N = int(rng.integers(1, 9))
        times = np.arange(N + 1) * 0.25
        states = rng.uniform(-2, 2, (N + 1, 2))
        f = random_formula(rng, 2, 0.25, N)
        a = stl.discrete_robustness((times, states), f)
        b = robustness_brute(f, list(times), states)
        assert a == pytest.approx(b, abs=1e-12) or (a == b)


def test_horizon():
    assert stl.horizon(stl.parse("F[0,1](G[0.5,1](x1 >= 0))", 1)) == 2.0
    assert stl.horizon(stl.parse("x1 >= 0", 1)) == 0.0
