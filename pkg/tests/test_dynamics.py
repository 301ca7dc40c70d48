import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctstl.dynamics import (Interpolant, LinearSystem, TimeGrid, interpolate, mode_decompose,
                            step_matrices)
from ctstl.errors import ComplexModesUnsupported, InvalidSystem, OutOfWindow

from generators import real_spectrum_system
from oracles import ode_step

DI = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])


@pytest.mark.parametrize("t", [0.1, 0.5, 1.7])
def test_double_integrator_closed_form(t):
    Ad, Bd = step_matrices(DI, t)
    np.testing.assert_allclose(Ad, [[1.0, t], [0.0, 1.0]], atol=1e-14)
    np.testing.assert_allclose(Bd, [[t * t / 2], [t]], atol=1e-14)


def test_zero_matrix_gives_identity_and_scaled_b():
    B = np.array([[1.0, -2.0], [0.5, 3.0], [0.0, 1.0]])
    Ad, Bd = step_matrices(LinearSystem(np.zeros((3, 3)), B), 0.7)
    np.testing.assert_allclose(Ad, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(Bd, 0.7 * B, atol=1e-15)


def test_scalar_decay_over_ln2():
    Ad, Bd = step_matrices(LinearSystem([[-1.0]], [[1.0]]), math.log(2))
    assert Ad[0, 0] == pytest.approx(0.5, abs=1e-14)
    assert Bd[0, 0] == pytest.approx(0.5, abs=1e-14)


def test_matches_ode_integration():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        A, B = rng.uniform(-2, 2, (n, n)), rng.uniform(-2, 2, (n, m))
        dt = float(rng.uniform(0.01, 1.0))
        Ad, Bd = step_matrices(LinearSystem(A, B), dt)
        Ao, Bo = ode_step(A, B, dt)
        assert np.max(np.abs(Ad - Ao)) < 1e-9
        assert np.max(np.abs(Bd - Bo)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_semigroup(seed, a, b):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    sys = LinearSystem(rng.uniform(-2, 2, (n, n)), rng.uniform(-2, 2, (n, 1)))
    lhs = step_matrices(sys, a + b)[0]
    rhs = step_matrices(sys, a)[0] @ step_matrices(sys, b)[0]
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(lhs)))


def test_invalid_systems_rejected():
    with pytest.raises(InvalidSystem):
        LinearSystem([[1.0, 0.0]], [[1.0]])
    with pytest.raises(InvalidSystem):
        LinearSystem(np.eye(2), np.ones((3, 1)))
    with pytest.raises(InvalidSystem):
        LinearSystem([[np.nan]], [[1.0]])
    with pytest.raises(InvalidSystem):
        LinearSystem(np.eye(2), np.ones((2, 1)), C=np.ones((1, 3)))


def test_time_grid_validation():
    g = TimeGrid.uniform(2.0, 10)
    assert g.N == 10 and g.nodes[3] == 0.6 and g.t_f == 2.0
    assert g.index_of(0.6) == 3 and g.index_of(0.63) is None
    with pytest.raises(ValueError):
        TimeGrid((0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        TimeGrid((0.1, 0.5))


def test_interpolate_examples():
    ip = Interpolant(DI, [1.0, -1.0], [0.0], 0.0, 1.0)
    np.testing.assert_array_equal(interpolate(ip, 0.0), [1.0, -1.0])
    np.testing.assert_allclose(ip(0.5), [0.5, -1.0], atol=1e-14)
    ip = Interpolant(DI, [0.0, 0.0], [2.0], 3.0, 4.0)
    np.testing.assert_allclose(ip(4.0), [1.0, 2.0], atol=1e-14)
    with pytest.raises(OutOfWindow):
        ip(4.5)
    with pytest.raises(OutOfWindow):
        ip(2.9)


def test_mode_blocks_examples():
    assert mode_decompose(DI, [1.0, 0.0]).blocks == ((0.0, 2),)
    dec = mode_decompose(LinearSystem(np.diag([-1.0, -2.0]), [[0.0], [1.0]]), [1.0, 1.0], 0.5)
    assert dec.blocks == ((-2.0, 1), (-1.0, 1))
    assert dec.sigma == 0.5
    with pytest.raises(ComplexModesUnsupported):
        mode_decompose(LinearSystem([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]]), [1.0, 0.0])


def test_block_sizes_sum_to_dimension():
    rng = np.random.default_rng(11)
    for _ in range(30):
        sys = real_spectrum_system(rng)
        dec = mode_decompose(sys, rng.standard_normal(sys.n))
        assert sum(s for _, s in dec.blocks) == sys.n


def test_reconstruction_on_random_real_spectra():
    rng = np.random.default_rng(5)
    for _ in range(100):
        sys = real_spectrum_system(rng)
        row = rng.standard_normal(sys.n)
        off = float(rng.standard_normal())
        dec = mode_decompose(sys, row, off)
        x0, u0 = rng.standard_normal(sys.n), rng.standard_normal(sys.m)
        for s in (0.0, 0.2, 0.55, 1.0):
            Ad, Bd = step_matrices(sys, s)
            exact = row @ (Ad @ x0 + Bd @ u0) + off
            assert abs(dec.evaluate(x0, u0, s) - exact) <= 1e-9 * max(1.0, abs(exact)) + 1e-9


def test_feedthrough_enters_as_constant_term():
    dec = mode_decompose(DI, [0.0, 1.0], 0.0, feedthrough=[2.0])
    assert dec.evaluate([0.0, 1.0], [1.0], 0.0) == pytest.approx(3.0)
