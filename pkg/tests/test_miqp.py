import math
import re

import numpy as np
import pytest

from ctstl.encoder import build_miqp
from ctstl.miqp import MiqpModel, Status, branch_and_bound, export_lp, solve_qp
from ctstl.scenario import load_scenario

from generators import toy_miqp
from oracles import enumerate_miqp


def test_projection_onto_halfline():
    m = MiqpModel()
    u = m.add_var("u")
    m.add_quad(u, u, 1.0)
    m.add_row({u: 1.0}, ">=", 1.0)
    sol = solve_qp(m)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_symmetric_split():
    m = MiqpModel()
    a, b = m.add_var("u0"), m.add_var("u1")
    m.add_quad(a, a, 1.0)
    m.add_quad(b, b, 1.0)
    m.add_row({a: 1.0, b: 1.0}, "=", 2.0)
    sol = solve_qp(m)
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-7)
    assert sol.objective == pytest.approx(2.0, abs=1e-7)


def test_infeasible_qp():
    m = MiqpModel()
    x = m.add_var("x", 0.0, 1.0)
    m.add_row({x: 1.0}, ">=", 2.0)
    assert solve_qp(m).status == Status.INFEASIBLE


def test_no_binaries_same_as_qp():
    m = MiqpModel()
    x = m.add_var("x", -3.0, 3.0)
    m.add_quad(x, x, 2.0)
    m.add_lin(x, -1.0)
    a, b = solve_qp(m), branch_and_bound(m)
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    np.testing.assert_allclose(a.x, b.x, atol=1e-12)


def test_small_binary_choice():
    # min (y - 3)^2 with y <= 1 unless z, and z costs 5
    m = MiqpModel()
    y = m.add_var("y", -10, 10)
    z = m.add_binary("z")
    m.add_quad(y, y, 1.0)
    m.add_lin(y, -6.0)
    m.add_lin(z, 5.0)
    m.add_row({y: 1.0, z: -10.0}, "<=", 1.0)
    sol = branch_and_bound(m)
    assert sol.binaries == {z: 0}
    assert sol.x[y] == pytest.approx(1.0, abs=1e-6)


def test_matches_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(15):
        model = toy_miqp(rng, k=int(rng.integers(1, 7)))
        ref = enumerate_miqp(model)
        sol = branch_and_bound(model)
        if ref is None:
            assert sol.status == Status.INFEASIBLE
        else:
            assert sol.optimal
            assert sol.objective == pytest.approx(ref.objective, abs=1e-6)
            assert model.max_violation(sol.x) <= 1e-7


def test_incumbent_integrality():
    rng = np.random.default_rng(8)
    model = toy_miqp(rng, k=6)
    sol = branch_and_bound(model)
    if sol.optimal:
        for i in model.binaries:
            assert min(abs(sol.x[i]), abs(sol.x[i] - 1)) <= 1e-9


def test_deterministic():
    model = build_miqp(load_scenario("example1")).model
    a, b = branch_and_bound(model), branch_and_bound(model)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.stats["nodes"] == b.stats["nodes"]
    assert a.binaries == b.binaries


def test_lp_empty_model():
    assert export_lp(MiqpModel()) == "Minimize\n obj: 0\nSubject To\nEnd\n"


def test_lp_single_variable():
    m = MiqpModel("one")
    x = m.add_var("x", 0.0)
    m.add_quad(x, x, 1.0)
    m.add_row({x: 1.0}, ">=", 1.0)
    text = export_lp(m)
    assert text == "Minimize\n obj: [ 2 x ^ 2 ] / 2\nSubject To\n c0: x >= 1\nEnd\n"
    assert len(text.splitlines()) == 5


def _parse_lp(text):
    """Minimal structural reader: section names, constraint names, bound and binary names."""
    sections, current = {}, None
    for line in text.splitlines():
        if not line.startswith(" "):
            current = line
            sections[current] = []
        else:
            sections[current].append(line)
    rows, buf = [], ""
    for line in sections.get("Subject To", []):
        if re.match(r"^ \S+:", line) and buf:
            rows.append(buf)
            buf = ""
        buf += line
    if buf:
        rows.append(buf)
    names = [r.split(":")[0].strip() for r in rows]
    bins = " ".join(sections.get("Binary", [])).split()
    return list(sections), names, bins


def test_lp_structure_example1():
    model = build_miqp(load_scenario("example1")).model
    text = export_lp(model)
    assert export_lp(model) == text
    sections, rows, bins = _parse_lp(text)
    assert sections == ["Minimize", "Subject To", "Bounds", "Binary", "End"]
    assert len(rows) == len(model.rows)
    assert len(set(rows)) == len(rows)
    assert len(bins) == len(model.binaries)


def test_lp_reparsed_by_highs(tmp_path):
    highspy = pytest.importorskip("highspy")
    model = build_miqp(load_scenario("example1")).model
    path = tmp_path / "ex1.lp"
    path.write_text(export_lp(model))
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    lp = h.getLp()
    assert lp.num_col_ == model.num_vars
    assert lp.num_row_ == len(model.rows)
    assert sum(int(v) != 0 for v in lp.integrality_) == len(model.binaries)
