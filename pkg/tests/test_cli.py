import json

import numpy as np
import pytest

from ctstl import cli
from ctstl.errors import InsufficientTrace, ScenarioError
from ctstl.scenario import bundled_checksum, bundled_names, load_scenario, scenario_from_dict

CHECKSUMS = {
    "example1": "138da7c97b80b9586b5e59c8c3bd1ca3e5f7f73ed633b283cf8b3387cbb59947",
    "example2_case1": "bf6ad6ab34b35d1e79ca4345bf8c69280d756d1fc4e703d699b70e757c3dd682",
    "example2_case2": "14862e2b6949b1386f40c3e19fe00da222812a1de3a6bed2e0747d8757697991",
    "example3": "76eae886145a043251f435254a4ec4a172d80508f9290a06159b14342af62a91",
}

TRIVIAL = {
    "name": "trivial",
    "system": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]},
    "x0": [0, 0],
    "t_f": 1.0,
    "N": 4,
    "formula": "true",
    "config": {"u_lower": [-1], "u_upper": [1]},
}


def test_bundled_scenarios_unchanged():
    assert sorted(bundled_names()) == sorted(CHECKSUMS)
    for name, digest in CHECKSUMS.items():
        assert bundled_checksum(name) == digest, f"bundled scenario {name} was edited"


@pytest.fixture(scope="module")
def example1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ex1")
    code = cli.main(["plan", "example1", "--out-dir", str(out)])
    return code, out


def test_plan_example1_exit_code_and_files(example1_run):
    code, out = example1_run
    assert code == 0
    for suffix in ("trajectory.csv", "nodes.csv", "verdict.json"):
        assert (out / f"example1_{suffix}").exists()
    verdict = json.loads((out / "example1_verdict.json").read_text())
    assert verdict["feasible"] and verdict["verdict"]["satisfied"]
    assert verdict["audit"]["failures"] == []
    assert any(r["formula"].startswith("safety") for r in verdict["verdict"]["report"])


def test_node_rows_match_dense_rows(example1_run):
    _, out = example1_run
    dense = (out / "example1_trajectory.csv").read_text().splitlines()
    nodes = (out / "example1_nodes.csv").read_text().splitlines()
    assert dense[0] == nodes[0] == "t,x1,x2,u1"
    node_times = {row.split(",")[0] for row in nodes[1:]}
    by_time = {row.split(",")[0]: row for row in dense[1:] if row.split(",")[0] in node_times}
    assert len(by_time) == len(nodes) - 1
    for row in nodes[1:-1]:
        assert by_time[row.split(",")[0]] == row
    # the last node row repeats the final hold's input, as does the last dense row
    assert dense[-1] == nodes[-1]


def test_dense_velocity_band(example1_run):
    _, out = example1_run
    t, X, U = cli.read_trajectory_csv(out / "example1_trajectory.csv")
    assert np.max(np.diff(t)) <= 1e-3 + 1e-12
    assert np.max(np.abs(X[:, 1])) < 10


def test_check_round_trip(example1_run, capsys):
    _, out = example1_run
    path = str(out / "example1_trajectory.csv")
    phi1 = load_scenario("example1").formula
    assert cli.main(["check", path, phi1, "--system", "example1"]) == 0
    assert json.loads(capsys.readouterr().out)["satisfied"] is True
    v = cli.run_check(path, "G[0,2](x2 >= -10 & x2 <= 10)", load_scenario("example1"))
    assert v.satisfied


def test_check_without_system_is_discrete_and_warns(example1_run):
    _, out = example1_run
    with pytest.warns(UserWarning):
        v = cli.run_check(out / "example1_trajectory.csv", "G[0,2](x2 <= 10)")
    assert v.satisfied and v.report[0]["mode"] == "discrete"


def _write(path, text):
    path.write_text(text)
    return path


def test_truncated_trace(tmp_path):
    path = _write(tmp_path / "t.csv", "t,x1\n0,0\n0.5,0\n")
    with pytest.raises(InsufficientTrace), pytest.warns(UserWarning):
        cli.run_check(path, "G[0,1](x1 >= 0)")


def test_zero_trace_margin(tmp_path):
    path = _write(tmp_path / "z.csv", "t,x1\n0,0\n0.5,0\n1,0\n")
    with pytest.warns(UserWarning):
        v = cli.run_check(path, "G[0,1](x1 >= 1)")
    assert not v.satisfied and v.worst_margin == -1.0


def test_check_exit_code_on_violation(tmp_path, capsys):
    path = _write(tmp_path / "z.csv", "t,x1\n0,0\n1,0\n")
    assert cli.main(["check", str(path), "G[0,1](x1 >= 1)"]) == 1


@pytest.mark.parametrize("text", ["x1,t\n0,0\n", "t,x1\n0,0,1\n", "t,x1\n1,0\n0,0\n", "t,y1\n0,0\n"])
def test_malformed_csv(tmp_path, text):
    with pytest.raises(ScenarioError):
        cli.read_trajectory_csv(_write(tmp_path / "bad.csv", text))


def test_continuous_check_rebuilds_holds(tmp_path):
    sc = scenario_from_dict(TRIVIAL)
    # x1 = t - t^2/2 under u = -1: node values stay at 0 at t=0 and t=2 but the peak is 0.5
    rows = ["t,x1,x2,u1", "0,0,1,-1", "1,0.5,0,-1", "2,0,-1,-1"]
    path = _write(tmp_path / "p.csv", "\n".join(rows) + "\n")
    v = cli.run_check(path, "G[0,2](x1 <= 0.4)", sc)
    assert not v.satisfied
    assert v.worst_margin == pytest.approx(-0.1, abs=1e-9)


def test_export_example2_has_binary_section(tmp_path):
    assert cli.main(["export", "example2_case2", "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "example2_case2.lp").read_text()
    assert "\nBinary\n" in text


def test_export_trivial_is_pure_qp():
    text = cli.run_export(scenario_from_dict(TRIVIAL))
    assert "Binary" not in text and text.startswith("Minimize\n")


def test_plan_reports_failure_exit_code(tmp_path):
    spec = dict(TRIVIAL, formula="F[0,1](x1 >= 5)", name="unreachable")
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec))
    assert cli.main(["plan", str(path), "--out-dir", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "unreachable_verdict.json").read_text())["feasible"] is False


def test_error_exit_code_has_stage(tmp_path, capsys):
    spec = dict(TRIVIAL, formula="F[0,3](x1 >= 0)", name="long")
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec))
    assert cli.main(["plan", str(path), "--out-dir", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error [")


def test_unknown_scenario(capsys):
    assert cli.main(["plan", "no_such_example"]) == 2


def test_examples_command(capsys):
    assert cli.main(["examples"]) == 0
    assert "example1" in capsys.readouterr().out.split()
    assert cli.main(["examples", "example3"]) == 0
    assert "G[0.63,0.8](x2 >= 3)" in capsys.readouterr().out


def test_flags_override_config():
    argv = cli._join_negative_values(["plan", "example2_case2", "--big-m", "500", "--poles", "-1,-2"])
    args = cli.build_parser().parse_args(argv)
    sc = cli._apply_flags(load_scenario("example2_case2"), args)
    assert sc.config.big_M == 500 and sc.config.ecbf_poles == (-1.0, -2.0)
