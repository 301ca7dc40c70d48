"""Command line: plan, check, export and list bundled examples."""
import argparse
import json
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import TimeGrid
from .encoder import build_miqp, plan
from .errors import CtstlError, ScenarioError
from .miqp import export_lp
from .monitor import (VIOLATION_TOL, Trajectory, Verdict, cbf_bound_audit, check_continuous,
                      compare_discrete_continuous)
from .scenario import bundled_names, bundled_text, load_scenario
from .stl import discrete_robustness, parse, to_text

FLOAT_FMT = "%.12g"


@dataclass
class RunReport:
    scenario: str
    status: str
    feasible: bool
    objective: float = None
    grid: list = field(default_factory=list)
    virtual: list = field(default_factory=list)
    ties: list = field(default_factory=list)
    node_states: np.ndarray = None
    controls: np.ndarray = None
    dense_t: np.ndarray = None
    dense_x: np.ndarray = None
    dense_u: np.ndarray = None
    verdict: Verdict = None
    discrete_robustness: float = None
    classification: str = None
    audit: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.feasible and self.verdict is not None and self.verdict.satisfied

    def summary(self):
        stats = {k: v for k, v in self.stats.items() if k != "incumbents"}
        stats["incumbents"] = [list(p) for p in self.stats.get("incumbents", [])]
        return {
            "scenario": self.scenario,
            "status": self.status,
            "feasible": self.feasible,
            "objective": self.objective,
            "grid": self.grid,
            "virtual": self.virtual,
            "ties": [list(t) for t in self.ties],
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "discrete_robustness": self.discrete_robustness,
            "classification": self.classification,
            "audit": {"windows": len(self.audit),
                      "failures": [a.__dict__ for a in self.audit if not a.ok]},
            "stats": _jsonable(stats),
            "timings": self.timings,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def run_plan(scenario, out_dir=None, dense_step=1e-3, time_limit=None):
    """Solve a scenario, verify the result in continuous time, optionally write files."""
    t0 = time.perf_counter()
    res = plan(scenario, time_limit=time_limit)
    t_solve = time.perf_counter() - t0
    grid = res.grid
    rep = RunReport(scenario.name, res.status.value, res.feasible,
                    res.objective if res.feasible else None,
                    list(grid.nodes), list(grid.virtual), list(res.encoding.ties), stats=res.stats)
    rep.timings["solve"] = t_solve
    if res.feasible:
        traj = Trajectory.simulate(scenario.system, scenario.x0, grid, res.controls)
        t1 = time.perf_counter()
        f = scenario.formula_ast()
        cmp = compare_discrete_continuous(traj, f)
        verdict = cmp.verdict
        # explicit safety predicates are checked as G over the whole horizon
        for spec in scenario.cbf_predicates:
            g = check_continuous(traj, parse(f"G[0,{scenario.t_f!r}]({to_text(spec.predicate)})",
                                             scenario.system.n))
            verdict.report.append({"formula": f"safety: {to_text(spec.predicate)}",
                                   "margin": g.worst_margin, "witness_time": g.witness_time,
                                   "satisfied": g.satisfied})
            if g.worst_margin < verdict.worst_margin:
                verdict.worst_margin, verdict.witness_time = g.worst_margin, g.witness_time
        verdict.satisfied = bool(verdict.worst_margin >= -VIOLATION_TOL)
        rep.verdict, rep.discrete_robustness, rep.classification = verdict, cmp.discrete, cmp.classification
        rep.audit = cbf_bound_audit(traj, res.encoding.records, res.solution.x, raise_on_violation=False)
        rep.timings["monitor"] = time.perf_counter() - t1
        rep.node_states, rep.controls = traj.states, traj.controls
        rep.dense_t, rep.dense_x = traj.dense(dense_step)
        rep.dense_u = np.array([traj.controls[traj.window_index(t)] for t in rep.dense_t])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n, m = scenario.system.n, scenario.system.m
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
        if rep.feasible:
            path = out / f"{scenario.name}_trajectory.csv"
            _write_rows(path, header, np.column_stack([rep.dense_t, rep.dense_x, rep.dense_u]))
            rep.files["trajectory"] = str(path)
            nodes = np.asarray(grid.nodes)
            u_nodes = np.vstack([rep.controls, rep.controls[-1:]])
            path = out / f"{scenario.name}_nodes.csv"
            _write_rows(path, header, np.column_stack([nodes, rep.node_states, u_nodes]))
            rep.files["nodes"] = str(path)
        path = out / f"{scenario.name}_verdict.json"
        path.write_text(json.dumps(rep.summary(), indent=2) + "\n")
        rep.files["verdict"] = str(path)
    return rep


def read_trajectory_csv(path):
    """Return ``(t, X, U)`` from a trajectory CSV; ``U`` is None without u columns."""
    path = Path(path)
    try:
        header = path.read_text().splitlines()[0].strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, IndexError, ValueError) as exc:
        raise ScenarioError(f"cannot read trajectory CSV {path}: {exc}") from exc
    if not header or header[0] != "t":
        raise ScenarioError("trajectory CSV must start with a 't' column")
    if data.shape[1] != len(header):
        raise ScenarioError(f"CSV has {data.shape[1]} columns but the header names {len(header)}")
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    us = [i for i, h in enumerate(header) if h.startswith("u")]
    if [header[i] for i in xs] != [f"x{k + 1}" for k in range(len(xs))] or not xs:
        raise ScenarioError("state columns must be x1..xn")
    if [header[i] for i in us] != [f"u{k + 1}" for k in range(len(us))]:
        raise ScenarioError("input columns must be u1..um")
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ScenarioError("time column must be strictly increasing")
    return t, data[:, xs], (data[:, us] if us else None)


def trajectory_from_samples(system, t, X, U):
    """Rebuild holds from samples: a new hold starts wherever the input changes."""
    if X.shape[1] != system.n or U.shape[1] != system.m:
        raise ScenarioError(f"CSV has {X.shape[1]} states and {U.shape[1]} inputs, "
                            f"system has {system.n} and {system.m}")
    starts = [0] + [i for i in range(1, len(t) - 1) if np.any(U[i] != U[i - 1])]
    idx = starts + [len(t) - 1]
    grid = TimeGrid(tuple(t[i] - t[0] for i in idx))
    return Trajectory(system, grid, X[idx], U[starts])


def run_check(traj_path, formula_text, scenario=None):
    """Verify a trajectory file against a formula.

    With a scenario (for the dynamics) and input columns the check is in
    continuous time; otherwise only the discrete robustness over the
    samples is available.
    """
    t, X, U = read_trajectory_csv(traj_path)
    f = parse(formula_text, X.shape[1])
    if scenario is not None and U is not None:
        traj = trajectory_from_samples(scenario.system, t, X, U)
        return check_continuous(traj, f)
    warnings.warn("no system or inputs given; reporting discrete robustness only", stacklevel=2)
    rho = discrete_robustness((t, X), f)
    margin = float(min(max(rho, -1e18), 1e18))
    return Verdict(bool(margin >= -VIOLATION_TOL), margin, float(t[0]),
                   [{"formula": to_text(f), "margin": margin, "mode": "discrete"}])


def run_export(scenario, out_dir=None):
    text = export_lp(build_miqp(scenario).model)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{scenario.name}.lp").write_text(text)
    return text


def _apply_flags(scenario, args):
    changes = {}
    if getattr(args, "big_m", None) is not None:
        changes["big_M"] = args.big_m
    if getattr(args, "poles", None):
        changes["ecbf_poles"] = tuple(float(p) for p in args.poles.split(","))
    if changes:
        scenario = replace(scenario, config=replace(scenario.config, **changes))
    return scenario


def build_parser():
    p = argparse.ArgumentParser(prog="ctstl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--big-m", type=float, help="big-M constant (default from the scenario)")
        sp.add_argument("--poles", help="comma separated ECBF poles, e.g. -2,-3")
        sp.add_argument("--out-dir", default=".", help="directory for output files")

    sp = sub.add_parser("plan", help="solve a scenario and verify it in continuous time")
    sp.add_argument("scenario", help="scenario file or bundled example name")
    common(sp)
    sp.add_argument("--dense-step", type=float, default=1e-3, help="sample step of the trajectory CSV")
    sp.add_argument("--time-limit", type=float, default=None, help="branch-and-bound time limit in s")

    sp = sub.add_parser("check", help="check a trajectory CSV against a formula")
    sp.add_argument("trajectory")
    sp.add_argument("formula")
    sp.add_argument("--system", help="scenario providing the dynamics for a continuous check")

    sp = sub.add_parser("export", help="write the MIQP in LP format")
    sp.add_argument("scenario")
    common(sp)

    sp = sub.add_parser("examples", help="list bundled scenarios or print one")
    sp.add_argument("name", nargs="?")
    return p


def _join_negative_values(argv):
    """Let ``--poles -2,-3`` through; argparse would read ``-2,-3`` as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--poles":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    try:
        if args.command == "examples":
            if args.name:
                sys.stdout.write(bundled_text(args.name))
            else:
                print("\n".join(bundled_names()))
            return 0
        if args.command == "check":
            scenario = load_scenario(args.system) if args.system else None
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                verdict = run_check(args.trajectory, args.formula, scenario)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            print(json.dumps(_jsonable(verdict.to_dict()), indent=2))
            return 0 if verdict.satisfied else 1
        scenario = _apply_flags(load_scenario(args.scenario), args)
        if args.command == "export":
            run_export(scenario, args.out_dir)
            print(str(Path(args.out_dir) / f"{scenario.name}.lp"))
            return 0
        rep = run_plan(scenario, args.out_dir, args.dense_step, args.time_limit)
        v = rep.verdict
        print(f"{scenario.name}: status={rep.status} objective={rep.objective} "
              f"solve={rep.timings['solve']:.3f}s")
        if v is not None:
            print(f"continuous: {'satisfied' if v.satisfied else 'VIOLATED'} "
                  f"margin={v.worst_margin:.6g} at t={v.witness_time:.6g}; "
                  f"discrete robustness={rep.discrete_robustness:.6g} ({rep.classification})")
        for name, path in rep.files.items():
            print(f"{name}: {path}")
        return 0 if rep.ok else 1
    except CtstlError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
