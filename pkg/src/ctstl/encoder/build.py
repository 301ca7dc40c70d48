"""Assemble the full planning MIQP and solve it."""
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import TimeGrid, mode_decompose, step_matrices
from ..errors import BigMTooSmall
from ..miqp import GAP_TOL, MiqpModel, Status, branch_and_bound
from ..stl import ground, to_nnf
from .cbf import ecbf_spec, encode_cbf_window, encode_ecbf, relative_degree, zcbf_spec
from .formula import encode_formula
from .grid import align_time_grid


def _abs_apply(M, r):
    """``|M| @ r`` where ``r`` may hold infinities and ``0 * inf`` counts as 0."""
    M = np.abs(np.atleast_2d(M))
    inf = np.isinf(r)
    out = M @ np.where(inf, 0.0, r)
    if inf.any():
        out = np.where((M[:, inf] > 0).any(axis=1), np.inf, out)
    return out


class Encoding:
    """Variables, interval bounds and bookkeeping shared by the encoders.

    ``x[k]`` lists the state variable indices at node ``k`` and ``u[k]`` the
    input indices of the hold starting at node ``k``.
    """

    def __init__(self, system, x0, grid, config, name="plan"):
        self.system = system
        self.x0 = np.asarray(x0, dtype=float)
        self.grid = grid
        self.config = config
        self.model = MiqpModel(name)
        self.records = []
        self.formula_binaries = []
        self.cache = {}
        self.ties = []
        self.root = True
        self.grounded = None
        self.formula = None
        n, m = system.n, system.m
        ulo, uhi = config.input_bounds(m)
        self.u_lo, self.u_hi = ulo, uhi
        self.x = [[self.model.add_var(f"x{k}_{i + 1}") for i in range(n)] for k in range(grid.N + 1)]
        self.u = [[self.model.add_var(f"u{k}_{i + 1}", ulo[i], uhi[i]) for i in range(m)]
                  for k in range(grid.N)]
        for v, val in zip(self.x[0], self.x0):
            self.model.fix(v, val)
        self._propagate()

    def _propagate(self):
        both = np.isfinite(self.u_lo) & np.isfinite(self.u_hi)
        lo, hi = np.where(both, self.u_lo, 0.0), np.where(both, self.u_hi, 0.0)
        self.u_c = 0.5 * (lo + hi)
        self.u_r = np.where(both, 0.5 * (hi - lo), np.inf)
        xc, xr = [self.x0.copy()], [np.zeros(self.system.n)]
        for tau in self.grid.taus:
            Ad, Bd = step_matrices(self.system, tau)
            xc.append(Ad @ xc[-1] + Bd @ self.u_c)
            xr.append(_abs_apply(Ad, xr[-1]) + _abs_apply(Bd, self.u_r))
        self.x_c, self.x_r = xc, xr

    def part_range(self, part, k, coef):
        """Interval containing ``coef . x_k`` (part 'x') or ``coef . u_k`` (part 'u')."""
        coef = np.asarray(coef, dtype=float)
        if part == "x":
            c, r = coef @ self.x_c[k], _abs_apply(coef, self.x_r[k])[0]
        else:
            c, r = coef @ self.u_c, _abs_apply(coef, self.u_r)[0]
        return c - r, c + r

    def big_m(self, lo, hi):
        cfg = self.config
        span = max(abs(lo), abs(hi))
        if not cfg.tighten_big_m or not np.isfinite(span):
            return cfg.big_M
        return min(cfg.big_M, 1.05 * span + 1.0)

    def direct_for(self, pred):
        key = ("direct", pred.row, pred.offset)
        if key not in self.cache:
            self.cache[key] = mode_decompose(self.system, pred.vec, pred.offset)
        return self.cache[key]

    def ecbf_for(self, pred, poles=None):
        r = relative_degree(self.system, pred.vec)
        poles = tuple(poles) if poles is not None else self.config.poles_for(r)
        key = ("spec", pred.row, pred.offset, poles)
        if key not in self.cache:
            self.cache[key] = ecbf_spec(self.system, pred.vec, pred.offset, poles)
        return self.cache[key]

    def extract(self, x):
        states = np.array([[x[v] for v in row] for row in self.x])
        controls = np.array([[x[v] for v in row] for row in self.u]).reshape(self.grid.N, self.system.m)
        return states, controls


def build_miqp(scenario):
    """Translate a scenario into an :class:`Encoding` holding the MIQP."""
    sys, cfg = scenario.system, scenario.config
    formula = to_nnf(scenario.formula_ast(), cfg.eps_strict)
    base = TimeGrid.uniform(scenario.t_f, scenario.N)
    grid, ties = align_time_grid(formula, base)
    grounded = ground(formula, grid)
    enc = Encoding(sys, scenario.x0, grid, cfg, scenario.name)
    enc.base_grid, enc.ties, enc.grounded, enc.formula = base, ties, grounded, formula
    model = enc.model

    for k, tau in enumerate(grid.taus):
        Ad, Bd = step_matrices(sys, tau)
        for i in range(sys.n):
            row = {enc.x[k + 1][i]: 1.0}
            for j in range(sys.n):
                row[enc.x[k][j]] = row.get(enc.x[k][j], 0.0) - Ad[i, j]
            for j in range(sys.m):
                row[enc.u[k][j]] = row.get(enc.u[k][j], 0.0) - Bd[i, j]
            model.add_row(row, "=", 0.0, f"dyn{k}_{i + 1}")
        for v in enc.u[k]:
            model.add_quad(v, v, tau)
    for v, r in ties:
        for i in range(sys.m):
            model.add_row({enc.u[v][i]: 1.0, enc.u[r][i]: -1.0}, "=", 0.0, f"tie{v}_{i + 1}")

    for si, spec in enumerate(scenario.cbf_predicates):
        pred = spec.predicate
        label = f"safe{si}"
        for k in range(grid.N):
            if spec.mode == "direct":
                encode_cbf_window(enc, enc.direct_for(pred), k, None, "direct", label)
            elif spec.mode == "zcbf":
                key = ("zcbf", pred.row, pred.offset, spec.alpha)
                if key not in enc.cache:
                    enc.cache[key] = zcbf_spec(sys, pred.vec, pred.offset, spec.alpha)
                encode_ecbf(enc, enc.cache[key], k, None, label)
            else:
                encode_ecbf(enc, enc.ecbf_for(pred, spec.poles), k, None, label)

    root, _ = encode_formula(enc, grounded)
    enc.root = root
    if root is False:
        model.add_row({}, ">=", 1.0, "root")
    elif root is not True:
        model.fix(root, 1.0)
    return enc


def check_big_m(enc, x, rel=1e-6):
    """Big-M rows that bind although their binary should switch them off."""
    model = enc.model
    act = model.compile()["A"] @ x
    bad = []
    for b in model.bigm:
        if round(x[b.binary]) != b.relaxed_when:
            continue
        row = model.rows[b.row]
        slack = row.rhs - act[b.row] if row.sense == "<=" else act[b.row] - row.rhs
        if slack <= rel * max(1.0, b.M):
            bad.append((row.name, float(slack), b.M))
    return bad


@dataclass
class PlanResult:
    scenario: object
    encoding: Encoding
    solution: object
    status: Status
    times: np.ndarray = None
    states: np.ndarray = None
    controls: np.ndarray = None
    objective: float = float("inf")
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.status == Status.OPTIMAL

    @property
    def grid(self):
        return self.encoding.grid


def plan(scenario, gap=GAP_TOL, time_limit=None, max_nodes=100000, retries=3):
    """Build and solve; retry with a ten times larger big-M when the constant binds
    or may have cut the problem down to infeasibility."""
    t0 = time.perf_counter()
    for attempt in range(retries + 1):
        enc = build_miqp(scenario)
        build_time = time.perf_counter() - t0
        sol = branch_and_bound(enc.model, gap, max_nodes, time_limit)
        stats = dict(sol.stats)
        stats.update(build_time=build_time, big_M=scenario.config.big_M,
                     binaries=len(enc.model.binaries), variables=enc.model.num_vars,
                     rows=len(enc.model.rows), attempts=attempt + 1)
        if not sol.optimal:
            # a capped constant may cut off feasible points; only then is a retry useful
            capped = any(b.M >= scenario.config.big_M for b in enc.model.bigm)
            if sol.status != Status.INFEASIBLE or not capped or attempt == retries:
                return PlanResult(scenario, enc, sol, sol.status, np.array(enc.grid.nodes), stats=stats)
            scenario = replace(scenario, config=replace(scenario.config, big_M=scenario.config.big_M * 10))
            continue
        bad = check_big_m(enc, sol.x)
        if not bad:
            states, controls = enc.extract(sol.x)
            stats["total_time"] = time.perf_counter() - t0
            return PlanResult(scenario, enc, sol, sol.status, np.array(enc.grid.nodes),
                              states, controls, sol.objective, stats)
        if attempt == retries:
            raise BigMTooSmall(f"big-M rows still binding at M={scenario.config.big_M:g}: "
                               f"{[b[0] for b in bad[:5]]}")
        scenario = replace(scenario, config=replace(scenario.config, big_M=scenario.config.big_M * 10))
