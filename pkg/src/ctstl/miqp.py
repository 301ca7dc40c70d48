"""Mixed-integer convex QP: model container, relaxation solver, branch and bound.

Continuous relaxations are handed to the Clarabel interior-point solver;
the branch-and-bound search, rounding heuristic and bookkeeping live here.
"""
import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import clarabel
import numpy as np
from scipy import sparse

FEAS_TOL = 1e-7
INT_TOL = 1e-6
GAP_TOL = 1e-6

SENSES = ("<=", ">=", "=")


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass
class Row:
    coeffs: dict
    sense: str
    rhs: float
    name: str


@dataclass
class BigMRow:
    """A row whose ``M * binary`` term switches it off; checked after solving."""

    row: int
    binary: int
    M: float
    relaxed_when: int


class MiqpModel:
    """Variables, linear rows and a convex quadratic objective.

    The objective is ``sum c_ij x_i x_j + sum q_i x_i + const`` with the
    quadratic part positive semidefinite.  Rows are ``coeffs . x <sense> rhs``.
    """

    def __init__(self, name="model"):
        self.name = name
        self.names = []
        self.lb = []
        self.ub = []
        self.is_binary = []
        self.priority = []
        self.rows = []
        self.quad = {}
        self.lin = {}
        self.const = 0.0
        self.bigm = []
        self._compiled = None
        self._name_set = set()

    # -- building
    def _touch(self):
        self._compiled = None

    def add_var(self, name, lb=-math.inf, ub=math.inf, binary=False, priority=0):
        if name in self._name_set:
            raise ValueError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise ValueError(f"empty bounds for {name}: [{lb}, {ub}]")
        self._name_set.add(name)
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_binary.append(bool(binary))
        self.priority.append(int(priority))
        self._touch()
        return len(self.names) - 1

    def add_binary(self, name, priority=1):
        return self.add_var(name, 0.0, 1.0, binary=True, priority=priority)

    def add_row(self, coeffs, sense, rhs, name=None):
        if sense not in SENSES:
            raise ValueError(f"sense must be one of {SENSES}, got {sense!r}")
        if not np.isfinite(rhs):
            raise ValueError("row right-hand side must be finite")
        merged = {}
        for i, c in (coeffs.items() if isinstance(coeffs, dict) else coeffs):
            if not 0 <= i < len(self.names):
                raise IndexError(f"row references unknown variable {i}")
            merged[int(i)] = merged.get(int(i), 0.0) + float(c)
        merged = {i: c for i, c in merged.items() if c != 0.0}
        self.rows.append(Row(merged, sense, float(rhs), name or f"c{len(self.rows)}"))
        self._touch()
        return len(self.rows) - 1

    def add_bigm_row(self, coeffs, sense, rhs, binary, M, relaxed_when, name=None):
        """Add ``coeffs . x <sense> rhs`` already containing the ``M * binary`` term."""
        r = self.add_row(coeffs, sense, rhs, name)
        self.bigm.append(BigMRow(r, binary, float(M), int(relaxed_when)))
        return r

    def add_quad(self, i, j, coef):
        key = (min(i, j), max(i, j))
        self.quad[key] = self.quad.get(key, 0.0) + float(coef)
        self._touch()

    def add_lin(self, i, coef):
        self.lin[i] = self.lin.get(i, 0.0) + float(coef)
        self._touch()

    def fix(self, i, value):
        self.lb[i] = self.ub[i] = float(value)
        self._touch()

    # -- queries
    @property
    def num_vars(self):
        return len(self.names)

    @property
    def binaries(self):
        return [i for i, b in enumerate(self.is_binary) if b]

    def index(self, name):
        return self.names.index(name)

    def compile(self):
        if self._compiled is None:
            n = self.num_vars
            data, ri, ci = [], [], []
            for r, row in enumerate(self.rows):
                for i, c in row.coeffs.items():
                    data.append(c)
                    ri.append(r)
                    ci.append(i)
            A = sparse.csr_matrix((data, (ri, ci)), shape=(len(self.rows), n))
            pd, pi, pj = [], [], []
            for (i, j), c in self.quad.items():
                if i == j:
                    pd.append(2 * c); pi.append(i); pj.append(i)
                else:
                    pd += [c, c]; pi += [i, j]; pj += [j, i]
            P = sparse.csr_matrix((pd, (pi, pj)), shape=(n, n))
            q = np.zeros(n)
            for i, c in self.lin.items():
                q[i] += c
            self._compiled = dict(
                A=A, Acsc=A.tocsc(), P=P, q=q,
                sense=np.array([r.sense for r in self.rows], dtype="<U2"),
                rhs=np.array([r.rhs for r in self.rows], dtype=float),
                lb=np.array(self.lb, dtype=float), ub=np.array(self.ub, dtype=float),
                binary=np.array(self.is_binary, dtype=bool),
                priority=np.array(self.priority, dtype=int),
            )
        return self._compiled

    def objective(self, x):
        c = self.compile()
        return float(0.5 * x @ (c["P"] @ x) + c["q"] @ x + self.const)

    def violations(self, x):
        """Per-row violation (positive means violated) and per-bound violation."""
        c = self.compile()
        act = c["A"] @ x
        viol = np.zeros(len(self.rows))
        le, ge, eq = c["sense"] == "<=", c["sense"] == ">=", c["sense"] == "="
        viol[le] = act[le] - c["rhs"][le]
        viol[ge] = c["rhs"][ge] - act[ge]
        viol[eq] = np.abs(act[eq] - c["rhs"][eq])
        bviol = np.maximum(c["lb"] - x, x - c["ub"])
        return viol, bviol

    def max_violation(self, x):
        viol, bviol = self.violations(x)
        return float(max(viol.max(initial=0.0), bviol.max(initial=0.0)))


@dataclass
class Solution:
    status: Status
    x: np.ndarray = None
    objective: float = math.inf
    binaries: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    certificate: object = None

    @property
    def optimal(self):
        return self.status == Status.OPTIMAL

    def value(self, i):
        return float(self.x[i])


def _settings(tol):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_feas = tol
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_infeas_abs = 1e-9
    s.tol_infeas_rel = 1e-9
    s.max_iter = 300
    return s


def solve_qp(model, fixed=None, tol=1e-10):
    """Solve the continuous relaxation with ``fixed`` binaries pinned.

    Unfixed binaries are relaxed to ``[0, 1]``.  Variables whose bounds
    coincide are substituted out before the interior-point solve.
    """
    c = model.compile()
    n = model.num_vars
    lb, ub = c["lb"].copy(), c["ub"].copy()
    for i, v in (fixed or {}).items():
        if v < lb[i] - FEAS_TOL or v > ub[i] + FEAS_TOL:
            return Solution(Status.INFEASIBLE, certificate=("bound", i), stats={"qp": 1})
        lb[i] = ub[i] = float(v)
    pinned = lb == ub
    free = np.nonzero(~pinned)[0]
    xfix = np.zeros(n)
    xfix[pinned] = lb[pinned]

    A, P, q = c["Acsc"], c["P"], c["q"]
    rhs = c["rhs"] - A @ xfix
    Af = A[:, free].tocsr()
    Pf = P[free][:, free]
    qf = q[free] + (P @ xfix)[free]
    const = 0.5 * xfix @ (P @ xfix) + q @ xfix + model.const

    # rows with no free column are decided here
    nnz = np.diff(Af.indptr)
    empty = nnz == 0
    sense = c["sense"]
    if np.any(empty):
        r = rhs[empty]
        s = sense[empty]
        bad = ((s == "<=") & (r < -FEAS_TOL)) | ((s == ">=") & (r > FEAS_TOL)) | \
              ((s == "=") & (np.abs(r) > FEAS_TOL))
        if np.any(bad):
            row = int(np.nonzero(empty)[0][np.argmax(bad)])
            return Solution(Status.INFEASIBLE, certificate=("row", row), stats={"qp": 1})
    keep = ~empty
    eq = keep & (sense == "=")
    le = keep & (sense == "<=")
    ge = keep & (sense == ">=")
    nf = free.size
    if nf == 0:
        x = xfix
        return Solution(Status.OPTIMAL, x, model.objective(x), _bin_values(model, x), {"qp": 1})

    blocks, b = [], []
    blocks.append(Af[eq]); b.append(rhs[eq])
    blocks.append(Af[le]); b.append(rhs[le])
    blocks.append(-Af[ge]); b.append(-rhs[ge])
    lbf, ubf = lb[free], ub[free]
    fu = np.nonzero(np.isfinite(ubf))[0]
    fl = np.nonzero(np.isfinite(lbf))[0]
    I = sparse.identity(nf, format="csr")
    blocks.append(I[fu]); b.append(ubf[fu])
    blocks.append(-I[fl]); b.append(-lbf[fl])
    Aall = sparse.vstack(blocks, format="csc")
    ball = np.concatenate(b)
    n_eq = int(eq.sum())
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if Aall.shape[0] - n_eq:
        cones.append(clarabel.NonnegativeConeT(Aall.shape[0] - n_eq))
    if Aall.shape[0] == 0:
        Aall = sparse.csc_matrix((1, nf))
        ball = np.zeros(1)
        cones = [clarabel.NonnegativeConeT(1)]
    Pu = sparse.triu(Pf, format="csc")
    solver = clarabel.DefaultSolver(Pu, qf, Aall, ball, cones, _settings(tol))
    res = solver.solve()
    status = str(res.status)
    stats = {"qp": 1, "iterations": res.iterations, "r_prim": res.r_prim, "r_dual": res.r_dual}
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return Solution(Status.INFEASIBLE, stats=stats, certificate=np.asarray(res.z))
    x = xfix.copy()
    if status in ("Solved", "AlmostSolved"):
        x[free] = np.asarray(res.x)
        # clip pinned-to-interval round-off so bounds hold exactly
        x = np.minimum(np.maximum(x, lb), ub)
        viol = _violation_with(model, x, lb, ub)
        if viol <= FEAS_TOL:
            return Solution(Status.OPTIMAL, x, float(res.obj_val + const),
                            _bin_values(model, x), stats)
        stats["violation"] = viol
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        stats["unbounded"] = True
    return Solution(Status.ITER_LIMIT, x if status != "Unsolved" else None, stats=stats)


def _violation_with(model, x, lb, ub):
    viol, _ = model.violations(x)
    return float(max(viol.max(initial=0.0), np.max(np.maximum(lb - x, x - ub), initial=0.0)))


def _bin_values(model, x):
    return {i: float(x[i]) for i in model.binaries}


def _fractional(model, x, tol=INT_TOL):
    return [i for i in model.binaries if abs(x[i] - round(x[i])) > tol]


def _pick_branch(model, frac, x):
    pr = model.priority
    return min(frac, key=lambda i: (-pr[i], abs(x[i] - 0.5), i))


def _round(model, x, frac):
    """Simple rounding: flip each fractional binary only if no row it touches breaks."""
    c = model.compile()
    A, Acsc, rhs, sense = c["A"], c["Acsc"], c["rhs"], c["sense"]
    x = x.copy()
    act = A @ x
    scale = 1.0 + np.abs(rhs)
    for i in frac:
        start, end = Acsc.indptr[i], Acsc.indptr[i + 1]
        rows, vals = Acsc.indices[start:end], Acsc.data[start:end]
        near = float(round(x[i]))
        for v in (near, 1.0 - near):
            new = act[rows] + vals * (v - x[i])
            s, r = sense[rows], rhs[rows]
            tol = FEAS_TOL * scale[rows]
            ok = np.where(s == "<=", new <= r + tol,
                          np.where(s == ">=", new >= r - tol, np.abs(new - r) <= tol))
            if ok.all():
                act[rows] = new
                x[i] = v
                break
        else:
            return None
    return x


def branch_and_bound(model, gap=GAP_TOL, max_nodes=100000, time_limit=None):
    """Best-first branch and bound over the model's binaries.

    Branches on the most fractional binary within the highest priority
    class, lowest index on ties.  Incumbents always come from a QP with all
    binaries fixed, so their objective matches a direct solve of that
    assignment.
    """
    t0 = time.perf_counter()
    stats = {"nodes": 0, "qp": 0, "incumbents": [], "pruned": 0,
             "max_bound_drop": 0.0, "numerical": 0}
    bins = model.binaries

    def qp(fixed):
        sol = solve_qp(model, fixed)
        stats["qp"] += 1
        return sol

    if not bins:
        sol = qp({})
        sol.stats.update(stats)
        sol.stats["time"] = time.perf_counter() - t0
        return sol

    best = None
    best_obj = math.inf

    def try_incumbent(assign, node_id):
        nonlocal best, best_obj
        sol = qp(assign)
        if sol.optimal and sol.objective < best_obj - 1e-12:
            best, best_obj = sol, sol.objective
            stats["incumbents"].append((node_id, sol.objective))
        return sol

    root = qp({})
    if root.status == Status.INFEASIBLE:
        out = Solution(Status.INFEASIBLE, stats=stats, certificate=root.certificate)
        out.stats["time"] = time.perf_counter() - t0
        return out
    seq = 0
    heap = [(root.objective if root.optimal else -math.inf, seq, {}, root)]
    hit_limit = False
    while heap:
        bound, _, fixed, sol = heapq.heappop(heap)
        if bound >= best_obj - gap:
            stats["pruned"] += 1
            continue
        if stats["nodes"] >= max_nodes or (time_limit and time.perf_counter() - t0 > time_limit):
            hit_limit = True
            break
        stats["nodes"] += 1
        node_id = stats["nodes"]
        if sol is not None and sol.x is not None and sol.optimal:
            x = sol.x
            frac = _fractional(model, x)
            if not frac:
                try_incumbent({**fixed, **{i: round(x[i]) for i in bins}}, node_id)
                continue
            rounded = _round(model, x, frac)
            if rounded is not None:
                try_incumbent({**fixed, **{i: round(rounded[i]) for i in bins}}, node_id)
                if bound >= best_obj - gap:
                    continue
            var = _pick_branch(model, frac, x)
            order = (0, 1) if x[var] < 0.5 else (1, 0)
        else:
            stats["numerical"] += 1
            free = [i for i in bins if i not in fixed]
            if not free:
                continue
            var = min(free, key=lambda i: (-model.priority[i], i))
            order = (0, 1)
        for v in order:
            child_fixed = {**fixed, var: v}
            child = qp(child_fixed)
            if child.status == Status.INFEASIBLE:
                continue
            if child.optimal:
                stats["max_bound_drop"] = max(stats["max_bound_drop"], bound - child.objective)
                cb = max(bound, child.objective)
            else:
                cb = bound
            if cb < best_obj - gap:
                seq += 1
                heapq.heappush(heap, (cb, seq, child_fixed, child))
    stats["time"] = time.perf_counter() - t0
    stats["open"] = len(heap)
    if best is None:
        status = Status.ITER_LIMIT if hit_limit or stats["numerical"] else Status.INFEASIBLE
        return Solution(status, stats=stats)
    out = Solution(Status.ITER_LIMIT if hit_limit else Status.OPTIMAL, best.x, best.objective,
                   {i: int(round(best.x[i])) for i in bins}, stats)
    return out


# ------------------------------------------------------------- LP export

def _fmt(v):
    r = repr(float(v) + 0.0)
    return r[:-2] if r.endswith(".0") else r


def _lp_name(name):
    out = "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in name)
    return out if out and not out[0].isdigit() and out[0] not in ".eE" else "v" + out


def _terms(pairs):
    parts = []
    for coef, var in pairs:
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = var if mag == 1.0 else f"{_fmt(mag)} {var}"
        parts.append((sign, body))
    if not parts:
        return "0"
    text = ("- " if parts[0][0] == "-" else "") + parts[0][1]
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return text


def _wrap(prefix, text, width=250):
    words = text.split(" ")
    lines, cur = [], prefix
    for w in words:
        if len(cur) + len(w) + 1 > width and cur.strip():
            lines.append(cur)
            cur = "   "
        cur = cur + (" " if not cur.endswith(" ") and cur else "") + w
    lines.append(cur)
    return lines


def export_lp(model):
    """CPLEX-LP text for ``model``; bit-exact for a given model and name order.

    Quadratic objective terms use the ``[ ... ] / 2`` form, so every
    coefficient inside the bracket is doubled.
    """
    names = [_lp_name(nm) for nm in model.names]
    lin = _terms([(model.lin[i], names[i]) for i in sorted(model.lin) if model.lin[i] != 0.0])
    quad = []
    for (i, j) in sorted(model.quad):
        c = model.quad[(i, j)] * 2
        if c == 0.0:
            continue
        quad.append((c, f"{names[i]} ^ 2" if i == j else f"{names[i]} * {names[j]}"))
    obj = lin if lin != "0" or not quad else ""
    if quad:
        qtext = "[ " + _terms(quad) + " ] / 2"
        obj = qtext if not obj else f"{obj} + {qtext}"
    lines = ["Minimize"]
    lines += _wrap(" obj:", obj)
    lines.append("Subject To")
    for row in model.rows:
        expr = _terms([(row.coeffs[i], names[i]) for i in sorted(row.coeffs)])
        op = {"<=": "<=", ">=": ">=", "=": "="}[row.sense]
        lines += _wrap(f" {_lp_name(row.name)}:", f"{expr} {op} {_fmt(row.rhs)}")
    bounds = []
    for i, nm in enumerate(names):
        if model.is_binary[i] and model.lb[i] == 0.0 and model.ub[i] == 1.0:
            continue
        lo, hi = model.lb[i], model.ub[i]
        if lo == 0.0 and hi == math.inf:
            continue
        if lo == hi:
            bounds.append(f" {nm} = {_fmt(lo)}")
        elif lo == -math.inf and hi == math.inf:
            bounds.append(f" {nm} free")
        elif lo == -math.inf:
            bounds.append(f" -inf <= {nm} <= {_fmt(hi)}")
        elif hi == math.inf:
            bounds.append(f" {nm} >= {_fmt(lo)}")
        else:
            bounds.append(f" {_fmt(lo)} <= {nm} <= {_fmt(hi)}")
    if bounds:
        lines.append("Bounds")
        lines += bounds
    bins = [names[i] for i in model.binaries]
    if bins:
        lines.append("Binary")
        lines += _wrap(" ", " ".join(bins))
    lines.append("End")
    return "\n".join(lines) + "\n"
