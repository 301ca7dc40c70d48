"""Continuous-time verification of planned trajectories.

Everything here works from the closed-form ZOH interpolant (matrix
exponentials) and never from the planner's modal expansion or MIQP, so it
can serve as an independent check of the encoder.

Linear functionals ``g(t) = c . x(t) + d . u_k + e`` are the workhorse:
predicates, their time derivatives and pairwise differences all have this
form.  Their extrema on a hold window are found by scanning a fixed
bracket grid for sign changes of the derivative and refining with Brent's
method.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .dynamics import NODE_TOL, Interpolant, TimeGrid, step_matrices
from .errors import BoundViolation, InsufficientTrace
from .stl import (Always, And, Eventually, FalseF, Not, Or, Predicate, TrueF, Until,
                  discrete_robustness, horizon, is_temporal_free, predicates, to_text)

VIOLATION_TOL = 1e-6
MARGIN_CAP = 1e18
SCAN_POINTS = 1000
ROOT_XTOL = 1e-12


def _cap(v):
    return float(min(max(v, -MARGIN_CAP), MARGIN_CAP))


_stack_cache = {}


def _propagators(sys, s, cache=False):
    """Stacked ``(Ad(s_i), Bd(s_i))`` for a vector of offsets ``s``.

    With ``cache`` the result is memoized by size and end points, which is
    only valid for evenly spaced ``s``.
    """
    key = (id(sys), s.size, float(s[0]), float(s[-1]))
    if cache:
        hit = _stack_cache.get(key)
        if hit is not None and hit[0] is sys:
            return hit[1], hit[2]
    n, m = sys.n, sys.m
    M = np.zeros((s.size, n + m, n + m))
    M[:, :n, :n] = sys.A[None] * s[:, None, None]
    M[:, :n, n:] = sys.B[None] * s[:, None, None]
    E = expm(M)
    Ad, Bd = E[:, :n, :n], E[:, :n, n:]
    if cache:
        if len(_stack_cache) > 256:
            _stack_cache.clear()
        _stack_cache[key] = (sys, Ad, Bd)
    return Ad, Bd


@dataclass(eq=False)
class Trajectory:
    """Node states and held inputs on a grid, with one interpolant per hold."""

    system: object
    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    interpolants: list = field(default=None, repr=False)
    check_consistency: bool = True

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float).reshape(self.grid.N, self.system.m)
        if self.states.shape != (self.grid.N + 1, self.system.n):
            raise ValueError(f"states must be {(self.grid.N + 1, self.system.n)}, got {self.states.shape}")
        nodes = self.grid.nodes
        self.interpolants = [Interpolant(self.system, self.states[k], self.controls[k], nodes[k], nodes[k + 1])
                             for k in range(self.grid.N)]
        if self.check_consistency:
            for k, ip in enumerate(self.interpolants):
                end = ip(nodes[k + 1])
                err = np.max(np.abs(end - self.states[k + 1]))
                if err > 1e-7 * (1.0 + np.max(np.abs(self.states[k + 1]))):
                    raise ValueError(f"node {k + 1} state differs from the propagated one by {err:.3g}")

    @classmethod
    def simulate(cls, system, x0, grid, controls):
        """Propagate ``x0`` through the held inputs exactly."""
        controls = np.asarray(controls, dtype=float).reshape(grid.N, system.m)
        xs = [np.asarray(x0, dtype=float)]
        for k, tau in enumerate(grid.taus):
            Ad, Bd = step_matrices(system, tau)
            xs.append(Ad @ xs[-1] + Bd @ controls[k])
        return cls(system, grid, np.array(xs), controls)

    @property
    def t_f(self):
        return self.grid.t_f

    def window_index(self, t):
        nodes = self.grid.nodes
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        return min(max(k, 0), self.grid.N - 1)

    def state(self, t):
        return self.interpolants[self.window_index(t)](t)

    def states_at(self, ts):
        """States at sorted or unsorted times; exact node states at node times."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, self.system.n))
        nodes = np.asarray(self.grid.nodes)
        ks = np.clip(np.searchsorted(nodes, ts, side="right") - 1, 0, self.grid.N - 1)
        for k in np.unique(ks):
            sel = np.nonzero(ks == k)[0]
            s = np.clip(ts[sel] - nodes[k], 0.0, self.grid.taus[k])
            Ad, Bd = _propagators(self.system, s) if s.size > 1 else \
                tuple(a[None] for a in step_matrices(self.system, float(s[0])))
            out[sel] = Ad @ self.states[k] + Bd @ self.controls[k]
        # exact node values so dense output reproduces the node states
        for i in np.nonzero(np.isin(ts, nodes))[0]:
            out[i] = self.states[int(np.searchsorted(nodes, ts[i]))]
        return out

    def controls_at(self, ts):
        ks = [self.window_index(t) for t in np.atleast_1d(ts)]
        return self.controls[ks]

    def dense(self, step=1e-3):
        """Sample times covering every node exactly and spacing at most ``step``."""
        ts = []
        for k, (a, b) in enumerate(zip(self.grid.nodes, self.grid.nodes[1:])):
            cnt = max(1, int(math.ceil((b - a) / step - 1e-9)))
            ts.extend(a + (b - a) * np.arange(cnt) / cnt)
        ts.append(self.grid.t_f)
        ts = np.array(ts)
        return ts, self.states_at(ts)


# ------------------------------------------------------- functional extrema

def _functional_on_window(traj, k, c, d, e):
    """``g(s) = c . x(s) + d . u_k + e`` on window ``k`` and its derivative."""
    A, B = traj.system.A, traj.system.B
    x0, u = traj.states[k], traj.controls[k]
    const = float(np.dot(d, u) + e) if d is not None else float(e)
    cA, cB = c @ A, c @ B

    def g(s):
        Ad, Bd = step_matrices(traj.system, s)
        return float(c @ (Ad @ x0 + Bd @ u)) + const

    def dg(s):
        Ad, Bd = step_matrices(traj.system, s)
        return float(cA @ (Ad @ x0 + Bd @ u) + cB @ u)

    return g, dg


def _scan(traj, k, lo, hi, npts=SCAN_POINTS):
    """States on the window's fixed lattice restricted to ``(lo, hi)``, plus both ends.

    Sharing one lattice per window lets every sub-interval reuse the same
    cached propagators while keeping at least the full-window resolution.
    """
    sys = traj.system
    full = np.linspace(0.0, traj.grid.taus[k], npts + 1)
    Ad, Bd = _propagators(sys, full, cache=True)
    inner = np.nonzero((full > lo) & (full < hi))[0]
    s = np.concatenate([[lo], full[inner], [hi]])
    x0, u = traj.states[k], traj.controls[k]
    X = np.empty((s.size, sys.n))
    X[1:-1] = Ad[inner] @ x0 + Bd[inner] @ u
    for i, si in ((0, lo), (-1, hi)):
        A1, B1 = step_matrices(sys, float(si))
        X[i] = A1 @ x0 + B1 @ u
    return s, X


def _roots(fn, s, vals):
    out = []
    sign = np.sign(vals)
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        out.append(brentq(fn, s[i], s[i + 1], xtol=ROOT_XTOL))
    out.extend(s[np.nonzero(vals == 0.0)[0]].tolist())
    return out


def functional_extrema_candidates(traj, k, funcs, lo=None, hi=None, npts=SCAN_POINTS):
    """Offsets in window ``k`` where any ``(c, d, e)`` functional has a root,
    plus the offsets where its derivative changes sign, plus the window ends."""
    tau = traj.grid.taus[k]
    lo = 0.0 if lo is None else max(0.0, lo)
    hi = tau if hi is None else min(tau, hi)
    if hi - lo <= 0:
        return np.array([lo])
    s, X = _scan(traj, k, lo, hi, npts)
    A, B = traj.system.A, traj.system.B
    u = traj.controls[k]
    cands = [lo, hi]
    for c, d, e, want_roots in funcs:
        c = np.asarray(c, dtype=float)
        g, dg = _functional_on_window(traj, k, c, d, e)
        deriv = X @ (c @ A) + (c @ B) @ u
        cands += _roots(dg, s, deriv)
        if want_roots:
            vals = X @ c + (0.0 if d is None else float(np.dot(d, u))) + e
            cands += _roots(g, s, vals)
    return np.unique(np.clip(cands, lo, hi))


def window_predicate_min(interp, pred, lo=None, hi=None):
    """True minimum of ``pred`` along one hold and the absolute time it occurs.

    Candidates are the window ends and the roots of the time derivative of
    the predicate value, located by a bracket scan and Brent refinement.
    """
    grid = TimeGrid((0.0, interp.tau))
    traj = Trajectory(interp.sys, grid,
                      np.vstack([interp.x_start, interp(interp.t_end)]), interp.u[None],
                      check_consistency=False)
    row = np.asarray(pred.row, dtype=float)
    cands = functional_extrema_candidates(traj, 0, [(row, None, pred.offset, False)], lo, hi)
    X = traj.states_at(cands)
    vals = X @ row + pred.offset
    i = int(np.argmin(vals))
    return float(vals[i]), float(interp.t_start + cands[i])


# --------------------------------------------------- continuous semantics

def _eval_tf(f, X):
    """Vectorized robustness of a temporal-free formula on state rows ``X``."""
    if isinstance(f, TrueF):
        return np.full(len(X), np.inf)
    if isinstance(f, FalseF):
        return np.full(len(X), -np.inf)
    if isinstance(f, Predicate):
        return X @ np.asarray(f.row) + f.offset
    if isinstance(f, Not):
        return -_eval_tf(f.child, X)
    if isinstance(f, And):
        return np.min([_eval_tf(c, X) for c in f.children], axis=0)
    if isinstance(f, Or):
        return np.max([_eval_tf(c, X) for c in f.children], axis=0)
    raise TypeError(f"temporal operator {f!r} in temporal-free evaluation")


class _Evaluator:
    """Continuous-time quantitative semantics with witness times."""

    def __init__(self, traj, nested_points=100):
        self.traj = traj
        self.nested_points = nested_points
        self.memo = {}
        self.tol = NODE_TOL * max(1.0, traj.t_f)

    def value(self, f, t):
        key = (f, round(t, 12))
        if key not in self.memo:
            self.memo[key] = self._value(f, t)
        return self.memo[key]

    def _value(self, f, t):
        if is_temporal_free(f):
            v = float(_eval_tf(f, self.traj.states_at([t]))[0])
            return v, t
        if isinstance(f, Not):
            v, w = self.value(f.child, t)
            return -v, w
        if isinstance(f, And):
            return min((self.value(c, t) for c in f.children), key=lambda p: p[0])
        if isinstance(f, Or):
            return max((self.value(c, t) for c in f.children), key=lambda p: p[0])
        lo, hi = t + f.a, min(t + f.b, self.traj.t_f)
        if isinstance(f, Always):
            return self.extreme(f.child, lo, hi, "min")
        if isinstance(f, Eventually):
            return self.extreme(f.child, lo, hi, "max")
        if isinstance(f, Until):
            return self.until(f, t, lo, hi)
        raise TypeError(f"not a formula: {f!r}")

    def _windows(self, lo, hi):
        nodes = self.traj.grid.nodes
        out = []
        if hi <= lo:
            k = self.traj.window_index(lo)
            return [(k, lo - nodes[k], lo - nodes[k])]
        for k in range(self.traj.grid.N):
            a, b = max(lo, nodes[k]), min(hi, nodes[k + 1])
            if b > a:
                out.append((k, a - nodes[k], b - nodes[k]))
        return out

    def _tf_candidates(self, psi, lo, hi):
        preds = list(dict.fromkeys(predicates(psi)))
        funcs = [(np.asarray(p.row), None, p.offset, False) for p in preds]
        for i in range(len(preds)):
            for j in range(i + 1, len(preds)):
                funcs.append((np.asarray(preds[i].row) - np.asarray(preds[j].row), None,
                              preds[i].offset - preds[j].offset, True))
        ts = [lo, hi]
        nodes = self.traj.grid.nodes
        for k, a, b in self._windows(lo, hi):
            s = functional_extrema_candidates(self.traj, k, funcs, a, b)
            ts.extend((nodes[k] + s).tolist())
        return np.unique(np.clip(ts, lo, hi))

    def extreme(self, psi, lo, hi, kind):
        if hi < lo - self.tol:
            return (-math.inf if kind == "max" else math.inf), lo
        hi = max(hi, lo)
        if is_temporal_free(psi):
            ts = self._tf_candidates(psi, lo, hi)
            vals = _eval_tf(psi, self.traj.states_at(ts))
        else:
            ts = self._scan_times(lo, hi)
            vals = np.array([self.value(psi, t)[0] for t in ts])
        i = int(np.argmin(vals) if kind == "min" else np.argmax(vals))
        best_t, best_v = float(ts[i]), float(vals[i])
        if not is_temporal_free(psi):
            best_t, best_v = self._refine(psi, ts, i, kind, best_t, best_v)
        if is_temporal_free(psi):
            return best_v, best_t
        return best_v, self.value(psi, best_t)[1]

    def _scan_times(self, lo, hi):
        nodes = self.traj.grid.nodes
        ts = [lo, hi] + [t for t in nodes if lo < t < hi]
        for k, a, b in self._windows(lo, hi):
            ts.extend(nodes[k] + np.linspace(a, b, self.nested_points + 1))
        return np.unique(np.clip(ts, lo, hi))

    def _refine(self, psi, ts, i, kind, best_t, best_v):
        a, b = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
        sgn = 1.0 if kind == "min" else -1.0
        gr = (math.sqrt(5) - 1) / 2
        x1, x2 = b - gr * (b - a), a + gr * (b - a)
        f1, f2 = sgn * self.value(psi, x1)[0], sgn * self.value(psi, x2)[0]
        for _ in range(40):
            if b - a < 1e-9:
                break
            if f1 < f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - gr * (b - a)
                f1 = sgn * self.value(psi, x1)[0]
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + gr * (b - a)
                f2 = sgn * self.value(psi, x2)[0]
        for t, v in ((x1, f1), (x2, f2)):
            if sgn * v < sgn * best_v:
                best_t, best_v = float(t), float(sgn * v)
        return best_t, best_v

    def until(self, f, t, lo, hi):
        if hi < lo - self.tol:
            return -math.inf, lo
        ts = self._scan_times(lo, max(hi, lo))
        best = (-math.inf, lo)
        for tp in ts:
            right = self.value(f.right, tp)
            left = self.extreme(f.left, t, tp, "min") if tp > t else self.value(f.left, t)
            cand = min(right, left, key=lambda p: p[0])
            if cand[0] > best[0]:
                best = (cand[0], tp if right[0] <= left[0] else cand[1])
        return best


@dataclass
class Verdict:
    satisfied: bool
    worst_margin: float
    witness_time: float
    report: list = field(default_factory=list)

    def to_dict(self):
        return {"satisfied": self.satisfied, "worst_margin": self.worst_margin,
                "witness_time": self.witness_time, "report": self.report}


def check_continuous(traj, f, nested_points=100):
    """Continuous-time robustness of ``f`` at t=0 along ``traj``.

    G and F over formulas without temporal operators are evaluated exactly
    (ends, hold boundaries, stationary points and predicate crossings);
    nested operators and Until use a scan of ``nested_points`` per hold plus
    golden-section refinement.
    """
    tol = NODE_TOL * max(1.0, traj.t_f)
    if horizon(f) > traj.t_f + tol:
        raise InsufficientTrace(f"trajectory ends at {traj.t_f:g} but the formula needs {horizon(f):g}")
    ev = _Evaluator(traj, nested_points)
    parts = list(f.children) if isinstance(f, And) else [f]
    report = []
    for p in parts:
        v, w = ev.value(p, 0.0)
        report.append({"formula": to_text(p), "margin": _cap(v), "witness_time": float(w),
                       "satisfied": bool(v >= -VIOLATION_TOL)})
    v, w = ev.value(f, 0.0)
    margin = _cap(v)
    return Verdict(bool(margin >= -VIOLATION_TOL), margin, float(w), report)


@dataclass
class Comparison:
    discrete: float
    verdict: Verdict
    classification: str


def compare_discrete_continuous(traj, f):
    """Discrete robustness at the grid nodes against the continuous verdict."""
    d = discrete_robustness((np.asarray(traj.grid.nodes), traj.states), f)
    verdict = check_continuous(traj, f)
    dsat = d >= -VIOLATION_TOL
    if dsat and verdict.satisfied:
        cls = "consistent"
    elif dsat:
        cls = "discrete-only-satisfied"
    elif verdict.satisfied:
        cls = "continuous-only-satisfied"
    else:
        cls = "both-violated"
    return Comparison(_cap(d), verdict, cls)


# ------------------------------------------------------------------ audit

@dataclass
class AuditEntry:
    window: int
    label: str
    kind: str
    encoded: float
    true_min: float
    argmin: float
    active: bool
    ok: bool
    reason: str = ""


def barrier_window_min(traj, k, row, feedthrough, offset):
    """True minimum over hold ``k`` of ``row . x + feedthrough . u_k + offset``."""
    row = np.asarray(row, dtype=float)
    d = None if feedthrough is None else np.asarray(feedthrough, dtype=float)
    s = functional_extrema_candidates(traj, k, [(row, d, offset, False)])
    X = traj.states_at(traj.grid.nodes[k] + s)
    vals = X @ row + (0.0 if d is None else float(d @ traj.controls[k])) + offset
    i = int(np.argmin(vals))
    return float(vals[i]), float(traj.grid.nodes[k] + s[i])


def cbf_bound_audit(traj, records, values=None, raise_on_violation=True):
    """Check every encoded window bound against the true window minimum.

    A window fails if its encoded bound exceeds the true minimum by more
    than 1e-9 (the bound would be unsound), or if it was active and the
    true minimum is below -1e-6.  ``values`` gives the solved variable
    vector, used to read each window's gate binary.
    """
    entries = []
    for rec in records:
        k = rec.k
        meta = rec.dec.meta
        true, at = barrier_window_min(traj, k, meta["row"], meta.get("feedthrough"), rec.dec.sigma)
        enc = rec.bound_value(traj.states[k], traj.controls[k])
        active = rec.gate is None or (values is not None and values[rec.gate] > 0.5)
        ok, reason = True, ""
        if enc > true + 1e-9 * (1.0 + abs(true)):
            ok, reason = False, f"encoded bound {enc:.6g} exceeds true minimum {true:.6g}"
        elif active and true < -VIOLATION_TOL:
            ok, reason = False, f"active window dips to {true:.6g} at t={at:.6g}"
        entries.append(AuditEntry(k, rec.label, rec.kind, enc, true, at, active, ok, reason))
    bad = [e for e in entries if not e.ok]
    if bad and raise_on_violation:
        raise BoundViolation([{"window": e.window, "label": e.label, "reason": e.reason} for e in bad])
    return entries
