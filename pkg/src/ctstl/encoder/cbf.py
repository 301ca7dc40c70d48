"""Window lower bounds on barrier values between two grid nodes.

For a hold window of length tau starting at node k, a barrier value
zeta(s) = row . x(s) + d . u + offset is a finite sum of
``coef * exp(lam s) s**j`` with coefficients linear in (x_k, u_k).  Each
term's minimum over [0, tau] is ``min(coef * phi_min, coef * phi_max)``,
which is concave in coef, so an auxiliary variable bounded above by both
products gives an exact convex encoding of the summed per-term minima.
"""
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import mode_decompose
from ..errors import NoRelativeDegree
from .bounds import term_extremes


@dataclass
class WindowPart:
    lam: float
    j: int
    part: str
    coef: np.ndarray
    phi_min: float
    phi_max: float
    w: int = None
    sign: int = None


@dataclass
class CbfWindowRecord:
    """What was emitted for one window; enough to audit it afterwards."""

    k: int
    t_start: float
    tau: float
    kind: str
    dec: object
    x_vars: list
    u_vars: list
    parts: list = field(default_factory=list)
    gate: int = None
    rows: list = field(default_factory=list)
    label: str = ""

    def bound_value(self, xk, uk):
        """Encoded lower bound on the barrier over the window at fixed (x_k, u_k)."""
        xk = np.asarray(xk, dtype=float)
        uk = np.asarray(uk, dtype=float)
        total = self.dec.sigma
        for p in self.parts:
            a = float(p.coef @ (xk if p.part == "x" else uk))
            total += min(a * p.phi_min, a * p.phi_max)
        return total

    def start_value(self, xk, uk):
        return float(self.dec.evaluate(xk, uk, 0.0))

    def barrier(self, xk, uk, s):
        return self.dec.evaluate(xk, uk, s)


@dataclass(frozen=True, eq=False)
class EcbfSpec:
    """Exponential barrier data for ``h(x) = row . x + offset >= 0``.

    ``zeta = h^(r) + sum_l K[l] h^(l)`` with ``K`` the coefficients of the
    monic polynomial whose roots are ``poles``.  ``cascade`` holds the
    intermediate barriers ``h_0 = h``, ``h_i = h_{i-1}' + |p_i| h_{i-1}``
    for ``i < r``; all must be non-negative at the window start.
    """

    row: tuple
    offset: float
    r: int
    K: tuple
    poles: tuple
    zeta_row: np.ndarray
    zeta_offset: float
    zeta_feedthrough: np.ndarray
    cascade: tuple


def relative_degree(sys, row, tol=1e-12):
    row = np.asarray(row, dtype=float)
    scale = max(1.0, float(np.linalg.norm(sys.A, 2)))
    Ak = np.eye(sys.n)
    for k in range(1, sys.n + 1):
        g = row @ Ak @ sys.B
        if np.max(np.abs(g), initial=0.0) > tol * (1 + np.linalg.norm(row)) * scale ** (k - 1) \
                * (1 + np.linalg.norm(sys.B)):
            return k
        Ak = Ak @ sys.A
    raise NoRelativeDegree(f"input never reaches the barrier {np.asarray(row).tolist()}")


def ecbf_spec(sys, row, offset, poles):
    """Build the exponential barrier for ``row . x + offset`` with the given poles.

    ``poles`` must have one negative real entry per derivative order.
    """
    row = np.asarray(row, dtype=float)
    r = relative_degree(sys, row)
    poles = tuple(float(p) for p in poles)
    if len(poles) != r:
        raise ValueError(f"relative degree is {r} but {len(poles)} poles were given")
    if any(p >= 0 for p in poles):
        raise ValueError("poles must be negative")
    # monic polynomial prod (s - p); K[l] multiplies the l-th derivative
    K = tuple(float(c) for c in np.real(np.poly(poles))[1:][::-1])
    derivs = [row @ np.linalg.matrix_power(sys.A, l) for l in range(r + 1)]
    zrow = derivs[r] + sum(K[l] * derivs[l] for l in range(r))
    zoff = K[0] * float(offset)
    d = row @ np.linalg.matrix_power(sys.A, r - 1) @ sys.B
    cascade = []
    coeffs = np.array([1.0])
    for i, p in enumerate(sorted(poles, key=lambda v: -abs(v))):
        if i >= r:
            break
        cascade.append((sum(c * derivs[l] for l, c in enumerate(coeffs)), coeffs[0] * float(offset)))
        coeffs = np.concatenate([[0.0], coeffs]) + np.concatenate([abs(p) * coeffs, [0.0]])
    return EcbfSpec(tuple(row), float(offset), r, K, poles, zrow, zoff, d, tuple(cascade))


def zcbf_spec(sys, row, offset, alpha):
    """Zeroing barrier ``h' + alpha h >= 0``; needs relative degree one."""
    r = relative_degree(sys, row)
    if r != 1:
        raise NoRelativeDegree(f"zeroing barrier needs relative degree 1, got {r}")
    return ecbf_spec(sys, row, offset, (-float(alpha),))


def ecbf_decomposition(sys, spec):
    return mode_decompose(sys, spec.zeta_row, spec.zeta_offset, spec.zeta_feedthrough)


def encode_cbf_window(enc, dec, k, gate=None, kind="direct", label=""):
    """Emit rows forcing ``dec``'s barrier to stay non-negative on window ``k``.

    With ``gate`` the rows only bind when that binary is 1.  Returns the
    :class:`CbfWindowRecord` describing the emitted variables.
    """
    model, cfg = enc.model, enc.config
    tau = enc.grid.taus[k]
    xv, uv = enc.x[k], enc.u[k]
    rec = CbfWindowRecord(k, enc.grid.nodes[k], tau, kind, dec, xv, uv, gate=gate, label=label)
    tag = f"{label}_w{k}"
    lhs = {}
    lower = dec.sigma
    start = {}
    start_lo = dec.sigma
    for ti, term in enumerate(dec.terms):
        ext = term_extremes(term.lam, term.j, tau)
        for part, coef, vars_ in (("x", term.cx, xv), ("u", term.cu, uv)):
            if not np.any(coef):
                continue
            lo, hi = enc.part_range(part, k, coef)
            if term.j == 0:
                for v, c in zip(vars_, coef):
                    if c:
                        start[v] = start.get(v, 0.0) + c
                start_lo += lo
            wp = WindowPart(term.lam, term.j, part, np.array(coef), ext.phi_min, ext.phi_max)
            rec.parts.append(wp)
            if ext.constant or lo >= 0 or hi <= 0:
                # one-signed coefficient: the minimum is a fixed multiple of it
                phi = ext.phi_min if (ext.constant or lo >= 0) else ext.phi_max
                for v, c in zip(vars_, coef):
                    if c:
                        lhs[v] = lhs.get(v, 0.0) + c * phi
                lower += min(_mul(lo, phi), _mul(hi, phi))
                continue
            wlo = min(_mul(lo, ext.phi_min), _mul(lo, ext.phi_max))
            w = model.add_var(f"w_{tag}_{ti}{part}", lb=wlo if np.isfinite(wlo) else -np.inf)
            wp.w = w
            lower += wlo
            for phi, nm in ((ext.phi_min, "lo"), (ext.phi_max, "hi")):
                row = {w: 1.0}
                for v, c in zip(vars_, coef):
                    if c:
                        row[v] = row.get(v, 0.0) - c * phi
                rec.rows.append(model.add_row(row, "<=", 0.0, f"hull_{tag}_{ti}{part}{nm}"))
            lhs[w] = lhs.get(w, 0.0) + 1.0
            if cfg.sign_binaries:
                M = enc.big_m(lo, hi)
                z = model.add_var(f"s_{tag}_{ti}{part}", 0.0, 1.0, binary=True, priority=0)
                wp.sign = z
                pos = {z: M}
                neg = {z: -M}
                for v, c in zip(vars_, coef):
                    if c:
                        pos[v] = pos.get(v, 0.0) + c
                        neg[v] = neg.get(v, 0.0) - c
                model.add_bigm_row(pos, "<=", M, z, M, 0, f"sgnp_{tag}_{ti}{part}")
                model.add_bigm_row(neg, "<=", 0.0, z, M, 1, f"sgnn_{tag}_{ti}{part}")
    bx = model.add_var(f"bx_{tag}", -cfg.big_M, cfg.big_M)
    bu = model.add_var(f"bu_{tag}", -cfg.big_M, cfg.big_M)
    model.add_row({bx: 1.0, bu: 1.0}, "=", 0.0, f"beta_{tag}")
    lhs[bx] = lhs.get(bx, 0.0) + 1.0
    lhs[bu] = lhs.get(bu, 0.0) + 1.0
    rec.rows.append(_gated(enc, lhs, -dec.sigma, lower - dec.sigma, gate, f"win_{tag}"))
    rec.rows.append(_gated(enc, start, -dec.sigma, start_lo - dec.sigma, gate, f"start_{tag}"))
    enc.records.append(rec)
    return rec


def _mul(a, phi):
    return 0.0 if phi == 0.0 else a * phi


def _gated(enc, coeffs, rhs, lhs_lower, gate, name):
    """Add ``coeffs . x >= rhs``, relaxed by ``M (1 - gate)`` when gated."""
    if gate is None:
        return enc.model.add_row(coeffs, ">=", rhs, name)
    need = rhs - lhs_lower
    M = enc.config.big_M if not np.isfinite(need) else \
        min(enc.config.big_M, 1.05 * max(need, 0.0) + 1.0) if enc.config.tighten_big_m else enc.config.big_M
    row = dict(coeffs)
    row[gate] = row.get(gate, 0.0) - M
    return enc.model.add_bigm_row(row, ">=", rhs - M, gate, M, 0, name)


def encode_ecbf(enc, spec, k, gate=None, label=""):
    """Exponential barrier on window ``k`` plus the cascade start conditions."""
    key = ("ecbf", spec)
    dec = enc.cache.get(key)
    if dec is None:
        dec = enc.cache[key] = ecbf_decomposition(enc.system, spec)
    rec = encode_cbf_window(enc, dec, k, gate, "ecbf", label)
    xv = enc.x[k]
    for i, (row, off) in enumerate(spec.cascade):
        coeffs = {v: c for v, c in zip(xv, row) if c}
        lo, _ = enc.part_range("x", k, row)
        rec.rows.append(_gated(enc, coeffs, -off, lo, gate, f"casc{i}_{label}_w{k}"))
    return rec
