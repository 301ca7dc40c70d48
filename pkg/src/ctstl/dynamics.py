"""Exact zero-order-hold propagation and modal expansion of linear dynamics.

The plant is ``xdot = A x + B u`` with ``u`` held constant on each interval of
a :class:`TimeGrid`.  Everything downstream (encoder, monitor) reads the
closed-form solution through :func:`step_matrices` or through the modal
expansion returned by :func:`mode_decompose`::

    h(x(s)) = sigma + sum_{lam, j} (cx . x0 + cu . u0) * exp(lam s) * s**j
"""
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.linalg import expm

from .errors import (ComplexModesUnsupported, DecompositionUnstable,
                     InvalidSystem, OutOfWindow)

JORDAN_TOL = 1e-8
CLUSTER_TOLS = (1e-6, 1e-5, 1e-4, 1e-3)
NODE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1]:
            raise InvalidSystem(f"A must be square, got {A.shape}")
        n = A.shape[0]
        if B.shape[0] != n:
            raise InvalidSystem(f"B has {B.shape[0]} rows, expected {n}")
        C = np.eye(n) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise InvalidSystem(f"C rows must have length {n}, got {C.shape[1]}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(M)):
                raise InvalidSystem(f"{name} has non-finite entries")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "_steps", {})

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing update instants ``0 = t_0 < ... < t_N = t_f``."""

    nodes: tuple
    virtual: tuple = None

    def __post_init__(self):
        nodes = tuple(float(t) for t in self.nodes)
        if len(nodes) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise ValueError("time grid nodes must be strictly increasing")
        virtual = (False,) * len(nodes) if self.virtual is None else tuple(bool(v) for v in self.virtual)
        if len(virtual) != len(nodes):
            raise ValueError("virtual flags must match nodes")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "virtual", virtual)

    @classmethod
    def uniform(cls, t_f, N):
        if N < 1 or t_f <= 0:
            raise ValueError("need N >= 1 and t_f > 0")
        # i * t_f / N keeps nodes like 0.6 exact where i * dt would drift
        return cls(tuple(i * t_f / N for i in range(N + 1)))

    @property
    def t_f(self):
        return self.nodes[-1]

    @property
    def N(self):
        return len(self.nodes) - 1

    @property
    def taus(self):
        return tuple(b - a for a, b in zip(self.nodes, self.nodes[1:]))

    def index_of(self, t, tol=NODE_TOL):
        """Index of the node at time ``t`` or None when ``t`` is off-grid."""
        arr = np.asarray(self.nodes)
        i = int(np.argmin(np.abs(arr - t)))
        return i if abs(arr[i] - t) <= tol * max(1.0, abs(t)) else None

    def indices_between(self, lo, hi, tol=NODE_TOL):
        return [i for i, t in enumerate(self.nodes) if lo - tol <= t <= hi + tol]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidSystem("non-finite entries")


def step_matrices(sys, dt):
    """Return ``(Ad, Bd)`` for a hold of length ``dt``.

    One exponential of the block matrix ``[[A, B], [0, 0]] * dt`` yields
    ``[[Ad, Bd], [0, I]]``, which covers singular ``A`` without a separate path.
    """
    dt = float(dt)
    cache = sys._steps
    hit = cache.get(dt)
    if hit is not None:
        return hit
    if not np.isfinite(dt):
        raise InvalidSystem("dt must be finite")
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    n, m = sys.n, sys.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = sys.A * dt
    M[:n, n:] = sys.B * dt
    E = expm(M)
    Ad, Bd = E[:n, :n].copy(), E[:n, n:].copy()
    _check_finite(Ad, Bd)
    Ad.setflags(write=False)
    Bd.setflags(write=False)
    if len(cache) < 8192:
        cache[dt] = (Ad, Bd)
    return Ad, Bd


@dataclass(frozen=True, eq=False)
class Interpolant:
    """Closed-form state on one hold window ``[t_start, t_end]``."""

    sys: LinearSystem
    x_start: np.ndarray
    u: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "x_start", np.asarray(self.x_start, dtype=float).reshape(-1))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(-1))

    @property
    def tau(self):
        return self.t_end - self.t_start

    def __call__(self, t):
        return interpolate(self, t)

    def matrices(self, s):
        return step_matrices(self.sys, s)


def interpolate(interp, t):
    """State at absolute time ``t`` inside the interpolant's window."""
    tol = NODE_TOL * max(1.0, abs(interp.t_end))
    if t < interp.t_start - tol or t > interp.t_end + tol:
        raise OutOfWindow(f"t={t} outside [{interp.t_start}, {interp.t_end}]")
    s = min(max(t - interp.t_start, 0.0), interp.tau)
    if s == 0.0:
        return interp.x_start.copy()
    Ad, Bd = step_matrices(interp.sys, s)
    return Ad @ interp.x_start + Bd @ interp.u


@dataclass(frozen=True, eq=False)
class ModeTerm:
    """One basis function ``exp(lam s) s**j`` with its x- and u-coefficient rows."""

    lam: float
    j: int
    cx: np.ndarray
    cu: np.ndarray


@dataclass(frozen=True, eq=False)
class ModeDecomposition:
    blocks: tuple
    terms: tuple
    sigma: float
    n: int
    m: int
    meta: dict = field(default_factory=dict)

    def coefficients(self, x0, u0):
        x0 = np.asarray(x0, dtype=float)
        u0 = np.asarray(u0, dtype=float)
        return np.array([t.cx @ x0 + t.cu @ u0 for t in self.terms])

    def evaluate(self, x0, u0, s):
        s = np.asarray(s, dtype=float)
        total = np.full(s.shape, self.sigma, dtype=float)
        for coef, term in zip(self.coefficients(x0, u0), self.terms):
            total = total + coef * np.exp(term.lam * s) * s ** term.j
        return total


def _cluster(eigs, tol):
    order = np.argsort(eigs.real, kind="stable")
    groups = []
    for idx in order:
        if groups and abs(eigs[idx] - eigs[groups[-1][-1]]) <= tol:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    return [eigs[g] for g in groups]


def _rank(M, tol):
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > tol))


def _jordan_sizes(K, tol):
    """Jordan block sizes of the nilpotent ``K`` from ranks of its powers."""
    m = K.shape[0]
    ranks = [m]
    P = np.eye(m)
    while ranks[-1] > 0 and len(ranks) <= m:
        P = P @ K
        ranks.append(_rank(P, tol))
    if ranks[-1] != 0:
        raise DecompositionUnstable("restricted operator is not nilpotent within tolerance")
    at_least = [ranks[k - 1] - ranks[k] for k in range(1, len(ranks))]
    at_least.append(0)
    sizes = []
    for k in range(1, len(at_least)):
        sizes += [k] * (at_least[k - 1] - at_least[k])
    return sorted(sizes, reverse=True)


def _integral_coeffs(mu, j):
    """Write ``int_0^s exp(mu r) r**j dr`` on the ``exp(lam s) s**l`` basis.

    Returns a list of ``((lam, l), weight)`` pairs.
    """
    if mu == 0.0:
        return [((0.0, j + 1), 1.0 / (j + 1))]
    out = []
    for l in range(j + 1):
        w = (-1) ** (j - l) * factorial(j) / (factorial(l) * mu ** (j - l + 1))
        out.append(((mu, l), w))
    out.append(((0.0, 0), -((-1) ** j) * factorial(j) / mu ** (j + 1)))
    return out


def mode_decompose(sys, row, offset=0.0, feedthrough=None, tol=JORDAN_TOL):
    """Expand ``row . x(s) + feedthrough . u + offset`` on the modal basis.

    Eigenvalues closer than the clustering tolerance share one generalized
    eigenspace; Jordan sizes come from rank tests on the restricted
    nilpotent part.  Complex spectra are rejected.
    """
    n, m = sys.n, sys.m
    row = np.asarray(row, dtype=float).reshape(-1)
    if row.shape[0] != n:
        raise InvalidSystem(f"predicate row has length {row.shape[0]}, expected {n}")
    d = np.zeros(m) if feedthrough is None else np.asarray(feedthrough, dtype=float).reshape(-1)
    scale = max(1.0, float(np.linalg.norm(sys.A, 2)))
    eigs = np.linalg.eigvals(sys.A)
    # a defective eigenvalue of multiplicity s is computed with error ~eps**(1/s),
    # so the clustering radius widens until the expansion verifies
    first = None
    for ctol in CLUSTER_TOLS:
        try:
            return _decompose(sys, row, float(offset), d, tol, eigs, ctol * scale, scale)
        except (DecompositionUnstable, ComplexModesUnsupported) as exc:
            first = first or exc
    raise first


def _decompose(sys, row, offset, d, tol, eigs, ctol, scale):
    A, B = sys.A, sys.B
    n, m = sys.n, sys.m
    clusters = _cluster(eigs, ctol)

    bases, mus, sizes = [], [], []
    for group in clusters:
        mu = complex(np.mean(group))
        if abs(mu.imag) > ctol or np.max(np.abs(np.imag(group))) > ctol:
            raise ComplexModesUnsupported(
                f"eigenvalue {mu:.6g} is complex; only real spectra are supported")
        mu = mu.real
        if abs(mu) <= 1e-12 * scale:
            mu = 0.0
        k = len(group)
        S = np.linalg.matrix_power(A - mu * np.eye(n), k)
        _, sv, Vt = np.linalg.svd(S)
        N = Vt[n - k:].T
        Snorm = max(1.0, sv[0])
        if sv[n - k] > np.sqrt(tol) * Snorm or (k < n and sv[n - k - 1] <= tol * Snorm):
            raise DecompositionUnstable(f"generalized eigenspace of {mu:.6g} is ill-determined")
        bases.append(N)
        mus.append(mu)
    T = np.hstack(bases)
    if np.linalg.cond(T) > 1.0 / tol:
        raise DecompositionUnstable("generalized eigenvectors are nearly dependent")
    Tinv = np.linalg.inv(T)

    x_terms, u_terms = {}, {}

    def add(store, key, vec):
        store[key] = store.get(key, 0.0) + vec

    col = 0
    for N, mu in zip(bases, mus):
        k = N.shape[1]
        Ti = Tinv[col:col + k]
        col += k
        K = Ti @ (A - mu * np.eye(n)) @ N
        blocks = _jordan_sizes(K, tol * scale)
        sizes += [(mu, s) for s in blocks]
        index = blocks[0]
        Kj = np.eye(k)
        for j in range(index):
            left = row @ N @ Kj / factorial(j)
            add(x_terms, (mu, j), left @ Ti)
            g = left @ Ti @ B
            for key, w in _integral_coeffs(mu, j):
                add(u_terms, key, w * g)
            Kj = Kj @ K
    add(u_terms, (0.0, 0), d)

    keys = sorted(set(x_terms) | set(u_terms))
    # drop round-off residue so the encoder does not emit empty terms
    big = max([1.0] + [float(np.max(np.abs(v))) for v in (*x_terms.values(), *u_terms.values())])
    for store in (x_terms, u_terms):
        for key, vec in store.items():
            vec = np.array(vec, dtype=float)
            vec[np.abs(vec) <= 1e-13 * big] = 0.0
            store[key] = vec
    terms = tuple(
        ModeTerm(lam, j,
                 np.asarray(x_terms.get((lam, j), np.zeros(n)), dtype=float).reshape(n),
                 np.asarray(u_terms.get((lam, j), np.zeros(m)), dtype=float).reshape(m))
        for lam, j in keys)
    dec = ModeDecomposition(tuple(sorted(sizes)), terms, offset, n, m,
                            {"row": row, "feedthrough": d})
    _verify(dec, sys, row, d, offset)
    return dec


def _verify(dec, sys, row, d, offset):
    """Spot-check the expansion against the exact propagator."""
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(sys.n)
    u0 = rng.standard_normal(sys.m)
    for s in (0.0, 0.3, 1.0):
        Ad, Bd = step_matrices(sys, s)
        exact = row @ (Ad @ x0 + Bd @ u0) + d @ u0 + offset
        approx = float(dec.evaluate(x0, u0, s))
        mag = abs(row) @ (np.abs(Ad) @ np.abs(x0) + np.abs(Bd) @ np.abs(u0)) + abs(d) @ np.abs(u0) + abs(offset)
        if abs(exact - approx) > 1e-7 * max(1.0, mag):
            raise DecompositionUnstable(
                f"modal expansion error {abs(exact - approx):.3g} at s={s}")
