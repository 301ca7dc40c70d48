"""Exact extremes of a single modal term over a hold window."""
import math
from dataclasses import dataclass


def _phi(lam, j, t):
    if j == 0:
        return math.exp(lam * t)
    return math.exp(lam * t) * t ** j


@dataclass(frozen=True)
class TermExtremes:
    """Min and max of ``exp(lam s) s**j`` on ``[0, tau]`` and where they occur.

    The basis function is non-negative on the window, so the minimum of
    ``coef * phi`` is ``coef * phi_min`` for ``coef >= 0`` and
    ``coef * phi_max`` otherwise.
    """

    lam: float
    j: int
    tau: float
    phi_min: float
    phi_max: float
    t_min: float
    t_max: float

    @property
    def constant(self):
        return self.phi_min == self.phi_max

    def min_of(self, coef):
        if coef >= 0:
            return coef * self.phi_min, self.t_min
        return coef * self.phi_max, self.t_max


def term_extremes(lam, j, tau):
    if tau <= 0:
        raise ValueError(f"window length must be positive, got {tau}")
    if lam == 0.0 and j == 0:
        return TermExtremes(lam, j, tau, 1.0, 1.0, 0.0, 0.0)
    cands = [0.0, tau]
    if j > 0 and lam < 0:
        crit = -j / lam
        if 0.0 < crit < tau:
            cands.append(crit)
    vals = [_phi(lam, j, t) for t in cands]
    lo = min(range(len(cands)), key=lambda i: (vals[i], cands[i]))
    hi = max(range(len(cands)), key=lambda i: (vals[i], -cands[i]))
    return TermExtremes(lam, j, tau, vals[lo], vals[hi], cands[lo], cands[hi])


def term_window_min(coef, lam, j, tau):
    """Minimum of ``coef * exp(lam t) * t**j`` over ``t in [0, tau]`` and its argmin."""
    if coef == 0:
        return 0.0, 0.0
    return term_extremes(lam, j, tau).min_of(coef)
