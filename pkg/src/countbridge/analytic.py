"""Closed forms for constant-characteristic bridges.

For a bridge whose characteristic is identically lam, each jump time is an
independent draw from the exponentially tilted density on the window
(density proportional to exp(lam * t)), so the one-time marginal of the
bridge is binomial with success probability given by the tilted CDF.  These
formulas are the benchmarks that every numerical route in the package is
measured against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .errors import BadWindow, IndexOut

# Below this, (exp(lam*t)-1)/(exp(lam)-1) is replaced by its expansion around
# lam = 0 to dodge 0/0 noise: t + lam*t*(t-1)/2 + O(lam^2).
_SMALL_LAM = 1e-6


def tilted_cdf(lam, t):
    """CDF at t of the density on [0, 1] proportional to exp(lam * s).

    (exp(lam*t) - 1) / (exp(lam) - 1), extended continuously through lam = 0
    where it is the identity.  Increasing in t, decreasing in lam, fixed at
    0 and 1 at the window ends.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise BadWindow("t outside [0, 1]")
    lam = float(lam)
    if lam == 0.0:
        out = t.copy()
    elif abs(lam) < _SMALL_LAM:
        out = t + lam * t * (t - 1.0) / 2.0
    else:
        out = np.expm1(lam * t) / math.expm1(lam)
    return float(out) if out.ndim == 0 else out


def tilted_ppf(lam, p):
    """Inverse of :func:`tilted_cdf` in t."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise BadWindow("probability outside [0, 1]")
    lam = float(lam)
    if abs(lam) < _SMALL_LAM:
        out = p.copy() if lam == 0.0 else p - lam * p * (p - 1.0) / 2.0
    else:
        out = np.log1p(p * math.expm1(lam)) / lam
    return float(out) if out.ndim == 0 else out


def tilted_cdf_window(lam, s, u, t):
    """Tilted CDF on a general window [s, u].

    (exp(lam*(t-s)) - 1) / (exp(lam*(u-s)) - 1); identical to rescaling the
    window to [0, 1] and the tilt to lam*(u-s).
    """
    s, u = float(s), float(u)
    if not (0.0 <= s < u <= 1.0 + 1e-12):
        raise BadWindow(f"bad window [{s}, {u}]")
    t = np.asarray(t, dtype=float)
    if np.any(t < s - 1e-12) or np.any(t > u + 1e-12):
        raise BadWindow("t outside the window")
    return tilted_cdf(lam * (u - s), np.clip((t - s) / (u - s), 0.0, 1.0))


@dataclass(frozen=True)
class BinomialSpec:
    """Binomial law with n trials and success probability p."""

    n: int
    p: float

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def pmf(self):
        """Probabilities of 0..n successes (log-gamma based, stable to large n)."""
        return binom.pmf(np.arange(self.n + 1), self.n, self.p)

    def tail(self, i):
        """P(at least i successes)."""
        return binomial_tail(self, i)

    def mean(self):
        return self.n * self.p


def binomial_tail(spec, i):
    """Upper tail P(X >= i) of a binomial law.

    Evaluated through the regularized incomplete beta function (the smaller
    tail is what gets summed internally), so it stays accurate when the naive
    forward sum would lose all precision.
    """
    i = int(i)
    if i < 0 or i > spec.n:
        raise IndexOut(f"tail index {i} outside 0..{spec.n}")
    if i == 0:
        return 1.0
    return float(binom.sf(i - 1, spec.n, spec.p))


def constant_characteristic_marginal(spec, lam, t):
    """One-time marginal of the x->y bridge of any model with characteristic lam.

    On the unit window the law of X_t - x is binomial with y - x trials and
    success probability tilted_cdf(lam, t).  General windows go through
    :func:`tilted_cdf_window` composition.
    """
    if (spec.s, spec.u) != (0.0, 1.0):
        raise BadWindow("closed-form marginal is stated on the unit window; "
                        "compose with tilted_cdf_window for general windows")
    return BinomialSpec(n=spec.y - spec.x, p=float(tilted_cdf(lam, t)))


def mean_upper_bound(spec, lam, t):
    """Upper bound for the bridge mean at time t when lam bounds the characteristic below.

    x + (y - x) * tilted CDF of the window; exact (not just a bound) when the
    characteristic is identically lam.
    """
    t = np.asarray(t, dtype=float)
    if spec.s == 0.0 and spec.u == 1.0:
        p = tilted_cdf(lam, t)
    else:
        p = tilted_cdf_window(lam, spec.s, spec.u, t)
    out = spec.x + (spec.y - spec.x) * np.asarray(p)
    return float(out) if out.ndim == 0 else out
