"""Executable checks of the bridge estimates.

Each check turns one proved statement into a numerical verdict:

* ``convexity_check``     - sign of the characteristic forces the mean curve
                            to be convex (nonnegative) or concave (nonpositive);
* ``dominance_check``     - a bound lam on the characteristic bounds every
                            marginal tail by the matching binomial tail;
* ``mean_bound_check``    - the tail bound summed over the ladder: the mean
                            curve stays below the tilted-profile line;
* ``duality_check``       - the integration-by-parts identity tying the jump
                            time derivative of a test functional to a
                            stochastic integral of the characteristic;
* ``lln_experiment``      - bridges 0 -> N, rescaled by N, concentrate on the
                            tilted profile as N grows.

Checks never weaken themselves to pass: a falsified hypothesis (for example a
lam that is not actually a characteristic bound) produces a failing report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import BinomialSpec, binomial_tail, mean_upper_bound, tilted_cdf, tilted_cdf_window
from .engine import BridgeSpec, marginal_table, mean_curve, second_differences, solve_h
from .errors import DegenerateVariance, ResourceCap
from .intensity import characteristic_bounds
from .sampler import jump_time_matrix, sample_bridge, sample_constant


def _certification(bounds):
    return "exact-parametric" if bounds.certified else "grid-certified only"


@dataclass
class ConvexityReport:
    spec: BridgeSpec
    char_inf: float
    char_sup: float
    certification: str
    claim: str                  # "convex" | "concave" | "linear" | "no claim"
    passed: bool
    worst_violation: float
    tol: float
    profile: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "check": "convexity",
            "inputs": {"x": self.spec.x, "y": self.spec.y, "s": self.spec.s, "u": self.spec.u,
                       "char_inf": self.char_inf, "char_sup": self.char_sup,
                       "certification": self.certification},
            "tolerances": {"second_difference": self.tol},
            "claim": self.claim,
            "worst_violation": self.worst_violation,
            "verdict": "pass" if self.passed else "fail",
        }


def convexity_check(model, spec, h_step=1e-3, tol=1e-8, inspect_points=51, table=None,
                    step_budget=0.005):
    """Verdict on the curvature of the bridge mean curve.

    Nonnegative characteristic over the window and ladder implies convexity,
    nonpositive implies concavity; a sign-indefinite characteristic yields
    "no claim" (a valid outcome, not an error).  Second differences divide by
    step^2, which amplifies any integrator noise by ~1e4, so the check runs
    the marginals at a tighter mesh budget than the module default and takes
    the differences on a decimated uniform grid.
    """
    if spec.n == 0:
        return ConvexityReport(spec, 0.0, 0.0, "exact-parametric", "linear", True, 0.0, tol,
                               np.zeros((0, 2)))
    bounds = characteristic_bounds(model, (spec.s, spec.u), (spec.x, spec.y - 1))
    if table is None:
        table = marginal_table(model, spec, h_step, step_budget=step_budget)
    curve = mean_curve(table)
    npts = curve.shape[0]
    stride = max(1, int(round((npts - 1) / (inspect_points - 1))))
    if (npts - 1) % stride:
        stride = 1
    d2 = second_differences(curve[::stride])

    nonneg = bounds.inf >= -1e-12
    nonpos = bounds.sup <= 1e-12
    if nonneg and nonpos:
        claim, worst = "linear", float(np.max(np.abs(d2[:, 1])))
        passed = worst <= tol
    elif nonneg:
        claim, worst = "convex", float(max(0.0, -np.min(d2[:, 1])))
        passed = worst <= tol
    elif nonpos:
        claim, worst = "concave", float(max(0.0, np.max(d2[:, 1])))
        passed = worst <= tol
    else:
        claim, worst, passed = "no claim", 0.0, True
    return ConvexityReport(spec, bounds.inf, bounds.sup, _certification(bounds),
                           claim, passed, worst, tol, d2)


@dataclass
class BoundReport:
    """Per-(t, i) comparison of bridge tails against the binomial benchmark."""

    spec: BridgeSpec
    lam_used: float
    direction: str              # "lower" or "upper" characteristic bound
    rows: list                  # (t, i, computed_tail, benchmark_tail, margin)
    worst_margin: float
    passed: bool
    tol: float
    certification: str
    hypothesis_holds: bool

    def to_dict(self):
        return {
            "check": "dominance",
            "inputs": {"x": self.spec.x, "y": self.spec.y, "s": self.spec.s, "u": self.spec.u,
                       "lambda": self.lam_used, "direction": self.direction,
                       "certification": self.certification,
                       "hypothesis_holds": self.hypothesis_holds},
            "tolerances": {"margin": self.tol},
            "worst_margin": self.worst_margin,
            "grid_points": len(self.rows),
            "verdict": "pass" if self.passed else "fail",
        }


def dominance_check(model, spec, lam, direction="lower", t_grid=None, tol=1e-6,
                    h_step=1e-3, table=None):
    """Compare every marginal tail of the bridge with its binomial benchmark.

    With ``direction="lower"`` (lam a lower bound of the characteristic on the
    window x ladder) each tail P(X_t >= x+i) must stay below the benchmark
    tail; "upper" flips the inequality.  The margin is signed so that
    negative means violated; the verdict fails when the worst margin drops
    below -tol.  Running with a lam that is not a true bound is allowed and
    simply fails, which is what makes the check falsifiable.
    """
    if direction not in ("lower", "upper"):
        raise ValueError("direction must be 'lower' or 'upper'")
    n = spec.n
    bounds = characteristic_bounds(model, (spec.s, spec.u), (spec.x, max(spec.x, spec.y - 1)))
    if direction == "lower":
        hypothesis_holds = bounds.inf >= lam - 1e-12
    else:
        hypothesis_holds = bounds.sup <= lam + 1e-12
    if table is None:
        table = marginal_table(model, spec, h_step)
    if t_grid is None:
        t_grid = np.linspace(spec.s, spec.u, 21)[1:-1]
    tails = table.tail_matrix()

    rows = []
    worst = math.inf
    for t in np.asarray(t_grid, dtype=float):
        idx = table.index_of(t, tol=1e-9)
        p = float(tilted_cdf_window(lam, spec.s, spec.u, table.times[idx]))
        bench = BinomialSpec(n, p)
        for i in range(1, n + 1):
            computed = float(tails[idx, i])
            benchmark = binomial_tail(bench, i)
            margin = benchmark - computed if direction == "lower" else computed - benchmark
            worst = min(worst, margin)
            rows.append((float(table.times[idx]), i, computed, benchmark, margin))
    worst = 0.0 if not rows else worst
    return BoundReport(spec, float(lam), direction, rows, worst, worst >= -tol, tol,
                       _certification(bounds), hypothesis_holds)


@dataclass
class MeanBoundReport:
    spec: BridgeSpec
    lam_used: float
    worst_margin: float         # min over the grid of bound - mean
    passed: bool
    tol: float
    rows: list = field(repr=False)

    def to_dict(self):
        return {
            "check": "mean_bound",
            "inputs": {"x": self.spec.x, "y": self.spec.y, "s": self.spec.s, "u": self.spec.u,
                       "lambda": self.lam_used},
            "tolerances": {"margin": self.tol},
            "worst_margin": self.worst_margin,
            "verdict": "pass" if self.passed else "fail",
        }


def mean_bound_check(model, spec, lam, t_grid=None, tol=1e-6, h_step=1e-3, table=None):
    """Check the mean curve against the tilted-profile upper bound."""
    if table is None:
        table = marginal_table(model, spec, h_step)
    curve = mean_curve(table)
    if t_grid is None:
        idx = np.arange(curve.shape[0])
    else:
        idx = np.asarray([table.index_of(t) for t in t_grid])
    ts = curve[idx, 0]
    bound = np.asarray(mean_upper_bound(spec, lam, ts), dtype=float)
    margins = bound - curve[idx, 1]
    worst = float(np.min(margins)) if margins.size else 0.0
    rows = list(zip(ts.tolist(), curve[idx, 1].tolist(), bound.tolist()))
    return MeanBoundReport(spec, float(lam), worst, worst >= -tol, tol, rows)


class WindowFunction:
    """A C^1 direction u with u vanishing at both ends of the unit interval."""

    def __init__(self, u, du, name="u"):
        if abs(u(0.0)) > 1e-12 or abs(u(1.0)) > 1e-12:
            raise ValueError("u must vanish at 0 and 1")
        self.u = u
        self.du = du
        self.name = name


class TestFunctional:
    """phi(x0; T_1..T_m) with explicit partial derivatives in the jump times."""

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, m, value, partials, name="phi"):
        self.m = int(m)
        self.value = value        # (x0, times (count, m)) -> (count,)
        self.partials = partials  # (x0, times (count, m)) -> (count, m)
        self.name = name


@dataclass
class DualityResult:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z_score: float
    count: int
    phi_name: str = "phi"
    u_name: str = "u"

    def to_dict(self):
        return {
            "check": "duality",
            "inputs": {"phi": self.phi_name, "u": self.u_name, "paths": self.count},
            "lhs": {"estimate": self.lhs, "stderr": self.lhs_se},
            "rhs": {"estimate": self.rhs, "stderr": self.rhs_se},
            "z_score": self.z_score,
        }


def duality_check(model, spec, u_func, phi, count, rng_seed, h_step=1e-3, h=None, paths=None):
    """Monte Carlo test of the jump-time integration-by-parts identity.

    Estimates E[-sum_j dphi/dt_j * u(T_j)] and
    E[phi * sum_i (du(T_i) + char(T_i, X_{T_i-}) u(T_i))] on the same bridge
    paths and reports both with standard errors plus the z-score of their
    paired difference (the estimators are correlated by construction, so the
    difference is what carries the test).
    """
    n = spec.n
    if phi.m > n:
        raise ValueError(f"phi looks at {phi.m} jump times but the bridge has {n}")
    if paths is None:
        if h is None:
            h = solve_h(model, spec, h_step)
        paths = sample_bridge(model, spec, h, count, rng_seed)
    count = len(paths)
    if n == 0:
        return DualityResult(0.0, 0.0, 0.0, 0.0, 0.0, count, phi.name, u_func.name)
    times = jump_time_matrix(paths)

    tm = times[:, : phi.m]
    vals = np.asarray(phi.value(spec.x, tm), dtype=float)
    parts = np.asarray(phi.partials(spec.x, tm), dtype=float)
    lhs_samples = -np.sum(parts * u_func.u(tm), axis=1)

    stoch = np.zeros(count)
    for i in range(n):
        col = times[:, i]
        xi_col = np.asarray(model.characteristic(col, spec.x + i), dtype=float)
        stoch += u_func.du(col) + xi_col * u_func.u(col)
    rhs_samples = vals * stoch

    lhs, rhs = float(lhs_samples.mean()), float(rhs_samples.mean())
    lhs_se = float(lhs_samples.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    rhs_se = float(rhs_samples.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    diff = lhs_samples - rhs_samples
    sd = float(diff.std(ddof=1)) if count > 1 else 0.0
    mean_diff = float(diff.mean())
    if sd == 0.0:
        if count > 1 and mean_diff != 0.0:
            raise DegenerateVariance("both estimators are constant but differ")
        z = 0.0
    else:
        z = mean_diff / (sd / math.sqrt(count))
    return DualityResult(lhs, lhs_se, rhs, rhs_se, z, count, phi.name, u_func.name)


def duality_catalog():
    """Five (phi, u) pairs with hand-checked partial derivatives."""
    pairs = []
    pairs.append((
        TestFunctional(
            1,
            lambda x0, T: np.sin(math.pi * T[:, 0]),
            lambda x0, T: math.pi * np.cos(math.pi * T[:, 0])[:, None],
            name="sin(pi T1)"),
        WindowFunction(lambda t: t * (1.0 - t), lambda t: 1.0 - 2.0 * t, name="t(1-t)")))
    pairs.append((
        TestFunctional(
            2,
            lambda x0, T: T[:, 0] * T[:, 1],
            lambda x0, T: np.stack([T[:, 1], T[:, 0]], axis=1),
            name="T1 T2"),
        WindowFunction(lambda t: np.sin(math.pi * t), lambda t: math.pi * np.cos(math.pi * t),
                       name="sin(pi t)")))
    pairs.append((
        TestFunctional(
            3,
            lambda x0, T: np.exp(-T.sum(axis=1)),
            lambda x0, T: -np.exp(-T.sum(axis=1))[:, None] * np.ones((T.shape[0], 3)),
            name="exp(-T1-T2-T3)"),
        WindowFunction(lambda t: t * (1.0 - t) ** 2,
                       lambda t: (1.0 - t) ** 2 - 2.0 * t * (1.0 - t), name="t(1-t)^2")))
    pairs.append((
        TestFunctional(
            2,
            lambda x0, T: np.cos(math.pi * T[:, 1]),
            lambda x0, T: np.stack([np.zeros(T.shape[0]),
                                    -math.pi * np.sin(math.pi * T[:, 1])], axis=1),
            name="cos(pi T2)"),
        WindowFunction(lambda t: np.sin(2.0 * math.pi * t),
                       lambda t: 2.0 * math.pi * np.cos(2.0 * math.pi * t), name="sin(2 pi t)")))
    pairs.append((
        TestFunctional(
            3,
            lambda x0, T: (T[:, 0] + T[:, 2]) ** 2,
            lambda x0, T: np.stack([2.0 * (T[:, 0] + T[:, 2]),
                                    np.zeros(T.shape[0]),
                                    2.0 * (T[:, 0] + T[:, 2])], axis=1),
            name="(T1+T3)^2"),
        WindowFunction(lambda t: t ** 2 * (1.0 - t), lambda t: 2.0 * t - 3.0 * t ** 2,
                       name="t^2(1-t)")))
    return pairs


@dataclass
class LLNReport:
    lam: float
    n_values: list
    replicas: int
    medians: list
    q90s: list
    medians_non_increasing: bool
    strategy: str
    rng_seed: int
    sup_samples: list = field(default_factory=list, repr=False)  # one array per N

    def to_dict(self):
        return {
            "check": "lln",
            "inputs": {"lambda": self.lam, "N": list(self.n_values),
                       "replicas": self.replicas, "seed": self.rng_seed,
                       "strategy": self.strategy},
            "sup_distance_median": dict(zip(map(str, self.n_values), self.medians)),
            "sup_distance_q90": dict(zip(map(str, self.n_values), self.q90s)),
            "medians_non_increasing": self.medians_non_increasing,
            "verdict": "pass" if self.medians_non_increasing else "fail",
        }


def _sup_distance(times, lam):
    """sup_t |X_t/N - profile(t)| for each row of sorted jump times.

    The path is a step function and the profile is increasing, so the sup is
    attained at a jump time from one side or the other.
    """
    count, n = times.shape
    p = tilted_cdf(lam, times)
    jj = np.arange(1, n + 1) / n
    above = np.abs(jj[None, :] - p)
    below = np.abs(jj[None, :] - 1.0 / n - p)
    return np.maximum(above, below).max(axis=1)


def lln_experiment(model, lam, n_values, replicas, rng_seed, budget=5_000_000, h_step=1e-3):
    """Sample 0 -> N bridges and measure the sup distance to the tilted profile.

    For models with an exactly constant characteristic the jump times are
    sampled by the exact tilted order-statistics sampler; other models go
    through the h-transform thinning sampler (much slower for large N).
    Reports median and 90th percentile of the sup distance per N.
    """
    n_values = [int(v) for v in n_values]
    if any(v <= 0 for v in n_values):
        raise ValueError("N values must be positive")
    work = sum(n_values) * int(replicas)
    if work > budget:
        raise ResourceCap(f"requested {work} jump draws exceeds budget {budget}")
    bounds = characteristic_bounds(model, (0.0, 1.0), (0, max(n_values) - 1))
    constant = bounds.certified and abs(bounds.sup - bounds.inf) < 1e-12
    strategy = "exact-order-statistics" if constant else "h-transform-thinning"

    medians, q90s, samples = [], [], []
    for k, big_n in enumerate(n_values):
        seed_k = (int(rng_seed) + 0x9E3779B97F4A7C15 * (k + 1)) & ((1 << 63) - 1)
        spec = BridgeSpec(0, big_n)
        if constant:
            paths = sample_constant(bounds.inf, spec, replicas, seed_k)
        else:
            h = solve_h(model, spec, h_step)
            paths = sample_bridge(model, spec, h, replicas, seed_k)
        sup = _sup_distance(jump_time_matrix(paths), lam)
        samples.append(sup)
        medians.append(float(np.quantile(sup, 0.5)))
        q90s.append(float(np.quantile(sup, 0.9)))
    order = np.argsort(n_values)
    med_sorted = np.asarray(medians)[order]
    monotone = bool(np.all(np.diff(med_sorted) <= 0.0))
    return LLNReport(float(lam), n_values, int(replicas), medians, q90s, monotone,
                     strategy, int(rng_seed), samples)
