"""Jump intensities of Markov counting processes on the unit time interval.

A model gives the rate ``rate(t, z)`` of the next +1 jump at time t in state z,
together with its exact time derivative ``rate_dt``.  From those two pieces the
characteristic

    char(t, z) = d/dt log rate(t, z) + rate(t, z+1) - rate(t, z)

is assembled; it is the quantity that determines the law of the pinned
(bridge) process, and every bound checked by :mod:`countbridge.verify` is a
bound on it.  Three parametric families have a constant characteristic and
serve as closed-form benchmarks throughout: constant rates, rates linear in
the state, and rates exponential in time.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import EmptyRange, OutOfDomain, TabulationGap

_T_SLACK = 1e-12


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < -_T_SLACK) or np.any(t > 1.0 + _T_SLACK):
        raise OutOfDomain(f"time outside [0, 1]: {t[np.argmax((t < 0) | (t > 1))] if t.ndim else float(t)}")
    return t


def _check_state(z, floor):
    z = np.asarray(z)
    if np.any(z < floor):
        raise OutOfDomain(f"state below floor {floor}")
    return z


class CharacteristicBounds(NamedTuple):
    """Infimum/supremum of the characteristic over a window x state range.

    ``certified`` is True when the bounds follow from the parametric form
    (constant or monotone in t, state-free); grid scans set it False.
    """

    inf: float
    sup: float
    certified: bool


class _RateModel:
    """Shared behaviour for all rate families."""

    family = "abstract"

    # -- evaluation ----------------------------------------------------
    def rate(self, t, z):
        raise NotImplementedError

    def rate_dt(self, t, z):
        raise NotImplementedError

    def characteristic(self, t, z):
        """Closed-form characteristic; the default assembles it generically."""
        return generic_characteristic(self, t, z)

    def rate_grid(self, times, states):
        """Rates on a time grid x state set, shape (len(times), len(states))."""
        t = np.asarray(times, dtype=float)
        z = np.asarray(states)
        return np.broadcast_to(self.rate(t[:, None], z[None, :]), (t.size, z.size)).copy()

    # -- structure -----------------------------------------------------
    def difference_bounds(self):
        """Bounds of z -> rate(t, z+1) - rate(t, z) over the supported range."""
        raise NotImplementedError

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        raise NotImplementedError

    def to_dict(self):
        return {"family": self.family, "params": self._params(), "state_floor": self.state_floor}

    def _params(self):
        raise NotImplementedError


def _validate_window(t_window):
    s, u = float(t_window[0]), float(t_window[1])
    if not (-_T_SLACK <= s < u <= 1.0 + _T_SLACK):
        raise OutOfDomain(f"bad time window [{s}, {u}]")
    return s, u


def _validate_zrange(z_range, floor):
    zlo, zhi = int(z_range[0]), int(z_range[1])
    if zlo > zhi:
        raise EmptyRange(f"empty state range [{zlo}, {zhi}]")
    if zlo < floor:
        raise OutOfDomain(f"state range starts below floor {floor}")
    return zlo, zhi


@dataclass(frozen=True)
class Poisson(_RateModel):
    """Constant rate alpha > 0.  Characteristic is identically zero."""

    alpha: float
    state_floor: int = 0
    family = "poisson"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def rate(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.broadcast_to(float(self.alpha), np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out.copy()

    def rate_dt(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.zeros(np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out

    def characteristic(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.zeros(np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out

    def difference_bounds(self):
        return (0.0, 0.0)

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        _validate_window(t_window)
        if z_range is not None:
            _validate_zrange(z_range, self.state_floor)
        return CharacteristicBounds(0.0, 0.0, True)

    def _params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class SpaceLinear(_RateModel):
    """Rate lam * z + alpha, constant in time.  Characteristic is lam."""

    lam: float
    alpha: float
    state_floor: int = 0
    family = "space_linear"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative (rates must stay positive on all states)")
        if not self.lam * self.state_floor + self.alpha > 0:
            raise ValueError("rate not positive at the state floor")

    def rate(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.lam * np.asarray(z, dtype=float) + self.alpha + 0.0 * t
        return float(out) if np.ndim(out) == 0 else out

    def rate_dt(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.zeros(np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out

    def characteristic(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.broadcast_to(float(self.lam), np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out.copy()

    def difference_bounds(self):
        return (self.lam, self.lam)

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        _validate_window(t_window)
        if z_range is not None:
            _validate_zrange(z_range, self.state_floor)
        return CharacteristicBounds(self.lam, self.lam, True)

    def _params(self):
        return {"lambda": self.lam, "alpha": self.alpha}


@dataclass(frozen=True)
class TimeExponential(_RateModel):
    """Rate alpha * exp(lam * t), constant in space.  Characteristic is lam."""

    alpha: float
    lam: float
    state_floor: int = 0
    family = "time_exponential"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def rate(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.alpha * np.exp(self.lam * t) + 0.0 * np.asarray(z, dtype=float)
        return float(out) if np.ndim(out) == 0 else out

    def rate_dt(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.alpha * self.lam * np.exp(self.lam * t) + 0.0 * np.asarray(z, dtype=float)
        return float(out) if np.ndim(out) == 0 else out

    def characteristic(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = np.broadcast_to(float(self.lam), np.broadcast_shapes(t.shape, z.shape))
        return float(out) if out.ndim == 0 else out.copy()

    def difference_bounds(self):
        return (0.0, 0.0)

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        _validate_window(t_window)
        if z_range is not None:
            _validate_zrange(z_range, self.state_floor)
        return CharacteristicBounds(self.lam, self.lam, True)

    def _params(self):
        return {"alpha": self.alpha, "lambda": self.lam}


@dataclass(frozen=True)
class Product(_RateModel):
    """Rate alpha * exp(lam * t) * (1 + beta * z).

    Characteristic lam + alpha * beta * exp(lam * t): state-free, monotone in
    t, so its bounds over any window are exact.
    """

    alpha: float
    lam: float
    beta: float
    state_floor: int = 0
    family = "product"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative (rates must stay positive on all states)")

    def rate(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.alpha * np.exp(self.lam * t) * (1.0 + self.beta * np.asarray(z, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def rate_dt(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.alpha * self.lam * np.exp(self.lam * t) * (1.0 + self.beta * np.asarray(z, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def characteristic(self, t, z):
        t = _check_time(t)
        z = _check_state(z, self.state_floor)
        out = self.lam + self.alpha * self.beta * np.exp(self.lam * t) + 0.0 * np.asarray(z, dtype=float)
        return float(out) if np.ndim(out) == 0 else out

    def difference_bounds(self):
        lo = self.alpha * self.beta * min(1.0, math.exp(self.lam))
        hi = self.alpha * self.beta * max(1.0, math.exp(self.lam))
        return (lo, hi)

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        s, u = _validate_window(t_window)
        if z_range is not None:
            _validate_zrange(z_range, self.state_floor)
        # monotone in t, state-free: exact at the window endpoints
        a = self.lam + self.alpha * self.beta * math.exp(self.lam * s)
        b = self.lam + self.alpha * self.beta * math.exp(self.lam * u)
        return CharacteristicBounds(min(a, b), max(a, b), True)

    def _params(self):
        return {"alpha": self.alpha, "lambda": self.lam, "beta": self.beta}


class Tabulated(_RateModel):
    """Rates given on a time grid x contiguous state range.

    Values between time nodes come from a cubic Hermite interpolant, so
    ``rate_dt`` is the exact derivative of ``rate``.  Nodal time derivatives
    may be supplied; otherwise they are filled by centred differences on the
    grid and the model is flagged ``derivative_mode == "numeric"`` (a warning
    sign for characteristic-based checks, which need d/dt log rate).
    """

    family = "tabulated"

    def __init__(self, t_grid, z_min, rates, rates_dt=None, state_floor=None):
        t_grid = np.asarray(t_grid, dtype=float)
        rates = np.asarray(rates, dtype=float)
        if t_grid.ndim != 1 or t_grid.size < 2:
            raise ValueError("t_grid must hold at least two nodes")
        if np.any(np.diff(t_grid) <= 0):
            raise ValueError("t_grid must be strictly increasing")
        if t_grid[0] < -_T_SLACK or t_grid[-1] > 1.0 + _T_SLACK:
            raise ValueError("t_grid must lie inside [0, 1]")
        if rates.shape != (t_grid.size,) and rates.ndim != 2:
            raise ValueError("rates must be a (time x state) matrix")
        if rates.ndim != 2 or rates.shape[0] != t_grid.size:
            raise ValueError("rates must have one row per time node")
        if np.any(rates <= 0):
            raise ValueError("all tabulated rates must be positive")
        if rates_dt is None:
            rates_dt = np.gradient(rates, t_grid, axis=0)
            self.derivative_mode = "numeric"
        else:
            rates_dt = np.asarray(rates_dt, dtype=float)
            if rates_dt.shape != rates.shape:
                raise ValueError("rates_dt must match the shape of rates")
            self.derivative_mode = "supplied"
        self.t_grid = t_grid
        self.z_min = int(z_min)
        self.rates = rates
        self.rates_dt = rates_dt
        self.state_floor = self.z_min if state_floor is None else int(state_floor)
        if self.state_floor < self.z_min:
            raise ValueError("state_floor below tabulated range")
        self._spline = CubicHermiteSpline(t_grid, rates, rates_dt, axis=0)
        self._spline_dt = self._spline.derivative()
        # Hermite interpolation can overshoot between nodes; refuse models
        # whose interpolant dips to zero or below anywhere on the hull.
        probe = np.linspace(t_grid[0], t_grid[-1], max(101, 4 * t_grid.size))
        if np.min(self._spline(probe)) <= 0:
            raise ValueError("interpolated rates dip to zero between nodes")

    @property
    def z_max(self):
        return self.z_min + self.rates.shape[1] - 1

    def _locate(self, t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z)
        if np.any(z < self.state_floor):
            raise OutOfDomain(f"state below floor {self.state_floor}")
        if np.any(t < -_T_SLACK) or np.any(t > 1.0 + _T_SLACK):
            raise OutOfDomain("time outside [0, 1]")
        if np.any(t < self.t_grid[0] - _T_SLACK) or np.any(t > self.t_grid[-1] + _T_SLACK):
            raise TabulationGap("time outside the tabulated hull")
        if np.any(z < self.z_min) or np.any(z > self.z_max):
            raise TabulationGap(f"state outside tabulated range [{self.z_min}, {self.z_max}]")
        return t, z.astype(int)

    def _eval(self, spline, t, z):
        t, z = self._locate(t, z)
        cols = z - self.z_min
        if t.ndim == 0 and cols.ndim == 0:
            return float(spline(t)[int(cols)])
        vals = spline(np.atleast_1d(t))  # (nt, nz)
        if cols.ndim == 0:
            out = vals[:, int(cols)]
            return out.reshape(t.shape) if t.ndim else float(out[0])
        if t.ndim == 0:
            return vals[0, cols]
        return vals[np.arange(t.size), cols] if t.shape == cols.shape else vals[:, cols]

    def rate(self, t, z):
        return self._eval(self._spline, t, z)

    def rate_dt(self, t, z):
        return self._eval(self._spline_dt, t, z)

    def rate_grid(self, times, states):
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=int)
        t, z = self._locate(times, states)
        return self._spline(t)[:, z - self.z_min]

    def difference_bounds(self):
        if self.rates.shape[1] < 2:
            raise EmptyRange("need at least two states to form differences")
        diffs = self.rates[:, 1:] - self.rates[:, :-1]
        return (float(diffs.min()), float(diffs.max()))

    def characteristic_bounds(self, t_window=(0.0, 1.0), z_range=None, grid_step=1e-3):
        s, u = _validate_window(t_window)
        if z_range is None:
            z_range = (self.z_min, self.z_max - 1)
        zlo, zhi = _validate_zrange(z_range, self.state_floor)
        n_t = max(2, int(math.ceil((u - s) / grid_step)) + 1)
        times = np.linspace(s, u, n_t)
        states = np.arange(zlo, zhi + 1)
        vals = np.empty((n_t, states.size))
        for j, z in enumerate(states):
            vals[:, j] = generic_characteristic(self, times, int(z))
        return CharacteristicBounds(float(vals.min()), float(vals.max()), False)

    def to_dict(self):
        params = {
            "t_grid": self.t_grid.tolist(),
            "z_min": self.z_min,
            "rates": self.rates.tolist(),
        }
        if self.derivative_mode == "supplied":
            params["rates_dt"] = self.rates_dt.tolist()
        return {"family": self.family, "params": params, "state_floor": self.state_floor}


IntensityModel = _RateModel


def generic_characteristic(model, t, z):
    """Characteristic assembled directly from rate and rate_dt.

    Equals d/dt log rate + rate(., z+1) - rate(., z) where the rate is
    positive, and 0 where it vanishes (pinned intensities only; the models in
    this module are strictly positive).
    """
    lz = np.asarray(model.rate(t, z), dtype=float)
    lt = np.asarray(model.rate_dt(t, z), dtype=float)
    lup = np.asarray(model.rate(t, np.asarray(z) + 1), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lz > 0.0, lt / lz + lup - lz, 0.0)
    return float(out) if out.ndim == 0 else out


def characteristic_bounds(model, t_window=(0.0, 1.0), z_range=(0, 0), grid_step=1e-3):
    """Infimum and supremum of the characteristic over window x state range.

    Exact for the parametric families; a grid scan (non-certified) for
    tabulated models.
    """
    return model.characteristic_bounds(t_window=t_window, z_range=z_range, grid_step=grid_step)


class CharacteristicField:
    """Cached pointwise characteristic evaluations of one model.

    The cache is lock-protected so the field can be shared across threads
    without changing results.
    """

    def __init__(self, model):
        self.model = model
        self._cache = {}
        self._lock = threading.Lock()

    def value(self, t, z):
        key = (float(t), int(z))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        val = float(self.model.characteristic(*key))
        with self._lock:
            self._cache[key] = val
        return val


def constant_characteristic_model(lam, alpha=1.0):
    """A benchmark model whose characteristic is identically ``lam``.

    Constant rates for lam == 0, state-linear rates for lam > 0 and
    time-exponential rates for lam < 0 (state-linear rates would go negative).
    """
    if lam == 0:
        return Poisson(alpha=alpha)
    if lam > 0:
        return SpaceLinear(lam=lam, alpha=alpha)
    return TimeExponential(alpha=alpha, lam=lam)


_FAMILIES = {
    "poisson": Poisson,
    "space_linear": SpaceLinear,
    "time_exponential": TimeExponential,
    "product": Product,
    "tabulated": Tabulated,
}


def model_from_dict(descriptor):
    """Build a model from the JSON descriptor form.

    ``{"family": ..., "params": {...}, "state_floor": int}`` with the
    tabulated payload ``{"t_grid": [...], "z_min": int, "rates": [[...]],
    "rates_dt": [[...]] optional}``.
    """
    try:
        family = descriptor["family"]
        params = dict(descriptor.get("params", {}))
    except (TypeError, KeyError) as exc:
        raise ValueError(f"malformed model descriptor: {exc}") from exc
    if family not in _FAMILIES:
        raise ValueError(f"unknown rate family {family!r}")
    floor = descriptor.get("state_floor", None)
    if family == "poisson":
        return Poisson(alpha=params["alpha"], state_floor=int(floor or 0))
    if family == "space_linear":
        return SpaceLinear(lam=params["lambda"], alpha=params["alpha"], state_floor=int(floor or 0))
    if family == "time_exponential":
        return TimeExponential(alpha=params["alpha"], lam=params["lambda"], state_floor=int(floor or 0))
    if family == "product":
        return Product(alpha=params["alpha"], lam=params["lambda"], beta=params["beta"],
                       state_floor=int(floor or 0))
    return Tabulated(
        t_grid=params["t_grid"],
        z_min=params["z_min"],
        rates=params["rates"],
        rates_dt=params.get("rates_dt"),
        state_floor=floor,
    )


def model_from_json(path):
    """Load a model descriptor from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
