"""Observables on (0, 1] with their regularity metadata.

Every observable is an immutable callable.  ``nu_mean`` is left empty at
construction; :func:`stretchlab.transfer.integrate` computes it and
:meth:`Observable.with_mean` returns a copy carrying the value.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .exceptions import DomainError
from .map_core import left_inverse

LOG_FLOOR = 1e-300


def _check_domain(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(arr > 1.0):
        raise DomainError("observables are defined on (0, 1]")
    return arr


@dataclass(frozen=True)
class Observable:
    nu_mean: float = field(default=None, kw_only=True, compare=False)

    kind = "observable"

    def __call__(self, x):
        arr = _check_domain(x)
        out = self._eval(arr)
        return float(out) if arr.ndim == 0 else out

    def _eval(self, x):
        raise NotImplementedError

    def with_mean(self, value):
        return replace(self, nu_mean=float(value))

    @property
    def lipschitz_constant(self):
        return None

    @property
    def holder(self):
        """``(eta, constant)`` or None when the observable is not Hölder."""
        lip = self.lipschitz_constant
        return None if lip is None else (1.0, lip)

    @property
    def bv_norm(self):
        return None

    def describe(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class ItemALipschitz(Observable):
    """Lipschitz extension of the indicator of (1/2, 1].

    1 on (1/2, 1], 0 on (0, y1] and linear in between, where ``y1`` is the
    left preimage of 1/2.  The ``y1`` used is stored on the instance.
    """

    y1: float

    kind = "item-a"

    @classmethod
    def from_params(cls, params):
        return cls(y1=left_inverse(params, 0.5))

    def _eval(self, x):
        return np.clip((x - self.y1) / (0.5 - self.y1), 0.0, 1.0)

    @property
    def lipschitz_constant(self):
        return 1.0 / (0.5 - self.y1)

    @property
    def bv_norm(self):
        return 2.0

    def describe(self):
        return {"kind": self.kind, "y1": self.y1}


@dataclass(frozen=True)
class LogPower(Observable):
    """``|log x| ** delta``; unbounded at 0, zero at 1."""

    delta: float

    kind = "log-power"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def _eval(self, x):
        return (-np.log(np.maximum(x, LOG_FLOOR))) ** self.delta

    def tail_level(self, t):
        """The point ``exp(-t ** (1/delta))`` below which ``f > t``."""
        return math.exp(-(t ** (1.0 / self.delta)))

    def describe(self):
        return {"kind": self.kind, "delta": self.delta}


@dataclass(frozen=True)
class TruncatedLogPower(Observable):
    """``|log x| ** delta`` capped at its value at ``epsilon``."""

    delta: float
    epsilon: float

    kind = "truncated-log-power"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def cap(self):
        return math.log(1.0 / self.epsilon) ** self.delta

    def _eval(self, x):
        return (-np.log(np.maximum(x, self.epsilon))) ** self.delta

    @property
    def lipschitz_constant(self):
        if self.delta < 1.0:
            return None
        return self.delta * abs(math.log(self.epsilon)) ** (self.delta - 1.0) / self.epsilon

    @property
    def holder(self):
        if self.delta >= 1.0:
            return 1.0, self.lipschitz_constant
        return self.delta, self.epsilon ** (-self.delta)

    @property
    def bv_norm(self):
        return 2.0 * self.cap

    def describe(self):
        return {"kind": self.kind, "delta": self.delta, "epsilon": self.epsilon}


@dataclass(frozen=True)
class PiecewiseLinear(Observable):
    """Linear interpolation through ``knots = ((x0, f0), (x1, f1), ...)``."""

    knots: tuple

    kind = "piecewise-linear"

    def __post_init__(self):
        knots = tuple((float(a), float(b)) for a, b in self.knots)
        xs = [k[0] for k in knots]
        if len(knots) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("knots need at least two strictly increasing abscissae")
        object.__setattr__(self, "knots", knots)

    @property
    def _xy(self):
        xs, ys = zip(*self.knots)
        return np.array(xs), np.array(ys)

    def _eval(self, x):
        xs, ys = self._xy
        return np.interp(x, xs, ys)

    @property
    def lipschitz_constant(self):
        xs, ys = self._xy
        return float(np.max(np.abs(np.diff(ys) / np.diff(xs))))

    @property
    def bv_norm(self):
        _, ys = self._xy
        return float(np.max(np.abs(ys)) + np.sum(np.abs(np.diff(ys))))

    def describe(self):
        return {"kind": self.kind, "knots": [list(k) for k in self.knots]}


def centered_identity():
    """``x - 1/2``, the reference observable for the doubling map."""
    return PiecewiseLinear(knots=((0.0, -0.5), (1.0, 0.5)))


def constant(value):
    return PiecewiseLinear(knots=((0.0, value), (1.0, value)))


OBSERVABLE_NAMES = ("item-a", "log-power", "truncated-log-power", "identity", "constant")


def make_observable(name, params, delta=1.0, epsilon=1e-6, value=1.0):
    """Build an observable from its CLI name."""
    if name == "item-a":
        return ItemALipschitz.from_params(params)
    if name == "log-power":
        return LogPower(delta=delta)
    if name == "truncated-log-power":
        return TruncatedLogPower(delta=delta, epsilon=epsilon)
    if name == "identity":
        return centered_identity()
    if name == "constant":
        return constant(value)
    raise ValueError(f"unknown observable {name!r}; choose from {OBSERVABLE_NAMES}")


def tail_mass(obs, density, t):
    """``nu(|f| > t)`` for ``f = |log x| ** delta`` from the density estimate.

    Equals the mass of ``(0, exp(-t ** (1/delta)))``.
    """
    if not isinstance(obs, LogPower):
        raise TypeError("tail_mass is defined for LogPower observables")
    if not t > 0:
        raise ValueError("t must be positive")
    return density.cdf(obs.tail_level(t))
