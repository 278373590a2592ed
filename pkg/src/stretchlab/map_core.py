"""The interval map family with a stretched-exponential return-time tail.

For ``gamma`` in (0, 1] the map is

    T(x) = x * (1 + c / |log x| ** beta)   for 0 < x <= 1/2
    T(x) = 2 x - 1                         for 1/2 < x <= 1

with ``beta = 1/gamma - 1`` and ``c = (log 2) ** beta`` so that T(1/2) = 1.
``gamma = 1`` is the doubling map.  The base of the inducing scheme is
Y = (1/2, 1] with normalized Lebesgue measure.

Preimages of 1/2 under the left branch, ``y_n = S^n(1/2)``, are kept in the
log domain (``u_n = -log y_n``) so that they stay representable far below
the double precision underflow threshold.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import ConvergenceError, DomainError, OrbitTrappedError

LOG2 = math.log(2.0)

# resolution of 2y - 1 for y drawn in (1/2, 1) at double precision
FLOAT_FLOOR = 2.0 ** -52

_MAX_ITER = 200
_LINEAR_RTOL = 1e-14
_LOG_ATOL = 1e-13


@dataclass(frozen=True)
class MapParams:
    """One member of the map family.

    Parameters
    ----------
    gamma : float
        Stretched-exponential exponent in (0, 1].  ``beta`` and ``c`` are
        derived from it.
    """

    gamma: float
    beta: float = field(init=False)
    c: float = field(init=False)

    def __post_init__(self):
        gamma = float(self.gamma)
        if not (0.0 < gamma <= 1.0) or math.isnan(gamma):
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        beta = 1.0 / gamma - 1.0
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "c", LOG2 ** beta)

    @property
    def is_doubling(self):
        return self.beta == 0.0


def _check_unit(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in (0, 1]")
    return arr


def _left_branch(x, beta, c):
    if beta == 0.0:
        return 2.0 * x
    L = -np.log(x)
    if beta == 1.0:
        return x * (1.0 + c / L)
    return x * (1.0 + c * L ** (-beta))


def _left_derivative(x, beta, c):
    if beta == 0.0:
        return np.full_like(np.asarray(x, dtype=float), 2.0)
    L = -np.log(x)
    g = c * L ** (-beta)
    return 1.0 + g + beta * g / L


def map_array(params, x):
    """Apply the map to an array without domain checks (hot path)."""
    x = np.asarray(x, dtype=float)
    out = 2.0 * x - 1.0
    left = x <= 0.5
    if np.any(left):
        out[left] = _left_branch(x[left], params.beta, params.c)
    return out


def apply_map(params, x):
    """Evaluate the map at ``x`` in (0, 1].

    Scalars return a float, arrays return an array.  ``x = 1/2`` belongs to
    the left branch and maps to 1.
    """
    arr = _check_unit(x)
    out = map_array(params, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def map_derivative(params, x):
    """Derivative of the map, branch by branch."""
    arr = np.atleast_1d(_check_unit(x))
    out = np.full(arr.shape, 2.0)
    left = arr <= 0.5
    out[left] = _left_derivative(arr[left], params.beta, params.c)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def left_inverse(params, y):
    """Inverse of the left branch, ``S: (0, 1] -> (0, 1/2]``.

    Safeguarded Newton iteration on the bracket ``[y/2, min(y, 1/2)]``
    (the left branch satisfies ``x <= T(x) <= 2x``).  Vectorized over ``y``.
    """
    yarr = _check_unit(y, "y")
    scalar = yarr.ndim == 0
    yv = np.atleast_1d(yarr).astype(float)
    if params.is_doubling:
        out = 0.5 * yv
        return float(out[0]) if scalar else out.reshape(yarr.shape)

    beta, c = params.beta, params.c
    lo = 0.5 * yv
    hi = np.minimum(yv, 0.5)
    x = 0.5 * (lo + hi)
    done = hi <= lo
    x[done] = hi[done]
    for _ in range(_MAX_ITER):
        active = ~done
        if not np.any(active):
            break
        xa = x[active]
        f = _left_branch(xa, beta, c) - yv[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(f < 0.0, xa, lo_a)
        hi_a = np.where(f > 0.0, xa, hi_a)
        step = f / _left_derivative(xa, beta, c)
        xn = xa - step
        outside = ~((xn > lo_a) & (xn < hi_a))
        xn = np.where(outside, 0.5 * (lo_a + hi_a), xn)
        converged = (f == 0.0) | (np.abs(xn - xa) <= _LINEAR_RTOL * 1e-2 * xa) \
            | (hi_a - lo_a <= 4.0 * np.spacing(xa))
        xn = np.where(f == 0.0, xa, xn)
        lo[active], hi[active], x[active] = lo_a, hi_a, xn
        idx = np.flatnonzero(active)
        done[idx[converged]] = True
    else:
        raise ConvergenceError("left_inverse did not converge")
    return float(x[0]) if scalar else x.reshape(yarr.shape)


def right_inverse(y):
    """Inverse of the right branch, ``U(y) = (y + 1) / 2``."""
    yarr = _check_unit(y, "y")
    out = 0.5 * (yarr + 1.0)
    return float(out) if yarr.ndim == 0 else out


def _next_u(u, beta, c):
    """Solve ``v = u + log(1 + c / v**beta)`` for ``v`` (one preimage step)."""
    if beta == 0.0:
        return u + LOG2
    lo = u
    hi = u + math.log1p(c * u ** (-beta))
    v = hi
    for _ in range(_MAX_ITER):
        g = v - math.log1p(c * v ** (-beta)) - u
        if g > 0.0:
            hi = v
        elif g < 0.0:
            lo = v
        else:
            return v
        cv = c * v ** (-beta)
        dg = 1.0 + beta * cv / (v * (1.0 + cv))
        vn = v - g / dg
        if not (lo <= vn <= hi):
            vn = 0.5 * (lo + hi)
        if abs(vn - v) <= _LOG_ATOL or hi - lo <= _LOG_ATOL:
            return vn
        v = vn
    raise ConvergenceError("log-domain preimage recursion did not converge")


@dataclass(frozen=True)
class GeometrySequence:
    """Log-domain preimages ``u[n] = -log y_n`` with ``y_n = S^n(1/2)``.

    ``I_n = (0, y_n]`` and ``J_n = (1/2, y_n/2 + 1/2]``.
    """

    u: np.ndarray
    params: MapParams

    @property
    def max_index(self):
        return len(self.u) - 1

    @property
    def y(self):
        if self.params.is_doubling:
            return np.ldexp(1.0, -np.arange(1, len(self.u) + 1))
        return np.exp(-self.u)

    def y_at(self, n):
        if self.params.is_doubling:
            return math.ldexp(1.0, -(int(n) + 1))
        return math.exp(-self.u[n])

    def I(self, n):
        return 0.0, self.y_at(n)

    def J(self, n):
        return 0.5, 0.5 * self.y_at(n) + 0.5

    def return_cell(self, n):
        """Interval ``(a, b]`` on which the return time equals ``n``."""
        if n < 1 or n - 1 > self.max_index:
            raise IndexError(f"return cell {n} not covered by geometry")
        upper = 1.0 if n == 1 else 0.5 * self.y_at(n - 2) + 0.5
        return 0.5 * self.y_at(n - 1) + 0.5, upper

    def log_slope(self, n_min=20, n_max=None):
        """OLS slope of ``log u[n]`` against ``log n``."""
        n_max = self.max_index if n_max is None else n_max
        n = np.arange(n_min, n_max + 1)
        return float(np.polyfit(np.log(n), np.log(self.u[n]), 1)[0])

    def envelope(self, n_min=1):
        """Constants ``(v1, v2)`` with ``exp(-v1 n^g) <= y_n <= exp(-v2 n^g)``.

        Fitted over the available indices, not certified beyond them.
        """
        n = np.arange(max(n_min, 1), self.max_index + 1)
        ratio = self.u[n] / n ** self.params.gamma
        return float(ratio.max()), float(ratio.min())


def compute_geometry(params, max_index):
    """Compute ``u[n] = -log y_n`` for ``n = 0..max_index`` in the log domain."""
    if int(max_index) < 1:
        raise ValueError("max_index must be >= 1")
    if params.is_doubling:
        return GeometrySequence(u=(np.arange(int(max_index) + 1) + 1.0) * LOG2, params=params)
    u = np.empty(int(max_index) + 1)
    u[0] = LOG2
    for n in range(int(max_index)):
        u[n + 1] = _next_u(u[n], params.beta, params.c)
    return GeometrySequence(u=u, params=params)


def return_tail_exact(geometry, n):
    """``m(R >= n)`` on the base under normalized Lebesgue measure.

    Uses ``{R >= n} = J_{n-2}``, so the tail is 1 for ``n <= 1`` and
    ``y_{n-2}`` otherwise.  Vectorized over ``n``.
    """
    narr = np.asarray(n)
    if np.any(narr - 2 > geometry.max_index):
        raise IndexError("n exceeds max_index + 2 of the geometry")
    idx = np.clip(narr - 2, 0, None)
    out = np.where(narr <= 1, 1.0, geometry.y[idx])
    return float(out) if narr.ndim == 0 else out


@dataclass(frozen=True)
class InducedSample:
    start: float
    return_time: int
    landing: float


def return_time_cap(params, floor=FLOAT_FLOOR):
    return int(math.ceil(10.0 * (-math.log(floor)) ** (1.0 + params.beta) / params.c))


def return_time(params, y):
    """First return of ``y`` in (1/2, 1) to the base (1/2, 1]."""
    y = float(y)
    if not (0.5 < y < 1.0):
        raise DomainError("return_time needs a start in the open interval (1/2, 1)")
    cap = return_time_cap(params)
    x = 2.0 * y - 1.0
    k = 1
    while x <= 0.5:
        if k >= cap:
            raise OrbitTrappedError(f"orbit from {y!r} not back after {cap} steps")
        x = float(_left_branch(x, params.beta, params.c))
        k += 1
    return InducedSample(start=y, return_time=k, landing=x)


def return_times(params, starts):
    """Vectorized first-return times and landing points for many starts."""
    starts = np.asarray(starts, dtype=float)
    if np.any(~((starts > 0.5) & (starts < 1.0))):
        raise DomainError("starts must lie in (1/2, 1)")
    cap = return_time_cap(params)
    x = 2.0 * starts - 1.0
    times = np.ones(starts.shape, dtype=np.int64)
    idx = np.flatnonzero(x <= 0.5)
    xa = x[idx]
    k = 1
    while idx.size:
        if k >= cap:
            raise OrbitTrappedError(f"{idx.size} orbits not back after {cap} steps")
        xa = _left_branch(xa, params.beta, params.c)
        k += 1
        back = xa > 0.5
        times[idx[back]] = k
        x[idx[back]] = xa[back]
        idx, xa = idx[~back], xa[~back]
    return times, x


@dataclass
class InducedAxiomsReport:
    cells: np.ndarray
    min_expansion_per_cell: np.ndarray
    max_distortion_per_cell: np.ndarray
    pairs: int

    @property
    def min_expansion(self):
        return float(np.min(self.min_expansion_per_cell))

    @property
    def distortion_constant(self):
        return float(np.max(self.max_distortion_per_cell))

    @property
    def expansion_ok(self):
        return self.min_expansion >= 2.0 - 1e-9


def _induced_map(params, x, n):
    """``F = T^n`` on the cell {R = n} together with ``log F'``."""
    logd = np.full(x.shape, LOG2)
    z = 2.0 * x - 1.0
    for k in range(1, n):
        if np.any(z > 0.5):
            raise RuntimeError("sampled pair left its return cell")
        logd += np.log(_left_derivative(z, params.beta, params.c))
        z = _left_branch(z, params.beta, params.c)
    if np.any(~(z > 0.5)) or np.any(z > 1.0):
        raise RuntimeError("sampled pair did not land in the base")
    return z, logd


def verify_induced_axioms(params, geometry, pair_samples, rng_seed=0, max_cell=30):
    """Sample pairs inside return cells and measure expansion and distortion.

    Returns the minimum of ``|F(y) - F(x)| / |y - x|`` and the maximum of
    ``|log F'(y) - log F'(x)| / |F(y) - F(x)|`` per cell.  The distortion
    constant is only reported.
    """
    if pair_samples < 1:
        raise ValueError("pair_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n_cells = min(max_cell, geometry.max_index + 1)
    cells = np.arange(1, n_cells + 1)
    which = rng.integers(1, n_cells + 1, size=pair_samples)
    min_exp = np.full(n_cells, np.inf)
    max_dist = np.zeros(n_cells)
    for n in cells:
        m = int(np.sum(which == n))
        if m == 0:
            continue
        a, b = geometry.return_cell(n)
        margin = 1e-9 * (b - a)
        lo, hi = a + margin, b - margin
        x = lo + (hi - lo) * rng.random(m)
        y = lo + (hi - lo) * rng.random(m)
        keep = x != y
        x, y = x[keep], y[keep]
        if x.size == 0:
            continue
        fx, lx = _induced_map(params, x, n)
        fy, ly = _induced_map(params, y, n)
        dF = np.abs(fy - fx)
        min_exp[n - 1] = np.min(dF / np.abs(y - x))
        ok = dF > 0
        if np.any(ok):
            max_dist[n - 1] = np.max(np.abs(ly[ok] - lx[ok]) / dF[ok])
    sampled = np.isfinite(min_exp)
    return InducedAxiomsReport(
        cells=cells[sampled],
        min_expansion_per_cell=min_exp[sampled],
        max_distortion_per_cell=max_dist[sampled],
        pairs=pair_samples,
    )
