"""Ulam discretization of the transfer operator.

The unit interval is cut into cells that are geometric near 0 (the invariant
density diverges like ``|log x| ** beta`` there) and uniform elsewhere, with
1/2 always a breakpoint.  Transition fractions between cells are computed
exactly from the two inverse branches, so the doubling map preserves the
uniform cell masses to rounding.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConvergenceError, ResolutionError, TailNotNegligibleError
from .map_core import MapParams, left_inverse

DEFAULT_FLOOR = 1e-12
MIN_CELLS = 256


@dataclass(frozen=True)
class UlamGrid:
    """Cell boundaries ``0 = b_0 < floor = b_1 < ... < b_M = 1``.

    The first cell ``(0, floor]`` absorbs the mass below the floor.
    """

    breakpoints: np.ndarray
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must increase strictly from 0 to 1")
        if len(b) - 1 < MIN_CELLS:
            raise ValueError(f"grid needs at least {MIN_CELLS} cells")
        if not np.any(b == 0.5):
            raise ValueError("1/2 must be a breakpoint")
        if b[1] != self.floor:
            raise ValueError("the first cell must be (0, floor]")
        object.__setattr__(self, "breakpoints", b)

    @property
    def n_cells(self):
        return len(self.breakpoints) - 1

    @property
    def left(self):
        return self.breakpoints[:-1]

    @property
    def right(self):
        return self.breakpoints[1:]

    @property
    def widths(self):
        return np.diff(self.breakpoints)

    @property
    def midpoints(self):
        return 0.5 * (self.left + self.right)

    @property
    def half_index(self):
        """Index of the breakpoint 1/2."""
        return int(np.flatnonzero(self.breakpoints == 0.5)[0])

    def locate(self, x):
        """Cell index of ``x`` under the left-open, right-closed convention."""
        idx = np.searchsorted(self.breakpoints, x, side="left") - 1
        return np.clip(idx, 0, self.n_cells - 1)


def make_grid(n_cells=4096, floor=DEFAULT_FLOOR):
    """Grid with half the cells geometric on ``(floor, x*]``, the rest uniform.

    ``x*`` is chosen so the last geometric cell is as wide as the uniform
    ones.
    """
    n_cells = int(n_cells)
    if n_cells < MIN_CELLS:
        raise ValueError(f"n_cells must be >= {MIN_CELLS}")
    n_geo = n_cells // 2 - 1
    n_uni = n_cells - 1 - n_geo

    def mismatch(xs):
        return xs * (1.0 - (floor / xs) ** (1.0 / n_geo)) - (1.0 - xs) / n_uni

    x_star = brentq(mismatch, floor * 10, 0.49, xtol=1e-15)
    n_mid = max(1, int(round((0.5 - x_star) / (1.0 - x_star) * n_uni)))
    n_right = n_uni - n_mid
    geo = np.geomspace(floor, x_star, n_geo + 1)
    mid = np.linspace(x_star, 0.5, n_mid + 1)
    right = np.linspace(0.5, 1.0, n_right + 1)
    b = np.concatenate([[0.0], geo, mid[1:], right[1:]])
    b[-1] = 1.0
    return UlamGrid(breakpoints=b, floor=floor)


def uniform_grid(n_cells):
    """Uniform grid on [0, 1]; its floor is the first cell width."""
    if n_cells % 2:
        raise ValueError("uniform grid needs an even cell count to contain 1/2")
    b = np.linspace(0.0, 1.0, n_cells + 1)
    return UlamGrid(breakpoints=b, floor=float(b[1]))


@dataclass(frozen=True)
class UlamOperator:
    """Row-stochastic ``P[i, j] = |cell_i ∩ T^-1 cell_j| / |cell_i|``."""

    grid: UlamGrid
    matrix: sp.csr_matrix
    params: MapParams

    def push(self, masses):
        """One step of the discretized transfer operator on a mass vector."""
        return self._transpose @ masses

    @property
    def _transpose(self):
        cached = self.__dict__.get("_PT")
        if cached is None:
            cached = self.matrix.T.tocsr()
            object.__setattr__(self, "_PT", cached)
        return cached


def _overlay(cell_edges, image_edges):
    """Intersect two partitions of the same interval.

    Returns (cell index, image index, length) for every nonempty piece.
    """
    pts = np.union1d(cell_edges, image_edges)
    lengths = np.diff(pts)
    starts = pts[:-1]
    keep = lengths > 0
    starts, lengths = starts[keep], lengths[keep]
    i = np.searchsorted(cell_edges, starts, side="right") - 1
    j = np.searchsorted(image_edges, starts, side="right") - 1
    return i, j, lengths


def build_ulam(params, grid):
    """Assemble the Ulam matrix from exact preimage intervals."""
    b = grid.breakpoints
    h = grid.half_index
    M = grid.n_cells

    # left branch: overlay cells of (0, 1/2] with S(b_j)
    pre = np.empty_like(b)
    pre[0] = 0.0
    pre[1:] = left_inverse(params, b[1:])
    pre[-1] = 0.5
    pre = np.maximum.accumulate(pre)
    il, jl, ll = _overlay(b[: h + 1], pre)

    # right branch: overlay in image coordinates z = 2x - 1, exact for x >= 1/2
    img = 2.0 * b[h:] - 1.0
    ir, jr, lr = _overlay(img, b)
    ir = ir + h
    lr = 0.5 * lr

    rows = np.concatenate([il, ir])
    cols = np.concatenate([jl, jr])
    vals = np.concatenate([ll, lr]) / grid.widths[rows]
    P = sp.coo_matrix((vals, (rows, cols)), shape=(M, M)).tocsr()
    P.sum_duplicates()
    return UlamOperator(grid=grid, matrix=P, params=params)


@dataclass(frozen=True)
class DensityEstimate:
    """Piecewise-constant invariant density on an Ulam grid."""

    grid: UlamGrid
    values: np.ndarray
    iterations: int = 0

    @property
    def masses(self):
        return self.values * self.grid.widths

    def pdf(self, x):
        return self.values[self.grid.locate(np.asarray(x, dtype=float))]

    def cdf(self, x):
        """Mass of ``(0, x)``; raises when ``x`` is inside the floor cell."""
        xa = np.asarray(x, dtype=float)
        if np.any(xa <= self.grid.floor):
            raise ResolutionError(
                f"grid floor {self.grid.floor:g} does not resolve levels below it")
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        i = self.grid.locate(xa)
        out = cum[i] + self.values[i] * (xa - self.grid.left[i])
        return float(out) if xa.ndim == 0 else out

    def mass(self, a, b):
        """Mass of the interval ``(a, b]``."""
        if b <= a:
            return 0.0
        lo = 0.0 if a <= 0.0 else self.cdf(a)
        return float(self.cdf(b) - lo)

    def inverse_cdf(self, u_cell, u_pos):
        """Inverse-CDF draws: ``u_cell`` picks the cell by mass, ``u_pos`` in
        [0, 1) places the point uniformly in the left-open cell."""
        cum = np.cumsum(self.masses)
        cum /= cum[-1]
        i = np.minimum(np.searchsorted(cum, u_cell, side="right"), self.grid.n_cells - 1)
        g = self.grid
        return g.right[i] - np.asarray(u_pos) * g.widths[i]


def invariant_density(op, tol=1e-12, max_iter=1_000_000):
    """Power iteration on cell masses from Lebesgue measure."""
    widths = op.grid.widths
    m = widths / widths.sum()
    for k in range(1, max_iter + 1):
        m_next = op.push(m)
        m_next /= m_next.sum()
        change = np.abs(m_next - m).sum()
        m = m_next
        if change < tol:
            break
    else:
        raise ConvergenceError(f"power iteration not converged after {max_iter} steps")
    return DensityEstimate(grid=op.grid, values=m / widths, iterations=k)


def _edge_values(obs, grid):
    return obs(np.maximum(grid.breakpoints, 1e-300))


def integrate(obs, density, check_resolution=True):
    """Midpoint-rule integral of ``obs`` against the density estimate."""
    grid = density.grid
    masses = density.masses
    if check_resolution:
        edges = _edge_values(obs, grid)
        span = np.ptp(edges)
        jump = np.abs(np.diff(edges))
        bad = (masses > 1e-6) & (jump > 0.1 * span)
        if span > 0 and np.any(bad):
            raise ResolutionError(
                f"observable varies by more than 10% across {int(bad.sum())} cells")
    return float(np.dot(obs(grid.midpoints), masses))


def _centered_measure(obs, density):
    f = obs(density.grid.midpoints)
    mean = float(np.dot(f, density.masses))
    return f, (f - mean) * density.masses


def correlation_series(op, density, obs, n_max):
    """``cov_nu(f, f o T^n)`` for ``n = 0..n_max`` by pushing ``(f - nu f) dnu``."""
    f, mu = _centered_measure(obs, density)
    out = np.empty(int(n_max) + 1)
    for n in range(int(n_max) + 1):
        out[n] = np.dot(f, mu)
        mu = op.push(mu)
    return out


def correlation(op, density, obs, n):
    if n < 0:
        raise ValueError("n must be >= 0")
    return float(correlation_series(op, density, obs, n)[-1])


@dataclass(frozen=True)
class VarianceConstants:
    V: float
    sigma2: float
    truncation_index: int
    tail_bound: float


def variance_constants(op, density, obs, n_max=20_000, rel_cut=1e-10):
    """``V = cov_0 + 2 sum |cov_i|`` and ``sigma2 = cov_0 + 2 sum cov_i``.

    The sums stop at the first ``n`` ending three consecutive correlations
    below ``rel_cut * cov_0``.
    """
    cov = correlation_series(op, density, obs, n_max)
    c0 = cov[0]
    if c0 <= 0.0:
        return VarianceConstants(V=0.0, sigma2=0.0, truncation_index=0, tail_bound=0.0)
    small = np.abs(cov) < rel_cut * c0
    run = np.convolve(small.astype(int), np.ones(3, dtype=int), mode="valid")
    hits = np.flatnonzero(run[1:] == 3) + 1
    if hits.size == 0:
        raise TailNotNegligibleError(
            f"|cov_n| not below {rel_cut:g} * cov_0 by n = {n_max}")
    stop = int(hits[0]) + 2
    body = cov[1: stop + 1]
    return VarianceConstants(
        V=float(c0 + 2.0 * np.abs(body).sum()),
        sigma2=float(c0 + 2.0 * body.sum()),
        truncation_index=stop,
        tail_bound=float(2.0 * np.abs(cov[stop - 2: stop + 1]).sum()),
    )


class UlamDensity(BaseEstimator):
    """Estimator front end for the invariant density.

    Parameters
    ----------
    gamma : float, default=0.5
        Map parameter.
    n_cells : int, default=4096
        Number of Ulam cells.
    floor : float, default=1e-12
        Right end of the first cell.
    tol : float, default=1e-12
        L1 stopping tolerance for the power iteration.

    Attributes
    ----------
    operator_ : UlamOperator
    density_ : DensityEstimate
    """

    def __init__(self, gamma=0.5, n_cells=4096, floor=DEFAULT_FLOOR, tol=1e-12):
        self.gamma = gamma
        self.n_cells = n_cells
        self.floor = floor
        self.tol = tol

    def fit(self, X=None, y=None):
        params = MapParams(self.gamma)
        grid = make_grid(self.n_cells, self.floor)
        self.operator_ = build_ulam(params, grid)
        self.density_ = invariant_density(self.operator_, tol=self.tol)
        return self

    def pdf(self, X):
        check_is_fitted(self, "density_")
        return self.density_.pdf(np.asarray(X, dtype=float).ravel())

    def score_samples(self, X):
        """Log density at the points ``X``."""
        return np.log(self.pdf(X))

    def integrate(self, obs):
        check_is_fitted(self, "density_")
        return integrate(obs, self.density_)

    def correlations(self, obs, n_max):
        check_is_fitted(self, "density_")
        return correlation_series(self.operator_, self.density_, obs, n_max)


def asymptote_ratio(density, beta, lo=1e-8, hi=1e-2):
    """max/min of ``phi(x) / |log x| ** beta`` over cells inside ``[lo, hi]``."""
    g = density.grid
    inside = (g.left >= lo) & (g.right <= hi)
    mids = g.midpoints[inside]
    ratio = density.values[inside] / (-np.log(mids)) ** beta
    return float(ratio.max() / ratio.min())
