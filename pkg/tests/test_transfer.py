import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stretchlab.exceptions import ResolutionError, TailNotNegligibleError
from stretchlab.map_core import MapParams, map_array
from stretchlab.observables import ItemALipschitz, LogPower, PiecewiseLinear, centered_identity
from stretchlab.transfer import (UlamDensity, UlamGrid, asymptote_ratio, build_ulam, correlation,
                                 correlation_series, integrate, invariant_density, make_grid,
                                 uniform_grid, variance_constants)


def test_grid_layout():
    g = make_grid(4096)
    b = g.breakpoints
    assert b[0] == 0.0 and b[1] == 1e-12 and b[-1] == 1.0
    assert 0.5 in b and np.all(np.diff(b) > 0) and g.n_cells == 4096
    assert b[g.half_index] == 0.5
    w = g.widths
    right = w[g.half_index:]
    assert np.allclose(right, right[0])
    # geometric part meets the uniform part with matching widths
    assert np.max(w) / right[0] < 1.01


def test_grid_rejects():
    with pytest.raises(ValueError):
        make_grid(64)
    with pytest.raises(ValueError):
        UlamGrid(np.linspace(0.0, 1.0, 301))  # first cell must end at the floor
    with pytest.raises(ValueError):
        UlamGrid(np.linspace(0.0, 1.0, 300), floor=1 / 299)  # 1/2 missing


def test_locate_left_open():
    g = make_grid(512)
    i = 100
    assert g.locate(g.right[i]) == i
    assert g.locate(np.nextafter(g.right[i], 2.0)) == i + 1
    assert g.locate(1.0) == g.n_cells - 1
    assert g.locate(0.5) == g.half_index - 1


@pytest.mark.parametrize("gamma", [0.4, 0.5, 1.0])
def test_rows_stochastic(gamma):
    op = build_ulam(MapParams(gamma), make_grid(1024))
    rows = np.asarray(op.matrix.sum(axis=1)).ravel()
    assert np.max(np.abs(rows - 1.0)) < 1e-13
    assert op.matrix.min() >= 0.0


@pytest.mark.parametrize("cell", [5, 300, 700, 1000])
def test_row_against_dense_sampling(cell):
    # independent oracle: push 2e5 equally spaced points of the cell through the map
    p = MapParams(0.5)
    g = make_grid(1024)
    op = build_ulam(p, g)
    k = 200_000
    x = g.left[cell] + (np.arange(k) + 0.5) / k * g.widths[cell]
    hits = np.bincount(g.locate(map_array(p, x)), minlength=g.n_cells) / k
    row = op.matrix.getrow(cell).toarray().ravel()
    assert np.max(np.abs(row - hits)) < 1e-4


def test_doubling_density_exact(doubling):
    assert np.max(np.abs(doubling[2].values - 1.0)) <= 1e-9


def test_density_is_fixed_point(half):
    _, op, dens = half
    m = dens.masses
    assert np.abs(op.push(m) - m).sum() < 1e-10
    assert m.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(dens.values > 0)


def test_density_asymptote(half):
    params, _, dens = half
    assert asymptote_ratio(dens, params.beta) <= 10.0


def test_cdf_and_mass(half):
    dens = half[2]
    assert dens.cdf(1.0) == pytest.approx(1.0, abs=1e-12)
    assert dens.mass(0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert dens.mass(0.5, 0.25) == 0.0
    with pytest.raises(ResolutionError):
        dens.cdf(1e-13)
    x = np.linspace(1e-6, 1.0, 1000)
    assert np.all(np.diff(dens.cdf(x)) >= 0)


def test_inverse_cdf_draws(half):
    dens = half[2]
    rng = np.random.default_rng(3)
    n = 400_000
    x = dens.inverse_cdf(rng.random(n), rng.random(n))
    assert np.all((x > 0) & (x <= 1))
    for a, b in ((0.5, 1.0), (0.0, 0.01), (0.2, 0.3)):
        p = dens.mass(a, b)
        frac = np.mean((x > a) & (x <= b))
        assert abs(frac - p) <= 5 * np.sqrt(p * (1 - p) / n)


def test_integrate_constant_and_resolution(half):
    dens = half[2]
    assert integrate(PiecewiseLinear(((0.0, 2.0), (1.0, 2.0))), dens) == pytest.approx(2.0)
    step = PiecewiseLinear(((0.0, 0.0), (0.6, 0.0), (0.6 + 1e-9, 1.0), (1.0, 1.0)))
    with pytest.raises(ResolutionError):
        integrate(step, dens)


def test_refinement_stability():
    p = MapParams(0.5)
    f = ItemALipschitz.from_params(p)
    a = integrate(f, invariant_density(build_ulam(p, make_grid(4096))))
    b = integrate(f, invariant_density(build_ulam(p, make_grid(8192))))
    assert abs(a - b) < 1e-4


def test_doubling_correlations(doubling):
    _, op, dens = doubling
    obs = centered_identity()
    cov = correlation_series(op, dens, obs, 20)
    np.testing.assert_allclose(cov, 2.0 ** -np.arange(21.0) / 12.0, atol=1e-6)
    assert correlation(op, dens, obs, 3) == pytest.approx(cov[3])
    vc = variance_constants(op, dens, obs)
    assert vc.sigma2 == pytest.approx(0.25, abs=1e-5)
    assert vc.V >= vc.sigma2


def test_correlation_bounds(half, item_half):
    _, op, dens = half
    cov = correlation_series(op, dens, item_half, 500)
    assert cov[0] > 0 and np.all(np.abs(cov) <= cov[0])
    with pytest.raises(ValueError):
        correlation(op, dens, item_half, -1)


def test_correlation_decay_rate(half, item_half):
    from stretchlab.analysis import fit_stretched_exponent

    _, op, dens = half
    cov = correlation_series(op, dens, item_half, 400)
    n = np.arange(10, 401)
    fit = fit_stretched_exponent(np.column_stack([n, np.abs(cov[n]) / cov[0]]))
    assert 0.35 <= fit.exponent <= 0.65


def test_variance_truncation(half, item_half):
    _, op, dens = half
    vc = variance_constants(op, dens, item_half)
    assert vc.sigma2 > 0 and vc.V >= vc.sigma2 and vc.truncation_index > 10
    with pytest.raises(TailNotNegligibleError):
        variance_constants(op, dens, item_half, n_max=5)


def test_operator_duality(half):
    # push of psi dnu paired with phi equals the integral of (phi o T) psi
    params, op, dens = half
    phi = ItemALipschitz.from_params(params)
    g = dens.grid
    via_push = float(np.dot(phi(g.midpoints), op.push(g.midpoints * dens.masses)))
    k = 400
    pts = g.left[:, None] + (np.arange(k) + 0.5) / k * g.widths[:, None]
    direct = float(np.sum(np.mean(phi(map_array(params, pts)) * pts, axis=1) * dens.masses))
    assert via_push == pytest.approx(direct, abs=1e-3)


def test_estimator_api():
    est = UlamDensity(gamma=0.5, n_cells=1024)
    assert est.get_params() == {"gamma": 0.5, "n_cells": 1024, "floor": 1e-12, "tol": 1e-12}
    with pytest.raises(NotFittedError):
        est.pdf([0.3])
    c = clone(est).set_params(gamma=1.0)
    assert c.fit() is c
    np.testing.assert_allclose(c.pdf([0.1, 0.9]), 1.0, atol=1e-9)
    assert np.all(c.score_samples([0.3]) == pytest.approx(0.0, abs=1e-9))
    assert c.integrate(LogPower(1.0)) == pytest.approx(1.0, abs=1e-4)
    assert c.correlations(centered_identity(), 3)[1] == pytest.approx(1 / 24, abs=1e-6)


def test_uniform_grid_doubling_row():
    g = uniform_grid(512)
    assert g.n_cells == 512 and g.floor == g.breakpoints[1]
    op = build_ulam(MapParams(1.0), g)
    # the doubling map sends every cell onto two whole cells
    row = op.matrix.getrow(100).toarray().ravel()
    assert sorted(row[row > 0]) == pytest.approx([0.5, 0.5], abs=1e-12)
    with pytest.raises(ValueError):
        uniform_grid(511)
