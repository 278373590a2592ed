import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from scipy.optimize import brentq

from stretchlab.exceptions import DomainError, OrbitTrappedError
from stretchlab.map_core import (LOG2, MapParams, apply_map, compute_geometry, left_inverse,
                                 map_derivative, return_tail_exact, return_time, return_times,
                                 right_inverse, verify_induced_axioms)

GAMMAS = [0.3, 0.4, 0.5, 0.7, 1.0]
gammas = st.sampled_from(GAMMAS)


def brute_map(gamma, x):
    beta = 1.0 / gamma - 1.0
    if x > 0.5:
        return 2.0 * x - 1.0
    return x * (1.0 + math.log(2.0) ** beta / abs(math.log(x)) ** beta)


@pytest.mark.parametrize("gamma", [0.0, -0.5, 1.01, float("nan"), float("inf")])
def test_params_reject_gamma(gamma):
    with pytest.raises(DomainError):
        MapParams(gamma)


def test_params_derived():
    p = MapParams(0.5)
    assert p.beta == 1.0 and p.c == pytest.approx(LOG2)
    assert MapParams(1.0).is_doubling and MapParams(1.0).c == 1.0


@pytest.mark.parametrize("gamma", GAMMAS)
def test_half_maps_to_one(gamma):
    # c = (log 2)^beta makes the left branch hit 1 exactly at 1/2
    assert apply_map(MapParams(gamma), 0.5) == pytest.approx(1.0, rel=1e-15)
    assert apply_map(MapParams(gamma), 0.75) == 0.5


@pytest.mark.parametrize("gamma", GAMMAS)
def test_map_matches_formula(gamma):
    x = np.linspace(1e-6, 1.0, 997)
    expected = [brute_map(gamma, v) for v in x]
    np.testing.assert_allclose(apply_map(MapParams(gamma), x), expected, rtol=1e-14)


@pytest.mark.parametrize("x", [0.0, -0.1, 1.0000001, float("nan")])
def test_map_domain(x):
    with pytest.raises(DomainError):
        apply_map(MapParams(0.5), x)


@pytest.mark.parametrize("gamma", GAMMAS)
def test_derivative_finite_difference(gamma):
    p = MapParams(gamma)
    x = np.concatenate([np.geomspace(1e-8, 0.49, 50), np.linspace(0.51, 0.99, 20)])
    h = 1e-7 * x
    fd = (apply_map(p, x + h) - apply_map(p, x - h)) / (2 * h)
    np.testing.assert_allclose(map_derivative(p, x), fd, rtol=1e-6)


@pytest.mark.parametrize("gamma", GAMMAS)
def test_left_inverse_against_brentq(gamma):
    p = MapParams(gamma)
    for y in (1e-9, 1e-3, 0.2, 0.5, 0.9, 1.0):
        root = brentq(lambda x: brute_map(gamma, x) - y, y / 2, min(y, 0.5), xtol=1e-300,
                      rtol=4 * np.finfo(float).eps)
        assert left_inverse(p, y) == pytest.approx(root, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(gamma=gammas, x=st.floats(1e-300, 0.5))
def test_branch_consistency_left(gamma, x):
    p = MapParams(gamma)
    assert left_inverse(p, apply_map(p, x)) == pytest.approx(x, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(gamma=gammas, x=st.floats(0.5, 1.0, exclude_min=True))
def test_branch_consistency_right(gamma, x):
    assert right_inverse(apply_map(MapParams(gamma), x)) == pytest.approx(x, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(gamma=gammas, a=st.floats(1e-12, 0.5), b=st.floats(1e-12, 0.5))
def test_left_branch_increasing(gamma, a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    p = MapParams(gamma)
    assert apply_map(p, lo) < apply_map(p, hi)


def test_left_inverse_vectorized():
    p = MapParams(0.4)
    y = np.geomspace(1e-20, 1.0, 300)
    assert np.all(left_inverse(p, y) == [left_inverse(p, v) for v in y])


def test_doubling_geometry_closed_form():
    geo = compute_geometry(MapParams(1.0), 50)
    n = np.arange(51)
    assert np.all(geo.y == 2.0 ** -(n + 1.0))
    m = np.arange(1, 53)
    assert np.all(return_tail_exact(geo, m) == 2.0 ** -(np.maximum(m, 1) - 1.0))


@pytest.mark.parametrize("gamma", [0.4, 0.5, 0.7])
def test_geometry_against_linear_iteration(gamma):
    # independent oracle: repeated brentq preimages in the linear domain
    p = MapParams(gamma)
    geo = compute_geometry(p, 30)
    y = 0.5
    for n in range(1, 31):
        y = brentq(lambda x: brute_map(gamma, x) - y, y / 2, y, xtol=1e-300, rtol=1e-15)
        assert geo.y_at(n) == pytest.approx(y, rel=1e-12)


@pytest.mark.parametrize("gamma", [0.4, 0.5, 0.7])
def test_geometry_log_domain_deep(gamma):
    p = MapParams(gamma)
    geo = compute_geometry(p, 5000)
    assert np.all(np.diff(geo.u) > 0) and np.all(np.isfinite(geo.u))
    assert abs(geo.log_slope(n_min=100) - gamma) < 0.03
    v1, v2 = geo.envelope()
    n = np.arange(1, 5001)
    assert 0 < v2 <= v1
    assert np.all(geo.u[n] <= v1 * n ** gamma + 1e-9)
    assert np.all(geo.u[n] >= v2 * n ** gamma - 1e-9)


def test_sets_and_cells():
    geo = compute_geometry(MapParams(0.5), 40)
    assert geo.I(3) == (0.0, geo.y_at(3))
    assert geo.J(3) == (0.5, 0.5 * geo.y_at(3) + 0.5)
    assert geo.return_cell(1) == (0.75, 1.0)
    for n in range(2, 30):
        a, b = geo.return_cell(n)
        assert a < b
        assert geo.return_cell(n + 1)[1] == a
    with pytest.raises(IndexError):
        geo.return_cell(50)


@pytest.mark.parametrize("gamma", [0.4, 0.5, 0.7, 1.0])
def test_return_cells_hold_their_time(gamma):
    p = MapParams(gamma)
    geo = compute_geometry(p, 60)
    for n in range(1, 40):
        a, b = geo.return_cell(n)
        for t in (0.25, 0.5, 0.75):
            assert return_time(p, a + t * (b - a)).return_time == n


@pytest.mark.parametrize("gamma", [0.4, 0.5, 1.0])
def test_return_times_vectorized_matches_scalar(gamma):
    p = MapParams(gamma)
    starts = 0.5 + 0.5 * np.random.default_rng(1).random(500)
    times, land = return_times(p, starts)
    for s, t, x in zip(starts, times, land):
        r = return_time(p, s)
        # vector and scalar pow may differ in the last bits
        assert r.return_time == t and r.landing == pytest.approx(x, rel=1e-12)
        assert 0.5 < x <= 1.0


@pytest.mark.parametrize("y", [0.5, 1.0, 0.2, 1.5])
def test_return_time_domain(y):
    with pytest.raises(DomainError):
        return_time(MapParams(0.5), y)


def test_return_time_cap(monkeypatch):
    import stretchlab.map_core as mcore

    monkeypatch.setattr(mcore, "return_time_cap", lambda params, floor=None: 3)
    with pytest.raises(OrbitTrappedError):
        mcore.return_time(MapParams(0.5), 0.5 + 1e-6)


def test_tail_exact_as_cell_sums():
    # m(R >= n) = sum of cell lengths of {R = k}, k >= n, in normalized measure
    geo = compute_geometry(MapParams(0.5), 300)
    widths = [2 * (b - a) for a, b in (geo.return_cell(k) for k in range(1, 300))]
    for n in (2, 5, 40):
        assert return_tail_exact(geo, n) == pytest.approx(
            sum(widths[n - 1:]) + 2 * (geo.return_cell(299)[0] - 0.5), rel=1e-12)


@pytest.mark.parametrize("gamma", [0.4, 0.5, 0.7, 1.0])
def test_induced_expansion(gamma):
    p = MapParams(gamma)
    rep = verify_induced_axioms(p, compute_geometry(p, 40), 2000)
    assert rep.expansion_ok
    assert np.isfinite(rep.distortion_constant)
