import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from statsmodels.stats.proportion import proportion_confint

from stretchlab import montecarlo as mc
from stretchlab.exceptions import ConfigurationError, OrbitDegenerateError
from stretchlab.map_core import MapParams, compute_geometry, return_tail_exact
from stretchlab.observables import LogPower, centered_identity


class ZeroRng:
    """Stands in for a generator so the refill term vanishes."""

    def random(self, shape):
        return np.zeros(shape)


def config(half, **kw):
    params, _, dens = half
    kw.setdefault("trials", 20_000)
    kw.setdefault("seed", 5)
    return mc.SimulationConfig(params, density=dens, **kw)


@settings(max_examples=200, deadline=None)
@given(trials=st.integers(1, 10**7), frac=st.floats(0.0, 1.0))
def test_wilson_against_statsmodels(trials, frac):
    hits = int(round(frac * trials))
    lo, hi = mc.wilson_interval(hits, trials)
    ref_lo, ref_hi = proportion_confint(hits, trials, alpha=0.05, method="wilson")
    assert lo == pytest.approx(ref_lo, abs=1e-9) and hi == pytest.approx(ref_hi, abs=1e-9)
    assert 0.0 <= lo <= hits / trials <= hi <= 1.0


def test_record_fields():
    r = mc.make_record(10, 2.5, 25, 100)
    assert r.p_hat == 0.25 and r.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert r.as_row() == (10, 2.5, 100, 25, 0.25, r.ci_low, r.ci_high)
    assert len(mc.RECORD_COLUMNS) == len(r.as_row())


def test_config_validation(half):
    with pytest.raises(ConfigurationError):
        config(half, trials=0)
    with pytest.raises(ConfigurationError):
        config(half, burn_in=-1)
    with pytest.raises(ValueError):
        config(half, sampling="importance")
    assert config(half, trials=10, batch_size=4).batch_sizes == [4, 4, 2]


def test_inverse_cdf_needs_density(half):
    cfg = mc.SimulationConfig(half[0], trials=10)
    with pytest.raises(ConfigurationError):
        mc.sample_stationary(cfg, mc.rng_stream(0, 0, 0), 10)


def test_streams_independent():
    a = mc.rng_stream(1, 0, 0).random(4)
    assert np.all(a == mc.rng_stream(1, 0, 0).random(4))
    for other in (mc.rng_stream(1, 0, 1), mc.rng_stream(1, 1, 0), mc.rng_stream(2, 0, 0)):
        assert not np.any(a == other.random(4))


def test_birkhoff_sum_small_cases():
    p = MapParams(1.0)
    obs = centered_identity().with_mean(0.0)
    assert mc.birkhoff_sum(p, obs, 1 / 3, 1) == pytest.approx(-1 / 6)
    assert mc.birkhoff_sum(p, obs, 1 / 3, 2) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(OrbitDegenerateError):
        mc.birkhoff_sum(p, obs, 0.75, 3)  # 0.75 -> 0.5 -> 1
    with pytest.raises(ConfigurationError):
        mc.birkhoff_sum(p, centered_identity(), 0.3, 2)


def test_vector_sums_match_scalar(half, item_half):
    params = half[0]
    cfg = config(half)
    x0 = np.random.default_rng(2).uniform(0.01, 0.99, 64)
    sums = mc._orbit_sums(cfg, item_half, x0.copy(), 30, ZeroRng(), [10, 30])
    for n in (10, 30):
        scalar = [mc.birkhoff_sum(params, item_half, x, n) for x in x0]
        np.testing.assert_allclose(sums[n][0], scalar, atol=1e-12)
        assert np.all(sums[n][1] >= np.abs(sums[n][0]))


@pytest.mark.parametrize("steps", [10, 53, 300])
def test_refill_keeps_doubling_uniform(steps):
    p = MapParams(1.0)
    rng = mc.rng_stream(0, 0, 0)
    x = mc.uniform_start(rng, 200_000)
    for _ in range(steps):
        x = mc.step_refill(p, x, rng)
    assert np.all((x > 0) & (x < 1))
    n = x.size
    assert abs(np.mean(x) - 0.5) < 5 * math.sqrt(1 / 12 / n)
    assert abs(np.mean(x > 0.5) - 0.5) < 5 * math.sqrt(0.25 / n)
    assert abs(np.mean(x < 0.01) - 0.01) < 5 * math.sqrt(0.0099 / n)


def test_refill_low_bits_uniform():
    # images in [1/4, 1/2) live on a 2**-54 grid; all four refill values are equally likely
    p = MapParams(1.0)
    rng = mc.rng_stream(3, 0, 0)
    x = 0.625 + 0.125 * rng.random(400_000)
    y = mc.step_refill(p, x, rng)
    low = np.round(((y - (2 * x - 1)) * 2.0 ** 54)).astype(int)
    freq = np.bincount(low, minlength=4) / low.size
    assert freq.size == 4
    np.testing.assert_allclose(freq, 0.25, atol=5 * math.sqrt(0.25 * 0.75 / low.size))


def test_uniform_start_open_interval():
    x = mc.uniform_start(mc.rng_stream(0, 0, 0), 100_000)
    assert np.all((x > 0) & (x < 1))


def test_determinism_across_threads(half, item_half):
    cells = [(n, n * item_half.nu_mean / 2) for n in (10, 20)]
    runs = [mc.deviation_cells(config(half, threads=t, batch_size=4096), item_half, cells)
            for t in (1, 2, 4)]
    assert runs[0] == runs[1] == runs[2]


def test_mode_ordering(half, item_half):
    cfg = config(half)
    cells = [(20, 2.0), (20, 4.0)]
    absolute = mc.deviation_cells(cfg, item_half, cells, "absolute")
    one_sided = mc.deviation_cells(cfg, item_half, cells, "one-sided")
    running = mc.deviation_cells(cfg, item_half, cells, "running-max")
    for a, o, r in zip(absolute, one_sided, running):
        assert o.hits <= a.hits <= r.hits


def test_threshold_monotone(half, item_half):
    recs = mc.deviation_cells(config(half), item_half, [(15, t) for t in np.linspace(0.1, 5, 30)])
    hits = [r.hits for r in recs]
    assert hits == sorted(hits, reverse=True)


@pytest.mark.parametrize("cells", [[(10, 0.0)], [(10, -1.0)], [(0, 1.0)]])
def test_bad_cells(half, item_half, cells):
    with pytest.raises(ConfigurationError):
        mc.deviation_cells(config(half), item_half, cells)


def test_mdp_validation(half, item_half):
    cfg = config(half)
    with pytest.raises(ConfigurationError):
        mc.mdp_cells(cfg, item_half, [10], 0.2, 0.0)
    with pytest.raises(ConfigurationError):
        mc.mdp_cells(cfg, item_half, [10], -0.5, 1.0)
    with pytest.raises(ConfigurationError):
        mc.mdp_cell(cfg, item_half, 10, 1.0, 1.0)
    r = mc.mdp_cell(cfg, item_half, 10, 0.5, 1.0)
    assert r.threshold == pytest.approx(math.sqrt(20))


def test_doubling_deviation_exact():
    # under Lebesgue measure nu(|x - 1/2| > 0.3) = 0.4
    cfg = mc.SimulationConfig(MapParams(1.0), seed=1, trials=200_000, sampling="lebesgue")
    r = mc.deviation_cell(cfg, centered_identity().with_mean(0.0), 1, 0.3)
    assert abs(r.p_hat - 0.4) <= 4 * math.sqrt(0.24 / r.trials)


@pytest.mark.parametrize("gamma", [0.5, 1.0])
def test_empirical_tail_matches_exact(gamma):
    p = MapParams(gamma)
    geo = compute_geometry(p, 200)
    cfg = mc.SimulationConfig(p, seed=9, trials=300_000, sampling="lebesgue")
    for r in mc.empirical_return_tail(cfg, 200):
        q = return_tail_exact(geo, r.n)
        if q * r.trials >= 25 and q < 1:
            assert abs(r.p_hat - q) <= 4 * math.sqrt(q * (1 - q) / r.trials)
    with pytest.raises(ConfigurationError):
        mc.empirical_return_tail(cfg, 1)


def test_ci_calibration_doubling():
    p = MapParams(1.0)
    covered = 0
    for seed in range(100):
        cfg = mc.SimulationConfig(p, seed=seed, trials=1000, sampling="lebesgue")
        r = mc.empirical_return_tail(cfg, 4)[3]
        covered += r.ci_low <= 0.125 <= r.ci_high
    assert covered >= 90


def test_stationarity_under_burn_in(half, item_half):
    recs = [mc.deviation_cell(config(half, seed=s, burn_in=b, trials=300_000), item_half, 20,
                              20 * item_half.nu_mean / 2)
            for s, b in ((21, 0), (22, 100))]
    a, b = recs
    assert a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def test_lebesgue_burn_in_agrees_with_inverse_cdf(half, item_half):
    a = mc.deviation_cell(config(half, trials=300_000), item_half, 10, 2.0)
    b = mc.deviation_cell(config(half, trials=300_000, sampling="lebesgue", burn_in=300, seed=6),
                          item_half, 10, 2.0)
    assert abs(a.p_hat - b.p_hat) <= 4 * math.hypot(a.stderr, b.stderr)


def test_concentration_sample(half, item_half):
    cfg = config(half, trials=50_000)
    s = mc.concentration_sample(cfg, item_half, 20)
    assert s.K.shape == (50_000,) and s.pilot.shape == (50_000,)
    assert np.all(s.K >= 0)
    grid = s.t_grid(points=8)
    assert grid == sorted(grid) and all(t > 0 for t in grid)
    ps = [s.record(t).p_hat for t in grid]
    assert ps == sorted(ps, reverse=True)
    with pytest.raises(ConfigurationError):
        mc.concentration_sample(cfg, LogPower(1.0).with_mean(1.5), 20)


def test_orbit_histogram_shape(half):
    cfg = config(half, burn_in=10)
    counts = mc.orbit_histogram(cfg, half[2].grid, 1000, 20, groups=10)
    assert counts.shape == (10, half[2].grid.n_cells) and counts.sum() == 20_000
    with pytest.raises(ConfigurationError):
        mc.orbit_histogram(cfg, half[2].grid, 1001, 5, groups=10)
