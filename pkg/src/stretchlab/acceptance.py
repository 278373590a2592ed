"""Acceptance suite shared by ``stretchlab verify`` and the test suite.

Each ``criterion_*`` function builds everything it needs and returns a
:class:`CriterionResult`.  ``scale`` multiplies every Monte Carlo trial
count; the pinned tolerances hold at ``scale=1``.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
import tempfile
import time

import numpy as np

from . import analysis, montecarlo as mc
from .exceptions import InsufficientPointsError
from .map_core import (MapParams, apply_map, compute_geometry, left_inverse, map_array,
                       return_tail_exact, return_time, right_inverse, verify_induced_axioms)
from .observables import (ItemALipschitz, LogPower, TruncatedLogPower, centered_identity,
                          tail_mass)
from .transfer import (asymptote_ratio, build_ulam, correlation_series, integrate,
                       invariant_density, make_grid, variance_constants)

SEED = 7


@dataclass
class CriterionResult:
    key: str
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.key:<4} {self.title}  ({self.seconds:.1f} s)"

    def to_dict(self):
        return {"key": self.key, "title": self.title, "passed": self.passed,
                "details": self.details, "parts": self.parts, "seconds": self.seconds}


@lru_cache(maxsize=8)
def model(gamma, n_cells=4096):
    """``(params, operator, density)`` for one map parameter."""
    params = MapParams(gamma)
    op = build_ulam(params, make_grid(n_cells))
    return params, op, invariant_density(op)


def with_mean(obs, density):
    return obs.with_mean(integrate(obs, density))


def _trials(n, scale):
    return max(1000, int(round(n * scale)))


def _timed(key, title, fn):
    t0 = time.perf_counter()
    passed, details, parts = fn()
    return CriterionResult(key=key, title=title, passed=bool(passed), details=details,
                           parts={k: bool(v) for k, v in parts.items()},
                           seconds=time.perf_counter() - t0)


def _tail_agreement(params, geometry, trials, seed, n_max, min_expected=25):
    """Empirical vs exact return tails within 4 standard errors."""
    config = mc.SimulationConfig(params, seed=seed, trials=trials, sampling="lebesgue")
    records = mc.empirical_return_tail(config, n_max)
    worst, checked = 0.0, 0
    for r in records:
        p = return_tail_exact(geometry, r.n)
        if p * trials < min_expected or p >= 1.0:
            continue
        se = math.sqrt(p * (1.0 - p) / trials)
        worst = max(worst, abs(r.p_hat - p) / se)
        checked += 1
    return worst, checked


def criterion_1(scale=1.0):
    def run():
        params = MapParams(1.0)
        geo = compute_geometry(params, 60)
        n = np.arange(51)
        y_err = float(np.max(np.abs(geo.y[:51] / 2.0 ** -(n + 1.0) - 1.0)))
        m = np.arange(1, 52)
        tail_err = float(np.max(np.abs(return_tail_exact(geo, m) / 2.0 ** -(m - 1.0) - 1.0)))
        worst_z, checked = _tail_agreement(params, geo, _trials(1e6, scale), SEED, 30)
        _, op, dens = model(1.0)
        dens_err = float(np.max(np.abs(dens.values - 1.0)))
        obs = with_mean(centered_identity(), dens)
        cov = correlation_series(op, dens, obs, 20)
        cov_err = float(np.max(np.abs(cov - 2.0 ** -np.arange(21.0) / 12.0)))
        sigma2 = variance_constants(op, dens, obs).sigma2
        parts = {"y_n": y_err <= 1e-12, "exact_tail": tail_err == 0.0,
                 "mc_tail": worst_z <= 4.0 and checked > 0, "density": dens_err <= 1e-9,
                 "covariance": cov_err <= 1e-6, "sigma2": abs(sigma2 - 0.25) <= 1e-5}
        details = {"y_rel_err": y_err, "tail_rel_err": tail_err, "mc_max_z": worst_z,
                   "mc_cells": checked, "density_err": dens_err, "cov_err": cov_err,
                   "sigma2": sigma2}
        return all(parts.values()), details, parts
    return _timed("1", "doubling-map exactness", run)


def criterion_2(scale=1.0):
    def run():
        details, parts = {}, {}
        for g in (0.4, 0.5, 0.7):
            params = MapParams(g)
            geo = compute_geometry(params, 400)
            n = np.arange(10, 401)
            fit = analysis.fit_stretched_exponent(np.column_stack([n, return_tail_exact(geo, n)]))
            worst_z, checked = _tail_agreement(params, geo, _trials(1e7, scale), SEED, 400)
            parts[f"exponent_{g}"] = abs(fit.exponent - g) <= 0.1
            parts[f"mc_{g}"] = worst_z <= 4.0 and checked > 0
            details[str(g)] = {"exponent": fit.exponent, "mc_max_z": worst_z, "mc_cells": checked}
        return all(parts.values()), details, parts
    return _timed("2", "return-tail exponent", run)


def criterion_3(scale=1.0):
    def run():
        params, _, dens = model(0.5)
        ratio = asymptote_ratio(dens, params.beta)
        g = dens.grid
        floor_min = float(np.min(dens.values[g.left >= 1e-3]))
        parts = {"ratio": ratio <= 10.0, "positive": floor_min > 0.0}
        return all(parts.values()), {"ratio": ratio, "min_density": floor_min}, parts
    return _timed("3", "density asymptotics", run)


@lru_cache(maxsize=4)
def _large_deviation(scale):
    params, _, dens = model(0.5)
    geo = compute_geometry(params, 200)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(1e7, scale), density=dens)
    cells = [(n, n * obs.nu_mean / 2.0) for n in range(10, 61, 5)]
    records = mc.deviation_cells(cfg, obs, cells)
    return analysis.check_thm_opt_a(params, geo, records, dens, obs.nu_mean, band=(0.35, 0.65))


def criterion_4(scale=1.0):
    def run():
        rep = _large_deviation(scale)
        parts = {"exponent": rep.values["exponent_ok"], "lower_bound": rep.values["lower_bound_ok"]}
        return rep.passed, rep.values, parts
    return _timed("4", "large-deviation exponent, bounded observable", run)


def criterion_5(scale=1.0):
    def run():
        params, _, dens = model(0.5)
        geo = compute_geometry(params, 2000)
        obs = with_mean(LogPower(1.0), dens)
        cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(1e7, scale), density=dens)
        records = mc.deviation_cells(cfg, obs, [(n, float(n)) for n in range(10, 121, 10)])
        rep = analysis.check_thm_opt_b(params, geo, records, dens, obs.nu_mean, delta=1.0)
        a_exp = _large_deviation(scale).values["exponent"]
        parts = {"band": 0.21 <= rep.values["exponent"] <= 0.45,
                 "ordering": rep.values["exponent"] < a_exp - 0.05,
                 "laminar_mass": rep.values["laminar_mass_ok"]}
        details = dict(rep.values, bounded_exponent=a_exp)
        return all(parts.values()), details, parts
    return _timed("5", "degraded exponent, unbounded observable", run)


def criterion_6(scale=1.0):
    def run():
        _, _, dens = model(0.5)
        obs = LogPower(1.0)
        t = np.linspace(2.0, 12.0, 21)
        p = np.array([tail_mass(obs, dens, v) for v in t])
        fit = analysis.fit_stretched_exponent(np.column_stack([t, p]))
        parts = {"exponent": abs(fit.exponent - 1.0) <= 0.1}
        return all(parts.values()), {"exponent": fit.exponent, "r_squared": fit.r_squared}, parts
    return _timed("6", "observable tail exponent", run)


def criterion_7(scale=1.0):
    def run():
        params, op, dens = model(1.0)
        obs = centered_identity().with_mean(0.0)
        s2 = variance_constants(op, dens, obs).sigma2
        cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(3e8, scale),
                                  sampling="lebesgue", batch_size=1 << 20)
        rep1 = analysis.check_mdp(mc.mdp_cells(cfg, obs, range(16, 31, 2), 0.5, 1.0),
                                  s2, x=1.0, theta=0.5)
        params, op, dens = model(0.5)
        item = with_mean(ItemALipschitz.from_params(params), dens)
        s2h = variance_constants(op, dens, item).sigma2
        cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(1e7, scale), density=dens)
        rep2 = analysis.check_mdp(mc.mdp_cells(cfg, item, range(10, 101, 10), 0.2, 1.0),
                                  s2h, x=1.0, theta=0.2)
        honest = rep2.status in ("pass", "asymptotics not reached") and bool(rep2.table)
        parts = {"doubling": rep1.passed, "gamma_half_reported": honest}
        details = {"doubling": rep1.values, "gamma_half": dict(rep2.values, status=rep2.status)}
        return all(parts.values()), details, parts
    return _timed("7", "moderate-deviation trend", run)


def _concentration(gamma, scale):
    params, _, dens = model(gamma)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(4e6, scale), density=dens)
    sample = mc.concentration_sample(cfg, obs, 50)
    records = [sample.record(t) for t in sample.t_grid()]
    return analysis.check_concentration(records, 50, obs.lipschitz_constant, gamma)


def criterion_8(scale=1.0):
    def run():
        half = _concentration(0.5, scale)
        one = _concentration(1.0, scale)
        parts = {"kappa_finite": math.isfinite(half.values["kappa_fit"]),
                 "no_violations": half.values["violations"] == 0,
                 "bending": half.values["bending"],
                 "doubling_no_bending": not one.values["bending"]}
        keys = ("kappa_fit", "violations", "peak_slope", "final_slope", "local_slopes")
        details = {"gamma_half": {k: half.values[k] for k in keys},
                   "doubling": {k: one.values[k] for k in keys}}
        return all(parts.values()), details, parts
    return _timed("8", "concentration shape", run)


# invariants -----------------------------------------------------------------

def inv_branch_consistency():
    worst = 0.0
    for g in (0.3, 0.5, 0.8, 1.0):
        p = MapParams(g)
        x = np.geomspace(1e-12, 0.5, 2001)
        worst = max(worst, float(np.max(np.abs(left_inverse(p, map_array(p, x)) / x - 1.0))))
        xr = np.linspace(0.5, 1.0, 2001)[1:]
        worst = max(worst, float(np.max(np.abs(right_inverse(map_array(p, xr)) / xr - 1.0))))
    return worst <= 1e-12, {"max_rel_err": worst}


def inv_monotone():
    ok = True
    for g in (0.3, 0.5, 0.8, 1.0):
        p = MapParams(g)
        for x in (np.geomspace(1e-15, 0.5, 5001), np.linspace(0.5, 1.0, 5001)[1:]):
            ok &= bool(np.all(np.diff(map_array(p, x)) > 0))
    return ok, {}


def inv_geometry_tail(scale=1.0):
    p = MapParams(0.5)
    worst, checked = _tail_agreement(p, compute_geometry(p, 400), _trials(1e6, scale), 3, 400)
    return worst <= 4.0 and checked > 0, {"max_z": worst, "cells": checked}


def inv_return_one():
    ok = True
    for g in (0.2, 0.5, 0.9, 1.0):
        p = MapParams(g)
        a, b = compute_geometry(p, 2).return_cell(1)
        ok &= a == 0.75 and b == 1.0 and return_time(p, 0.9).return_time == 1
    return ok, {}


def inv_induced_axioms():
    out = {}
    for g in (0.4, 0.5, 0.7):
        p = MapParams(g)
        rep = verify_induced_axioms(p, compute_geometry(p, 40), 4000)
        out[str(g)] = {"min_expansion": rep.min_expansion, "distortion": rep.distortion_constant}
        if not rep.expansion_ok:
            return False, out
    return True, out


def inv_lipschitz_sweep():
    worst_gap, above = 0.0, 0.0
    for g in (0.4, 0.5, 1.0):
        obs = ItemALipschitz.from_params(MapParams(g))
        x = np.sort(np.concatenate([np.linspace(1e-6, 1.0, 200001), [obs.y1, 0.5]]))
        slope = np.max(np.abs(np.diff(obs(x)) / np.diff(x)))
        L = obs.lipschitz_constant
        worst_gap = max(worst_gap, abs(L - slope) / L)
        above = max(above, (slope - L) / L)
    # rounding in the finite difference alone is ~1e-12 relative
    return worst_gap <= 1e-6 and above <= 1e-10, {"max_gap": worst_gap, "max_above": above}


def inv_truncation_limit():
    x = np.linspace(1e-3, 1.0, 10001)
    full = LogPower(1.5)(x)
    gaps = [float(np.max(np.abs(TruncatedLogPower(1.5, e)(x) - full))) for e in (1e-1, 1e-2, 1e-4)]
    return gaps[-1] == 0.0 and gaps[0] > gaps[1], {"sup_gaps": gaps}


def inv_nu_mean():
    out, ok = {}, True
    for g in (0.5, 1.0):
        params, _, dens = model(g)
        nu_f = integrate(ItemALipschitz.from_params(params), dens)
        right = dens.mass(0.5, 1.0)
        ok &= 0.0 < right <= nu_f <= 1.0
        out[str(g)] = {"nu_f": nu_f, "nu_right": right}
    return ok, out


def inv_laminar_identity():
    params, _, dens = model(0.5)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    geo = compute_geometry(params, 45)
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in range(2, 41):
        a, b = geo.J(n)
        for x in a + (b - a) * (0.001 + 0.998 * rng.random(20)):
            s = mc.birkhoff_sum(params, obs, x, n)
            worst = max(worst, abs(s - (1.0 - n * obs.nu_mean)))
    return worst <= 1e-12, {"max_err": worst}


def inv_cross_density(scale=1.0):
    params, _, dens = model(0.5)
    orbits = 10_000
    steps = max(100, int(round(10_000 * scale)))
    cfg = mc.SimulationConfig(params, seed=SEED, trials=1, burn_in=10_000, sampling="lebesgue")
    counts = mc.orbit_histogram(cfg, dens.grid, orbits, steps, groups=100)
    frac = counts / counts.sum(axis=1, keepdims=True)
    est, se = frac.mean(axis=0), frac.std(axis=0, ddof=1) / math.sqrt(frac.shape[0])
    keep = (dens.masses >= 1e-5) & (se > 0)
    z = np.abs(est[keep] - dens.masses[keep]) / se[keep]
    return float(z.max()) <= 5.0, {"max_z": float(z.max()), "mean_z": float(z.mean()),
                                   "cells": int(keep.sum())}


def inv_duality(scale=1.0):
    params, op, dens = model(0.5)
    phi = ItemALipschitz.from_params(params)
    g = dens.grid
    pushed = op.push(g.midpoints * dens.masses)
    by_operator = float(np.dot(phi(g.midpoints), pushed))
    rng = mc.rng_stream(SEED, 4, 0)
    cfg = mc.SimulationConfig(params, trials=1, burn_in=20, density=dens)
    x = mc.sample_stationary(cfg, rng, _trials(1e6, scale))
    vals = phi(map_array(params, x)) * x
    by_orbit = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    tol = 5.0 * se + 1e-3
    return abs(by_orbit - by_operator) <= tol, {"operator": by_operator, "orbit": by_orbit,
                                                "tolerance": tol}


def inv_refinement():
    params, _, d1 = model(0.5, 4096)
    _, _, d2 = model(0.5, 8192)
    f = ItemALipschitz.from_params(params)
    delta = abs(integrate(f, d1) - integrate(f, d2))
    return delta < 1e-4, {"delta": delta}


def inv_correlation_bounds():
    params, op, dens = model(0.5)
    f = ItemALipschitz.from_params(params)
    g = LogPower(1.0)
    cov = correlation_series(op, dens, f, 300)
    fm, gm = f(dens.grid.midpoints), g(dens.grid.midpoints)
    w = dens.masses
    c_fg = np.dot(fm - np.dot(fm, w), (gm - np.dot(gm, w)) * w)
    c_gf = np.dot(gm - np.dot(gm, w), (fm - np.dot(fm, w)) * w)
    ok = cov[0] > 0 and bool(np.all(np.abs(cov) <= cov[0] * (1 + 1e-12)))
    ok &= abs(c_fg - c_gf) <= 1e-12 * max(1.0, abs(c_fg))
    return ok, {"cov0": float(cov[0]), "max_ratio": float(np.max(np.abs(cov[1:]) / cov[0]))}


def inv_determinism(scale=1.0):
    params, _, dens = model(0.5)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    cells = [(n, n * obs.nu_mean / 2) for n in (10, 20, 30)]
    runs = []
    for threads in (1, 3):
        cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(3e5, scale), batch_size=1 << 15,
                                  density=dens, threads=threads)
        runs.append(mc.deviation_cells(cfg, obs, cells))
    return runs[0] == runs[1], {}


def inv_ci_calibration():
    params = MapParams(1.0)
    obs = centered_identity().with_mean(0.0)
    tail_in = dev_in = 0
    for seed in range(100):
        cfg = mc.SimulationConfig(params, seed=seed, trials=2000, sampling="lebesgue")
        r = mc.empirical_return_tail(cfg, 3)[2]
        tail_in += r.ci_low <= 0.25 <= r.ci_high
        d = mc.deviation_cell(cfg, obs, 1, 0.3)
        dev_in += d.ci_low <= 0.4 <= d.ci_high
    return tail_in >= 90 and dev_in >= 90, {"tail_coverage": tail_in, "deviation_coverage": dev_in}


def inv_stationarity(scale=1.0):
    params, _, dens = model(0.5)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    recs = []
    for seed, burn in ((11, 0), (12, 100)):
        cfg = mc.SimulationConfig(params, seed=seed, trials=_trials(1e6, scale), burn_in=burn,
                                  density=dens)
        recs.append(mc.deviation_cell(cfg, obs, 20, 20 * obs.nu_mean / 2))
    a, b = recs
    overlap = a.ci_low <= b.ci_high and b.ci_low <= a.ci_high
    return overlap, {"p_no_burn": a.p_hat, "p_burn_100": b.p_hat}


def inv_threshold_monotone(scale=1.0):
    params, _, dens = model(0.5)
    obs = with_mean(ItemALipschitz.from_params(params), dens)
    cfg = mc.SimulationConfig(params, seed=SEED, trials=_trials(2e5, scale), density=dens)
    recs = mc.deviation_cells(cfg, obs, [(20, t) for t in np.linspace(0.25, 6.0, 24)])
    p = [r.p_hat for r in recs]
    return all(a >= b for a, b in zip(p, p[1:])), {"p": p}


def inv_synthetic_fit():
    worst, shift = 0.0, 0.0
    n = np.arange(10.0, 201.0, 5.0)
    for a in (0.05, 0.5, 2.0):
        for b in (0.1, 0.5, 1.0, 1.5):
            logp = -a * n ** b
            keep = logp > -700.0
            series = np.column_stack([n[keep], np.exp(logp[keep])])
            fit = analysis.fit_stretched_exponent(series)
            worst = max(worst, fit.max_residual)
            half = analysis.fit_stretched_exponent(series[::2])
            shift = max(shift, abs(half.exponent - fit.exponent))
    return worst <= 1e-12 and shift <= 0.02, {"max_residual": worst, "subsample_shift": shift}


def inv_provenance():
    """The nu(J_n) column of the bounded check does not move with the MC records."""
    params, _, dens = model(0.5)
    geo = compute_geometry(params, 100)
    nu_f = integrate(ItemALipschitz.from_params(params), dens)
    ns = range(10, 61, 5)
    fake = [[mc.make_record(n, n * nu_f / 2, h, 10**6) for n in ns] for h in (10**5, 10**4)]
    cols = []
    for recs in fake:
        try:
            rep = analysis.check_thm_opt_a(params, geo, recs, dens, nu_f)
        except InsufficientPointsError:
            return False, {}
        cols.append([row["nu_J"] for row in rep.table])
    direct = [dens.mass(*geo.J(n)) for n in ns]
    return cols[0] == cols[1] == direct, {}


def inv_cli_artifacts():
    from .cli import main
    from .io import csv_body

    bodies, headers_ok = [], True
    with tempfile.TemporaryDirectory() as tmp:
        for threads in ("1", "3"):
            out = f"{tmp}/t{threads}"
            for argv in (["deviation", "--gamma", "0.5", "--obs", "item-a", "--trials", "100000",
                          "--n", "10:30:5", "--seed", "7"],
                         ["tails", "--gamma", "0.5", "--n-max", "40", "--trials", "100000"]):
                code = main(argv + ["--threads", threads, "--out", out, "--quiet"])
                if code not in (0, 3):
                    return False, {"exit": code}
            for stem in ("deviation", "tails"):
                text = open(f"{out}/{stem}.csv").read()
                lines = text.splitlines()
                headers_ok &= lines[0].startswith("# manifest ") and "[" in lines[1]
                bodies.append(csv_body(text))
    same = bodies[:2] == bodies[2:]
    return same and headers_ok, {"identical": same, "headers": headers_ok}


INVARIANTS = {
    "map.branch_consistency": inv_branch_consistency,
    "map.monotonicity": inv_monotone,
    "map.geometry_tail_identity": inv_geometry_tail,
    "map.return_one_cell": inv_return_one,
    "map.induced_expansion": inv_induced_axioms,
    "obs.lipschitz_sweep": inv_lipschitz_sweep,
    "obs.truncation_limit": inv_truncation_limit,
    "obs.nu_mean_bounds": inv_nu_mean,
    "obs.laminar_identity": inv_laminar_identity,
    "transfer.cross_method_density": inv_cross_density,
    "transfer.operator_duality": inv_duality,
    "transfer.refinement": inv_refinement,
    "transfer.correlation_bounds": inv_correlation_bounds,
    "mc.determinism": inv_determinism,
    "mc.ci_calibration": inv_ci_calibration,
    "mc.stationarity": inv_stationarity,
    "mc.threshold_monotone": inv_threshold_monotone,
    "analysis.synthetic_fit": inv_synthetic_fit,
    "analysis.provenance": inv_provenance,
    "cli.artifacts": inv_cli_artifacts,
}

_SCALED = {"map.geometry_tail_identity", "transfer.cross_method_density",
           "transfer.operator_duality", "mc.determinism", "mc.stationarity",
           "mc.threshold_monotone"}


def run_invariant(name, scale=1.0):
    fn = INVARIANTS[name]

    def run():
        ok, details = fn(scale) if name in _SCALED else fn()
        return ok, details, {}
    return _timed(name, "invariant", run)


def criterion_9(scale=1.0):
    def run():
        results = [run_invariant(name, scale) for name in INVARIANTS]
        parts = {r.key: r.passed for r in results}
        details = {r.key: r.details for r in results}
        return all(parts.values()), details, parts
    return _timed("9", "determinism and invariant suites", run)


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4,
    "5": criterion_5, "6": criterion_6, "7": criterion_7, "8": criterion_8,
    "9": criterion_9,
}


def run_all(keys=None, scale=1.0, report=print):
    results = []
    for key in keys or CRITERIA:
        res = CRITERIA[key](scale)
        if report is not None:
            report(res.line())
            for name, ok in res.parts.items():
                report(f"      {'ok ' if ok else 'BAD'}  {name}")
        results.append(res)
    return results
