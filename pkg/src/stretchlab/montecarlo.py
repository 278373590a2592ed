"""Reproducible batched Monte Carlo over orbits of the map.

Every batch draws from its own Philox stream keyed by ``(seed, stream,
batch_index)``; batches may run on any number of threads and are reduced in
batch order, so results do not depend on the worker count.

The right branch ``2x - 1`` leaves its image on a grid of spacing 2**-52.
Orbit iteration refills that gap with a uniform draw rounded down, so the
image is uniform at full float resolution.  Without it, float orbits of the
doubling map collapse to 0 after about 53 steps; rounding the refill to
nearest instead would skew the low bits and bias long orbits.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import enum
import math

import numpy as np

from .exceptions import ConfigurationError, OrbitDegenerateError
from .map_core import MapParams, _left_branch, apply_map, return_times

REFILL = 2.0 ** -52
WILSON_Z = 1.959963984540054


class Sampling(str, enum.Enum):
    INVERSE_CDF = "inverse-cdf"
    LEBESGUE = "lebesgue"


class Mode(str, enum.Enum):
    ABSOLUTE = "absolute"
    ONE_SIDED = "one-sided"
    RUNNING_MAX = "running-max"


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo settings.

    ``density`` is required for inverse-CDF sampling; ``burn_in`` iterations
    are applied after the initial draw in both sampling modes.
    """

    params: MapParams
    seed: int = 0
    trials: int = 1_000_000
    batch_size: int = 1 << 18
    burn_in: int = 0
    sampling: Sampling = Sampling.INVERSE_CDF
    density: object = field(default=None, repr=False, compare=False)
    threads: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.trials < 1 or self.batch_size < 1:
            raise ConfigurationError("trials and batch_size must be >= 1")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def batch_sizes(self):
        full, rest = divmod(self.trials, self.batch_size)
        return [self.batch_size] * full + ([rest] if rest else [])


def rng_stream(seed, stream, batch):
    """Counter-based generator for one batch of one stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(batch)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DeviationRecord:
    n: int
    threshold: float
    trials: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float

    @property
    def stderr(self):
        return math.sqrt(self.p_hat * (1.0 - self.p_hat) / self.trials)

    def as_row(self):
        return (self.n, self.threshold, self.trials, self.hits,
                self.p_hat, self.ci_low, self.ci_high)


RECORD_COLUMNS = ("n", "threshold", "trials", "hits", "p_hat", "ci_low", "ci_high")


def wilson_interval(hits, trials, z=WILSON_Z):
    p = hits / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


def make_record(n, threshold, hits, trials):
    hits, trials = int(hits), int(trials)
    lo, hi = wilson_interval(hits, trials)
    return DeviationRecord(n=int(n), threshold=float(threshold), trials=trials,
                           hits=hits, p_hat=hits / trials, ci_low=lo, ci_high=hi)


def _add_down(a, r):
    """``a + r`` rounded toward zero, for ``a >= 0`` and small ``r >= 0``."""
    y = a + r
    return np.where((y - a) > r, np.nextafter(y, 0.0), y)


def uniform_start(rng, size):
    """Uniform points in (0, 1) with random bits down to the float grid."""
    x = _add_down(rng.random(size), 2.0 ** -53 * rng.random(size))
    return np.where(x > 0.0, x, np.nextafter(0.0, 1.0))


def step_refill(params, x, rng):
    """One map step on an array with the right-branch low-bit refill."""
    right = x > 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        left_val = _left_branch(x, params.beta, params.c)
    refilled = _add_down(2.0 * x - 1.0, REFILL * rng.random(x.shape))
    return np.where(right, refilled, left_val)


def sample_stationary(config, rng, size):
    """Draw ``size`` points approximately distributed as the invariant measure."""
    if config.sampling is Sampling.INVERSE_CDF:
        if config.density is None:
            raise ConfigurationError("inverse-CDF sampling needs a density estimate")
        x = config.density.inverse_cdf(rng.random(size), rng.random(size))
    else:
        x = uniform_start(rng, size)
    for _ in range(config.burn_in):
        x = step_refill(config.params, x, rng)
    return x


def birkhoff_sum(params, obs, x0, n):
    """Centered Birkhoff sum ``sum_{k<n} f(T^k x0) - n nu(f)`` along one orbit."""
    if obs.nu_mean is None:
        raise ConfigurationError("observable has no nu_mean; integrate it first")
    if n < 1:
        raise ValueError("n must be >= 1")
    x = float(x0)
    vals = []
    for _ in range(int(n)):
        if not 0.0 < x < 1.0:
            raise OrbitDegenerateError(f"orbit from {x0!r} reached the fixed point {x}")
        vals.append(obs(x))
        x = apply_map(params, x)
    vals.append(-n * obs.nu_mean)
    return math.fsum(vals)


def _orbit_sums(config, obs, x, n_max, rng, checkpoints):
    """Kahan-summed centered partial sums along a batch of orbits.

    Returns ``{n: (S_n, max_{j<=n} |S_j|)}`` for each checkpoint.
    """
    nu = obs.nu_mean
    s = np.zeros_like(x)
    comp = np.zeros_like(x)
    runmax = np.zeros_like(x)
    want = set(checkpoints)
    out = {}
    for j in range(1, n_max + 1):
        y = (obs._eval(x) - nu) - comp
        t = s + y
        comp = (t - s) - y
        s = t
        np.maximum(runmax, np.abs(s), out=runmax)
        if j in want:
            out[j] = (s.copy(), runmax.copy())
        if j < n_max:
            x = step_refill(config.params, x, rng)
    if np.any(x <= 0.0) or np.any(x > 1.0):
        raise OrbitDegenerateError("an orbit reached the fixed point 0")
    return out


def _map_batches(config, fn, stream):
    sizes = config.batch_sizes
    jobs = [(stream, b, size) for b, size in enumerate(sizes)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))
    return [fn(*job) for job in jobs]


def _check_obs(obs):
    if obs.nu_mean is None:
        raise ConfigurationError("observable has no nu_mean; integrate it first")


def _event_hits(S, M, threshold, mode):
    if mode is Mode.ABSOLUTE:
        return int(np.count_nonzero(np.abs(S) > threshold))
    if mode is Mode.ONE_SIDED:
        return int(np.count_nonzero(S >= threshold))
    return int(np.count_nonzero(M >= threshold))


def deviation_cells(config, obs, cells, mode=Mode.ABSOLUTE, stream=0):
    """Estimate several ``(n, threshold)`` cells on one shared trajectory set."""
    _check_obs(obs)
    mode = Mode(mode)
    cells = [(int(n), float(t)) for n, t in cells]
    if not cells:
        return []
    if any(t <= 0.0 for _, t in cells):
        raise ConfigurationError("thresholds must be positive")
    if any(n < 1 for n, _ in cells):
        raise ConfigurationError("n must be >= 1")
    ns = sorted({n for n, _ in cells})
    n_max = ns[-1]

    def batch(stream, b, size):
        rng = rng_stream(config.seed, stream, b)
        x = sample_stationary(config, rng, size)
        sums = _orbit_sums(config, obs, x, n_max, rng, ns)
        return [_event_hits(*sums[n], t, mode) for n, t in cells]

    per_batch = _map_batches(config, batch, stream)
    totals = np.sum(np.array(per_batch, dtype=np.int64), axis=0)
    return [make_record(n, t, h, config.trials) for (n, t), h in zip(cells, totals)]


def deviation_cell(config, obs, n, threshold, mode=Mode.ABSOLUTE):
    return deviation_cells(config, obs, [(n, threshold)], mode)[0]


def mdp_threshold(n, a_n, x):
    return x * math.sqrt(n / a_n)


def mdp_cells(config, obs, ns, theta, x):
    """Cells ``nu(sqrt(a_n / n) S_n >= x)`` with ``a_n = n ** -theta``."""
    if not x > 0:
        raise ConfigurationError("x must be positive for a one-sided event")
    cells = []
    for n in ns:
        a_n = float(n) ** (-theta)
        if not 0.0 < a_n < 1.0:
            raise ConfigurationError("a_n must lie in (0, 1)")
        cells.append((n, mdp_threshold(n, a_n, x)))
    return deviation_cells(config, obs, cells, Mode.ONE_SIDED)


def mdp_cell(config, obs, n, a_n, x):
    if not x > 0:
        raise ConfigurationError("x must be positive for a one-sided event")
    if not 0.0 < a_n < 1.0:
        raise ConfigurationError("a_n must lie in (0, 1)")
    return deviation_cells(config, obs, [(n, mdp_threshold(n, a_n, x))], Mode.ONE_SIDED)[0]


def running_max_samples(config, obs, n, stream=0):
    """``K = max_{j<=n} |S_j|`` for every trial of one stream."""
    _check_obs(obs)

    def batch(stream, b, size):
        rng = rng_stream(config.seed, stream, b)
        x = sample_stationary(config, rng, size)
        return _orbit_sums(config, obs, x, n, rng, [n])[n][1]

    return np.concatenate(_map_batches(config, batch, stream))


@dataclass(frozen=True)
class ConcentrationSample:
    n: int
    K: np.ndarray
    mean_K: float
    pilot: np.ndarray = field(default=None, repr=False)

    def t_grid(self, p_high=0.3, p_low=1e-5, points=16):
        """Thresholds at pilot-stream quantiles of ``K - E(K)``.

        Tail levels are geometric from ``p_high`` down to ``p_low``; ties from
        atoms of ``K`` are merged.
        """
        levels = np.geomspace(p_high, p_low, points)
        t = np.quantile(self.pilot - self.mean_K, 1.0 - levels)
        return [float(v) for v in np.unique(t[t > 0.0])]

    def record(self, t):
        hits = np.count_nonzero(self.K - self.mean_K >= t)
        return make_record(self.n, t, hits, self.K.size)


def concentration_sample(config, obs, n):
    """Main-stream ``K`` values and ``E(K)`` from an independent pilot stream."""
    if obs.lipschitz_constant is None:
        raise ConfigurationError("concentration needs a Lipschitz observable")
    pilot = running_max_samples(config, obs, n, stream=1)
    main = running_max_samples(config, obs, n, stream=0)
    return ConcentrationSample(n=int(n), K=main, mean_K=math.fsum(pilot) / pilot.size, pilot=pilot)


def concentration_cells(config, obs, n, ts):
    sample = concentration_sample(config, obs, n)
    return [sample.record(t) for t in ts]


def concentration_cell(config, obs, n, t):
    return concentration_cells(config, obs, n, [t])[0]


def uniform_base_starts(rng, size):
    """Uniform points in the open interval (1/2, 1)."""
    y = 0.5 + 0.5 * rng.random(size)
    return np.where(y <= 0.5, np.nextafter(0.5, 1.0), y)


def empirical_return_tail(config, n_max):
    """Records ``m(R >= n)`` for ``n = 1..n_max`` from uniform starts on the base."""
    if n_max < 2:
        raise ConfigurationError("n_max must be >= 2")

    def batch(stream, b, size):
        rng = rng_stream(config.seed, stream, b)
        times, _ = return_times(config.params, uniform_base_starts(rng, size))
        counts = np.bincount(np.minimum(times, n_max + 1), minlength=n_max + 2)
        return counts

    counts = np.sum(np.array(_map_batches(config, batch, 2)), axis=0)
    # hits for R >= n: reverse cumulative sum over n
    at_least = np.cumsum(counts[::-1])[::-1]
    return [make_record(n, n, at_least[n], config.trials) for n in range(1, n_max + 1)]


def orbit_histogram(config, grid, orbits, steps, groups):
    """Cell counts of long orbits, split into ``groups`` blocks of orbits.

    Orbits start from Lebesgue measure and run ``config.burn_in`` steps
    before counting.  Returns an integer array of shape ``(groups, n_cells)``.
    """
    if orbits % groups:
        raise ConfigurationError("orbits must be a multiple of groups")
    rng = rng_stream(config.seed, 3, 0)
    x = uniform_start(rng, orbits)
    for _ in range(config.burn_in):
        x = step_refill(config.params, x, rng)
    M = grid.n_cells
    offset = np.repeat(np.arange(groups) * M, orbits // groups)
    counts = np.zeros(groups * M, dtype=np.int64)
    done = 0
    while done < steps:
        k = min(100, steps - done)
        idx = np.empty((k, orbits), dtype=np.int64)
        for j in range(k):
            idx[j] = offset + grid.locate(x)
            x = step_refill(config.params, x, rng)
        counts += np.bincount(idx.ravel(), minlength=groups * M)
        done += k
    return counts.reshape(groups, M)
