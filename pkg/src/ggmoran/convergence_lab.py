"""Monte Carlo checks of the limit theorems on finite-dimensional marginals.

Replicates are split into fixed-size blocks.  Every block owns a seed derived
from ``(seed, block)``, so results do not depend on how many workers run them.
Within a block, the initial values, chain noise and diffusion noise come from
separate named streams.  Runs that share a seed therefore share their
initial law exactly.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .diffusion import DiffusionSpec, invariant_sample, simulate_ensemble
from .errors import DomainError, InsufficientSampleError
from .moran import ctmc_paths, initial_k, kchain_paths, moran_k_ensemble, rescaled_step_index
from .partition import alpha_diversity_samples
from .urn_weights import GGParams

METRICS = ("KS", "W1")
BLOCK = 2500

# stream tags within a block
_INIT, _CHAIN, _DIFF, _CTMC = 0, 1, 2, 3


# --------------------------------------------------------------------------
# distances


def _ecdf_grid(a: np.ndarray, b: np.ndarray):
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InsufficientSampleError("empirical distance needs two nonempty samples")
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return grid, fa, fb


def empirical_distance(sample_a, sample_b, metric: str = "KS") -> float:
    """Kolmogorov-Smirnov or Wasserstein-1 distance of two empirical laws."""
    if metric not in METRICS:
        raise DomainError(f"metric must be one of {METRICS}, got {metric!r}")
    grid, fa, fb = _ecdf_grid(sample_a, sample_b)
    gap = np.abs(fa - fb)
    if metric == "KS":
        return float(gap.max())
    return float(np.sum(gap[:-1] * np.diff(grid)))


def ks_to_cdf(sample, cdf) -> float:
    """One-sample KS distance to a continuous CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size == 0:
        raise InsufficientSampleError("empty sample")
    f = np.asarray(cdf(x), dtype=float)
    n = x.size
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))


def split_half_floor(sample, metric: str = "KS") -> float:
    """Distance between the two halves of one sample, the Monte Carlo floor."""
    x = np.asarray(sample).ravel()
    h = x.size // 2
    if h == 0:
        raise InsufficientSampleError("need at least two observations for a noise floor")
    return empirical_distance(x[:h], x[h:2 * h], metric)


def total_variation(a, b) -> float:
    """TV distance of the empirical laws of two integer samples."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise InsufficientSampleError("empty sample")
    m = int(max(a.max(), b.max())) + 1
    pa = np.bincount(a, minlength=m) / a.size
    pb = np.bincount(b, minlength=m) / b.size
    return 0.5 * float(np.abs(pa - pb).sum())


@dataclass(frozen=True)
class DistanceTable:
    axis_name: str
    axis: tuple
    times: tuple
    distances: np.ndarray
    metric: str
    replicates: int
    seed: int
    noise_floor: np.ndarray
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        if d.shape != (len(self.axis), len(self.times)):
            raise DomainError("distance matrix must be axis x times")
        if np.any(d < 0):
            raise DomainError("distances must be nonnegative")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "noise_floor", np.asarray(self.noise_floor, dtype=float))

    def column(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.distances[:, j]

    def trend_holds(self, t: float, strict: bool = False) -> bool:
        """Monotone along the axis at time ``t``, up to one noise floor.

        ``strict`` asks for each drop to exceed the floor instead.
        """
        col = self.column(t)
        if col.size < 2:
            return True
        floor = float(self.noise_floor[int(np.argmin(np.abs(np.asarray(self.times) - t)))])
        steps = np.diff(col)
        return bool(np.all(steps < -floor) if strict else np.all(steps <= floor))

    def to_dict(self) -> dict:
        return {"axis_name": self.axis_name, "axis": list(self.axis), "times": list(self.times),
                "distances": self.distances.tolist(), "metric": self.metric,
                "replicates": self.replicates, "seed": self.seed,
                "noise_floor": self.noise_floor.tolist(), "spec": self.spec}

    def csv_rows(self):
        for i, a in enumerate(self.axis):
            for j, t in enumerate(self.times):
                yield a, t, self.distances[i, j], self.noise_floor[j]


# --------------------------------------------------------------------------
# block-seeded parallel runner


def _stream(seed: int, block: int, *tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, *tag)))


def _block_sizes(replicates: int, block: int = BLOCK) -> list[int]:
    if replicates < 1:
        raise DomainError("replicates must be positive")
    full, rest = divmod(replicates, block)
    return [block] * full + ([rest] if rest else [])


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_blocks(fn, replicates: int, seed: int, workers: int | None = None) -> list:
    """``fn(block_index, block_size, seed)`` over all blocks, in block order."""
    sizes = _block_sizes(replicates)
    workers = default_workers() if workers is None else workers
    jobs = list(enumerate(sizes))
    if workers <= 1 or len(jobs) == 1:
        return [fn(b, size, seed) for b, size in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(fn, b, size, seed) for b, size in jobs]
        return [f.result() for f in futures]


def _concat(results, key):
    return np.concatenate([r[key] for r in results], axis=-1)


def _table(axis_name, axis, times, samples, reference, metric, replicates, seed, spec) -> DistanceTable:
    dist = np.array([[empirical_distance(s[j], reference[j], metric) for j in range(len(times))]
                     for s in samples])
    floor = np.array([split_half_floor(reference[j], metric) for j in range(len(times))])
    return DistanceTable(axis_name, tuple(axis), tuple(float(t) for t in times), dist, metric,
                         replicates, seed, floor, spec)


# --------------------------------------------------------------------------
# experiments


def _scaling_block(block, size, seed, *, n_list, times, params, mode, dt_ref):
    s0 = alpha_diversity_samples(params, size, _stream(seed, block, _INIT))
    out = {}
    for n in n_list:
        steps = rescaled_step_index(n, params.alpha, times)
        k = kchain_paths(n, initial_k(s0, n, params.alpha), steps, params, mode,
                         _stream(seed, block, _CHAIN, n))
        out[f"chain{n}"] = k / n ** params.alpha
    spec = DiffusionSpec(params, 0.0, dt=dt_ref, horizon=max(max(times), dt_ref), s0=s0)
    out["diffusion"] = simulate_ensemble(spec, size, _stream(seed, block, _DIFF), times)[1]
    return out


def scaling_experiment(n_list, time_grid, params: GGParams, replicates: int, mode: str = "approx",
                       seed: int = 0, metric: str = "W1", dt_ref: float = 1e-4,
                       workers: int | None = 1) -> DistanceTable:
    """Rescaled reduced chain against the limit diffusion, marginal by marginal.

    Both start from ``S(0)`` distributed as the alpha-diversity, sharing the
    draws: the chain starts at ``round(s0 n^alpha)``.
    """
    times = [float(t) for t in time_grid]
    n_list = [int(n) for n in n_list]
    fn = partial(_scaling_block, n_list=n_list, times=times, params=params, mode=mode, dt_ref=dt_ref)
    res = run_blocks(fn, replicates, seed, workers)
    ref = _concat(res, "diffusion")
    samples = [_concat(res, f"chain{n}") for n in n_list]
    spec = {"experiment": "scaling", "alpha": params.alpha, "beta": params.beta, "mode": mode,
            "dt_ref": dt_ref, "block": BLOCK}
    return _table("n", n_list, times, samples, ref, metric, replicates, seed, spec)


def _gamma_block(block, size, seed, *, gamma_list, times, params, dt):
    s0 = alpha_diversity_samples(params, size, _stream(seed, block, _INIT))
    horizon = max(max(times), dt)
    out = {"limit": simulate_ensemble(DiffusionSpec(params, 0.0, dt=dt, horizon=horizon, s0=s0),
                                      size, _stream(seed, block, _DIFF), times)[1]}
    for g in gamma_list:
        spec = DiffusionSpec(params, g, dt=dt, horizon=horizon, s0=s0)
        out[f"g{g!r}"] = simulate_ensemble(spec, size, _stream(seed, block, _DIFF), times, generic=True)[1]
    return out


def gamma_limit_experiment(gamma_list, time_grid, params: GGParams, replicates: int, seed: int = 0,
                           metric: str = "W1", dt: float = 1e-3, workers: int | None = 1) -> DistanceTable:
    """``S_gamma`` against ``S`` with shared initial values and shared noise."""
    times = [float(t) for t in time_grid]
    gamma_list = [float(g) for g in gamma_list]
    fn = partial(_gamma_block, gamma_list=gamma_list, times=times, params=params, dt=dt)
    res = run_blocks(fn, replicates, seed, workers)
    ref = _concat(res, "limit")
    samples = [_concat(res, f"g{g!r}") for g in gamma_list]
    spec = {"experiment": "gamma_limit", "alpha": params.alpha, "beta": params.beta, "dt": dt,
            "block": BLOCK}
    return _table("gamma", gamma_list, times, samples, ref, metric, replicates, seed, spec)


def gamma_reduction_paths(params: GGParams, replicates: int = 100, seed: int = 0, dt: float = 1e-3,
                          horizon: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """The same ensemble through the limit and the generic integrator at ``gamma = 0``."""
    s0 = alpha_diversity_samples(params, replicates, _stream(seed, 0, _INIT))
    spec = DiffusionSpec(params, 0.0, dt=dt, horizon=horizon, s0=s0)
    times = np.linspace(0.0, horizon, 11)
    a = simulate_ensemble(spec, replicates, _stream(seed, 0, _DIFF), times)[1]
    b = simulate_ensemble(spec, replicates, _stream(seed, 0, _DIFF), times, generic=True)[1]
    return a, b


def _ctmc_block(block, size, seed, *, n_list, gamma, times, params, dt_ref):
    s0 = alpha_diversity_samples(params, size, _stream(seed, block, _INIT))
    out = {}
    for n in n_list:
        scale = float(n) ** (1 + params.alpha)
        k = ctmc_paths(n, initial_k(s0, n, params.alpha), np.asarray(times) * scale, params, gamma,
                       _stream(seed, block, _CTMC, n))
        out[f"chain{n}"] = k / n ** params.alpha
    spec = DiffusionSpec(params, gamma, dt=dt_ref, horizon=max(max(times), dt_ref), s0=s0)
    out["diffusion"] = simulate_ensemble(spec, size, _stream(seed, block, _DIFF), times)[1]
    return out


def ctmc_limit_experiment(n_list, gamma: float, time_grid, params: GGParams, replicates: int,
                          seed: int = 0, metric: str = "W1", dt_ref: float = 1e-4,
                          workers: int | None = 1) -> DistanceTable:
    """Rescaled continuous-time chain ``K(n^(1+alpha) t) / n^alpha`` against ``S_gamma``."""
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    times = [float(t) for t in time_grid]
    n_list = [int(n) for n in n_list]
    fn = partial(_ctmc_block, n_list=n_list, gamma=gamma, times=times, params=params, dt_ref=dt_ref)
    res = run_blocks(fn, replicates, seed, workers)
    ref = _concat(res, "diffusion")
    samples = [_concat(res, f"chain{n}") for n in n_list]
    spec = {"experiment": "ctmc_limit", "alpha": params.alpha, "beta": params.beta, "gamma": gamma,
            "dt_ref": dt_ref, "block": BLOCK}
    return _table("n", n_list, times, samples, ref, metric, replicates, seed, spec)


def ctmc_drift_check(n: int, gamma: float, params: GGParams, s_start: float = 2.0, t: float = 0.2,
                     replicates: int = 100_000, seed: int = 0) -> tuple[float, float, float]:
    """Observed rescaled drift of the chain against ``beta / s^(1/alpha)``.

    All replicates start at ``round(s_start n^alpha)``.  Returns
    ``(observed, predicted, standard error)``.  Away from ``k = 1`` the rate
    difference is ``beta / k^(1/alpha)``, so the prediction is the time
    average of the ensemble mean of ``beta / s^(1/alpha)``.
    """
    k0 = np.full(replicates, initial_k(s_start, n, params.alpha))
    scale = float(n) ** (1 + params.alpha)
    grid = np.linspace(0.0, t, 21)
    k = ctmc_paths(n, k0, grid * scale, params, gamma, _stream(seed, 0, _CTMC, n))
    x = k / n ** params.alpha
    disp = (x[-1] - x[0]) / t
    drift = (params.beta * x ** (-1.0 / params.alpha)).mean(axis=1)
    pred = float(np.sum((drift[1:] + drift[:-1]) * np.diff(grid)) / 2.0) / t
    return float(disp.mean()), float(pred), float(disp.std(ddof=1) / math.sqrt(replicates))


@dataclass(frozen=True)
class StationarityReport:
    n: int
    checkpoints: tuple[int, ...]
    tv: tuple[float, ...]
    noise_floor: float
    replicates: int
    seed: int
    initial: str

    def to_dict(self) -> dict:
        return {"n": self.n, "checkpoints": list(self.checkpoints), "tv": list(self.tv),
                "noise_floor": self.noise_floor, "replicates": self.replicates,
                "seed": self.seed, "initial": self.initial}


def _moran_block(block, size, seed, *, n, checkpoints, params, initial):
    return {"k": moran_k_ensemble(n, max(checkpoints), params, "exact", size,
                                  _stream(seed, block, _CHAIN), checkpoints, initial)}


def stationarity_experiment(n: int, steps: int, params: GGParams, replicates: int, seed: int = 0,
                            checkpoints=None, initial: str = "urn",
                            workers: int | None = 1) -> StationarityReport:
    """TV distance between the step-0 law of ``K`` and its law at later steps.

    The floor is the split-half TV of the step-0 sample.  With
    ``initial="distinct"`` the comparison is against the exact law of ``K_n``
    from a stationary urn sample instead, so the relaxation shows.
    """
    if checkpoints is None:
        checkpoints = sorted({0, steps // 4, steps // 2, steps})
    checkpoints = sorted({int(c) for c in checkpoints} | {0})
    if checkpoints[-1] > steps:
        raise DomainError("checkpoints must not exceed steps")
    if steps == 0:
        checkpoints = [0]
    fn = partial(_moran_block, n=n, checkpoints=checkpoints, params=params, initial=initial)
    k = _concat(run_blocks(fn, replicates, seed, workers), "k")
    if initial == "urn":
        base = k[0]
    else:
        fn0 = partial(_moran_block, n=n, checkpoints=[0], params=params, initial="urn")
        base = _concat(run_blocks(fn0, replicates, seed + 1, workers), "k")[0]
    floor_sample = np.asarray(base)
    h = floor_sample.size // 2
    floor = total_variation(floor_sample[:h], floor_sample[h:2 * h]) if h else 0.0
    tv = tuple(total_variation(base, row) for row in k)
    return StationarityReport(n, tuple(checkpoints), tv, floor, replicates, seed, initial)


def tail_exponent_estimate(sample, tail_fraction: float = 0.01) -> float:
    """Hill estimate of the density exponent ``1 + a`` for a tail ``x^-(1+a)``.

    ``a`` is the reciprocal of the mean log-excess over the top
    ``tail_fraction`` of the sample.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 10_000:
        raise InsufficientSampleError(f"need at least 10^4 observations, got {x.size}")
    if not 0 < tail_fraction < 1:
        raise DomainError("tail_fraction must lie in (0, 1)")
    if np.any(x <= 0):
        raise DomainError("sample must be positive")
    k = max(int(math.ceil(tail_fraction * x.size)), 2)
    top = np.sort(x)[-(k + 1):]
    log_excess = np.log(top[1:]) - math.log(top[0])
    xi = float(log_excess.mean())
    if not xi > 0:
        raise DomainError("degenerate tail: zero log-spacings")
    return 1.0 + 1.0 / xi


def _stationary_block(block, size, seed, *, params, gamma, dt, horizon, record):
    s0 = invariant_sample(params, gamma, size, _stream(seed, block, _INIT))
    spec = DiffusionSpec(params, gamma, dt=dt, horizon=horizon, s0=s0)
    return {"s": simulate_ensemble(spec, size, _stream(seed, block, _DIFF), record)[1]}


def stationary_occupation(params: GGParams, gamma: float, replicates: int, horizon: float,
                          record_every: float, dt: float = 1e-3, seed: int = 0,
                          workers: int | None = 1) -> np.ndarray:
    """Pooled occupation sample of paths started from the invariant law.

    States are recorded at multiples of ``record_every`` in ``(0, horizon]``.
    """
    record = np.arange(1, int(round(horizon / record_every)) + 1) * record_every
    fn = partial(_stationary_block, params=params, gamma=gamma, dt=dt, horizon=horizon, record=record)
    return _concat(run_blocks(fn, replicates, seed, workers), "s").ravel()


EXPERIMENTS = ("scaling", "gamma_limit", "ctmc_limit", "stationarity", "invariant")

__all__ = [
    "METRICS", "DistanceTable", "StationarityReport", "empirical_distance", "ks_to_cdf",
    "split_half_floor", "total_variation", "run_blocks", "default_workers", "scaling_experiment",
    "gamma_limit_experiment", "gamma_reduction_paths", "ctmc_limit_experiment", "ctmc_drift_check",
    "stationarity_experiment", "tail_exponent_estimate", "stationary_occupation", "EXPERIMENTS",
]
