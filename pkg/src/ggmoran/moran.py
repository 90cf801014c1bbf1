"""Moran-type population dynamics and the cluster-count chains they induce.

Three levels of description:

* the particle chain on type vectors (``moran_step``, ``moran_k_ensemble``);
* the reduced discrete-time chain for the number of types, which replaces
  the singleton count by ``alpha K`` to become Markov (``kchain_*``);
* the continuous-time birth-death chain with rates that make the stationary
  family appear in the limit (``ctmc_*``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientLengthError
from .partition import Partition, urn_block_sizes
from .urn_weights import EXACT_N_MAX, GGParams, approx_g0_raw, exact_weight_table

KCHAIN_MODES = ("m1_reduced", "approx")


@dataclass(frozen=True)
class PopulationState:
    types: tuple[int, ...]
    step: int = 0
    partition: Partition = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.types:
            raise DomainError("population must be nonempty")
        object.__setattr__(self, "types", tuple(int(t) for t in self.types))
        object.__setattr__(self, "partition", Partition.from_labels(self.types))

    @property
    def n(self) -> int:
        return len(self.types)


@dataclass(frozen=True)
class KChainState:
    """Number of types ``k`` in a population of size ``n``.

    The discrete chain keeps ``1 <= k <= n``; the continuous-time chain lives
    on all positive integers, so only ``k >= 1`` is enforced here.
    """

    n: int
    k: int
    step: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise DomainError(f"need n >= 1 and k >= 1, got n={self.n}, k={self.k}")


@dataclass(frozen=True)
class RescaledPath:
    times: np.ndarray
    values: np.ndarray
    n: int
    params: GGParams


def _new_prob(n_rest: int, k_rest, params: GGParams, mode: str):
    if mode == "exact":
        if n_rest > EXACT_N_MAX:
            raise DomainError(f"exact mode is limited to n <= {EXACT_N_MAX + 1}")
        g0, _ = exact_weight_table(max(n_rest, 1), params)
        return g0[n_rest, k_rest]
    if mode == "approx":
        k_rest = np.asarray(k_rest, dtype=float)
        with np.errstate(divide="ignore"):
            p = np.clip(approx_g0_raw(max(n_rest, 1), k_rest, params), 0.0, 1.0)
        return np.where(k_rest == 0, 1.0, p)
    raise DomainError(f"mode must be 'exact' or 'approx', got {mode!r}")


def moran_step(state: PopulationState, params: GGParams, mode: str,
               rng: np.random.Generator) -> PopulationState:
    """Replace one uniformly chosen individual by a draw from its full conditional.

    The replacement is a new type with probability ``g0(n-1, k_rest)`` and a
    copy of remaining type ``j`` with probability proportional to
    ``n_j - alpha``, where ``k_rest`` and ``n_j`` describe the other ``n - 1``
    individuals.
    """
    types = list(state.types)
    n = len(types)
    i = int(rng.integers(n))
    rest = types[:i] + types[i + 1:]
    labels, counts = np.unique(np.asarray(rest, dtype=np.int64), return_counts=True) if rest else ([], [])
    k_rest = len(labels)
    p_new = float(_new_prob(n - 1, k_rest, params, mode))
    if rng.random() < p_new:
        used = set(rest)
        new = 0
        while new in used:
            new += 1
    else:
        w = np.asarray(counts, dtype=float) - params.alpha
        j = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        new = int(labels[min(j, k_rest - 1)])
    types[i] = new
    return PopulationState(tuple(types), state.step + 1)


def initial_population(n: int, params: GGParams, mode: str, rng: np.random.Generator) -> PopulationState:
    """A population drawn from the stationary law (one urn sample)."""
    sizes = urn_block_sizes(n, params, mode, 1, rng)[0]
    types = np.repeat(np.arange(n), sizes)
    return PopulationState(tuple(int(t) for t in rng.permutation(types)))


def moran_k_ensemble(n: int, steps: int, params: GGParams, mode: str, replicates: int,
                     rng: np.random.Generator, checkpoints=None, initial: str = "urn") -> np.ndarray:
    """Run many independent particle chains; return ``K`` at each checkpoint.

    ``initial`` is ``"urn"`` (stationary start) or ``"distinct"`` (all types
    different).  The result has shape ``(len(checkpoints), replicates)``.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    checkpoints = np.asarray(sorted(set(checkpoints if checkpoints is not None else [0, steps])), dtype=int)
    if checkpoints.size and (checkpoints[0] < 0 or checkpoints[-1] > steps):
        raise DomainError("checkpoints must lie in [0, steps]")
    a = params.alpha
    r = replicates
    if initial == "urn":
        sizes = urn_block_sizes(n, params, mode, r, rng)
        types = np.repeat(np.tile(np.arange(n), (r, 1)).ravel(), sizes.ravel()).reshape(r, n)
    elif initial == "distinct":
        types = np.tile(np.arange(n), (r, 1))
    else:
        raise DomainError(f"initial must be 'urn' or 'distinct', got {initial!r}")
    counts = np.zeros((r, n + 1), dtype=np.int64)
    rows = np.arange(r)
    np.add.at(counts, (np.repeat(rows, n), types.ravel()), 1)
    out = np.empty((checkpoints.size, r), dtype=np.int64)
    slot = 0
    for m in range(steps + 1):
        while slot < checkpoints.size and checkpoints[slot] == m:
            out[slot] = (counts > 0).sum(axis=1)
            slot += 1
        if m == steps:
            break
        i = rng.integers(n, size=r)
        lab = types[rows, i]
        counts[rows, lab] -= 1
        occupied = counts > 0
        k_rest = occupied.sum(axis=1)
        p_new = _new_prob(n - 1, k_rest, params, mode)
        u = rng.random(r)
        fresh = u < p_new
        new = np.argmax(~occupied, axis=1)
        old = ~fresh
        if old.any():
            w = np.where(occupied[old], counts[old] - a, 0.0)
            cw = np.cumsum(w, axis=1)
            target = rng.random(int(old.sum())) * cw[:, -1]
            j = (cw <= target[:, None]).sum(axis=1)
            new[old] = np.minimum(j, n)
        types[rows, i] = new
        counts[rows, new] += 1
    return out


# --------------------------------------------------------------------------
# reduced discrete-time chain


def _raw_kchain(n: int, k: int, params: GGParams, mode: str) -> tuple[float, float]:
    a, b = params.alpha, params.beta
    frac = a * k / n
    if mode == "approx":
        up = (1 - frac) * (a * k / (n - 1) + b / k ** (1 / a)) if k < n else 0.0
        down = frac * (n - 1 - a * (k - 1)) * (1 / (n - 1) - b / ((n - 1) * (k - 1) ** (1 / a))) if k > 1 else 0.0
        return up, down
    if mode == "m1_reduced":
        if n - 1 > EXACT_N_MAX:
            raise DomainError(f"m1_reduced mode needs exact weights, limited to n <= {EXACT_N_MAX + 1}")
        g0, g1 = exact_weight_table(n - 1, params)
        up = (1 - frac) * g0[n - 1, k] if k < n else 0.0
        down = frac * (n - 1 - a * (k - 1)) * g1[n - 1, k - 1] if k > 1 else 0.0
        return up, down
    raise DomainError(f"mode must be one of {KCHAIN_MODES}, got {mode!r}")


def kchain_transition_probs(n: int, k: int, params: GGParams, mode: str) -> tuple[float, float, float]:
    """``(p_up, p_down, p_stay)`` of the reduced chain for the number of types.

    ``p_up`` is capped at 1 and ``p_down`` floored at 0.  If the pair still
    sums past 1, ``p_up`` gives way first.  The boundary conditions
    ``p(1, 0) = p(n, n+1) = 0`` are applied last.
    """
    if n < 1 or not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")
    if n == 1:
        return 0.0, 0.0, 1.0
    up, down = _raw_kchain(n, k, params, mode)
    up = min(up, 1.0)
    down = max(down, 0.0)
    if up + down > 1.0:
        up = max(1.0 - down, 0.0)
        down = min(down, 1.0)
    if k == 1:
        down = 0.0
    if k == n:
        up = 0.0
    return up, down, 1.0 - (up + down)


def kchain_prob_table(n: int, params: GGParams, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """``p_up[k]``, ``p_down[k]`` for ``k = 0..n`` (entry 0 unused)."""
    up = np.zeros(n + 1)
    down = np.zeros(n + 1)
    for k in range(1, n + 1):
        up[k], down[k], _ = kchain_transition_probs(n, k, params, mode)
    return up, down


def kchain_step(state: KChainState, params: GGParams, mode: str, rng: np.random.Generator) -> KChainState:
    if state.k > state.n:
        raise DomainError("the discrete chain needs k <= n")
    up, down, _ = kchain_transition_probs(state.n, state.k, params, mode)
    u = rng.random()
    k = state.k + int(u < up) - int(u >= 1.0 - down)
    return KChainState(state.n, int(k), state.step + 1)


def kchain_run(state: KChainState, steps: int, params: GGParams, mode: str,
               rng: np.random.Generator) -> list[KChainState]:
    """The path ``[state, step(state), ...]`` of length ``steps + 1``."""
    up, down = kchain_prob_table(state.n, params, mode)
    u = rng.random(steps)
    ks = [state.k]
    k = state.k
    for j in range(steps):
        k += int(u[j] < up[k]) - int(u[j] >= 1.0 - down[k])
        ks.append(int(k))
    return [KChainState(state.n, kk, state.step + j) for j, kk in enumerate(ks)]


def kchain_paths(n: int, k0, steps_to_record, params: GGParams, mode: str,
                 rng: np.random.Generator) -> np.ndarray:
    """Vectorised chains from ``k0``; ``K`` at each requested step index.

    Returns shape ``(len(steps_to_record), len(k0))``.
    """
    k = np.array(k0, dtype=np.int64)
    if k.min() < 1 or k.max() > n:
        raise DomainError("initial states must lie in [1, n]")
    record = np.asarray(steps_to_record, dtype=np.int64)
    order = np.argsort(record, kind="stable")
    up, down = kchain_prob_table(n, params, mode)
    lower = 1.0 - down
    out = np.empty((record.size, k.size), dtype=np.int64)
    m = 0
    for slot in order:
        target = int(record[slot])
        while m < target:
            u = rng.random(k.size)
            k += (u < up[k]).astype(np.int64) - (u >= lower[k])
            m += 1
        out[slot] = k
    return out


# --------------------------------------------------------------------------
# continuous-time chain


def ctmc_rates(n: int, k, params: GGParams, gamma: float):
    """Up and down rates; the down rate vanishes at ``k = 1``."""
    a, b = params.alpha, params.beta
    k = np.asarray(k, dtype=float)
    sym = a * k ** (1 + gamma) / n ** (1 + a * gamma)
    up = sym + b / k ** (1 / a)
    down = np.where(k > 1, sym, 0.0)
    return up, down


def ctmc_step(state: KChainState, params: GGParams, gamma: float,
              rng: np.random.Generator) -> tuple[KChainState, float]:
    """One Gillespie jump: exponential holding time, then ``k -> k +- 1``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    up, down = (float(x) for x in ctmc_rates(state.n, state.k, params, gamma))
    total = up + down
    hold = float(rng.exponential(1.0 / total))
    k = state.k + 1 if rng.random() * total < up else state.k - 1
    return KChainState(state.n, k, state.step + 1), hold


def ctmc_paths(n: int, k0, times, params: GGParams, gamma: float,
               rng: np.random.Generator) -> np.ndarray:
    """Vectorised Gillespie runs; ``K`` at each (unscaled) time in ``times``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    k = np.array(k0, dtype=np.int64)
    if k.min() < 1:
        raise DomainError("initial states must be positive")
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, k.size), dtype=np.int64)
    up, down = ctmc_rates(n, k, params, gamma)
    total = up + down
    t_next = rng.standard_exponential(k.size) / total
    for slot in np.argsort(times, kind="stable"):
        horizon = times[slot]
        while True:
            idx = np.flatnonzero(t_next <= horizon)
            if idx.size == 0:
                break
            jump_up = rng.random(idx.size) * total[idx] < up[idx]
            k[idx] += np.where(jump_up, 1, -1)
            u_i, d_i = ctmc_rates(n, k[idx], params, gamma)
            up[idx], down[idx] = u_i, d_i
            total[idx] = u_i + d_i
            t_next[idx] += rng.standard_exponential(idx.size) / total[idx]
        out[slot] = k
    return out


# --------------------------------------------------------------------------
# space-time rescaling


def rescaled_step_index(n: int, alpha: float, t) -> np.ndarray:
    """``floor(n^(1+alpha) t)``, robust to rounding of exact products."""
    x = np.asarray(t, dtype=float) * float(n) ** (1 + alpha)
    return np.floor(x + 1e-9 * np.maximum(1.0, x)).astype(np.int64)


def rescale_path(raw: list[KChainState], params: GGParams, time_grid) -> RescaledPath:
    """``K(floor(n^(1+alpha) t)) / n^alpha`` on ``time_grid``."""
    if not raw:
        raise InsufficientLengthError("empty path")
    n = raw[0].n
    times = np.asarray(time_grid, dtype=float)
    if np.any(np.diff(times) < 0):
        raise DomainError("time grid must be nondecreasing")
    idx = rescaled_step_index(n, params.alpha, times)
    if idx.size and idx.max() >= len(raw):
        raise InsufficientLengthError(
            f"path has {len(raw)} states but the grid needs step {int(idx.max())}")
    values = np.array([raw[j].k for j in idx], dtype=float) / n ** params.alpha
    return RescaledPath(times, values, n, params)


def scale_steps_to_time(n: int, alpha: float) -> float:
    """Number of chain steps per unit of rescaled time."""
    return float(n) ** (1 + alpha)


def initial_k(s0, n: int, alpha: float) -> np.ndarray:
    """``round(s0 n^alpha)`` clipped into ``[1, n]``."""
    return np.clip(np.rint(np.asarray(s0) * n ** alpha), 1, n).astype(np.int64)


__all__ = [
    "PopulationState", "KChainState", "RescaledPath", "moran_step", "initial_population",
    "moran_k_ensemble", "kchain_transition_probs", "kchain_prob_table", "kchain_step", "kchain_run",
    "kchain_paths", "ctmc_rates", "ctmc_step", "ctmc_paths", "rescaled_step_index", "rescale_path",
    "scale_steps_to_time", "initial_k",
]
