"""Exchangeable GG partitions: urn sampling, the law of K_n and alpha-diversity.

Fresh atoms are consecutive integer labels.  The base measure is nonatomic,
so only the induced partition matters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError
from .special_fn import gg_alternating_sum, log_gen_factorial_table
from .urn_weights import EXACT_N_MAX, GGParams, approx_g0_raw, exact_weight_table

MODES = ("exact", "approx", "hybrid")


@dataclass(frozen=True)
class Partition:
    block_sizes: tuple[int, ...]
    n: int = field(init=False)
    k: int = field(init=False)
    m1: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise DomainError("a partition needs at least one block and positive sizes")
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "n", sum(sizes))
        object.__setattr__(self, "k", len(sizes))
        object.__setattr__(self, "m1", sum(1 for s in sizes if s == 1))

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        _, counts = np.unique(np.asarray(labels), return_counts=True)
        return cls(tuple(int(c) for c in counts))

    def multiset(self) -> tuple[int, ...]:
        """Block sizes in decreasing order, the relabelling-invariant summary."""
        return tuple(sorted(self.block_sizes, reverse=True))


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")


def _new_prob(i: int, k, params: GGParams, mode: str, table):
    # probability that draw i+1 is fresh given i draws in k blocks
    if mode == "exact" or (mode == "hybrid" and i <= EXACT_N_MAX):
        return table[i, k]
    return np.clip(approx_g0_raw(i, k, params), 0.0, 1.0)


def _table_for(n: int, params: GGParams, mode: str):
    if mode == "approx":
        return None
    if mode == "hybrid":
        return exact_weight_table(min(max(n - 1, 1), EXACT_N_MAX), params)[0]
    if n - 1 > EXACT_N_MAX:
        raise DomainError(f"exact mode is limited to n <= {EXACT_N_MAX + 1}, got n={n}")
    return exact_weight_table(max(n - 1, 1), params)[0]


def urn_sample(n: int, params: GGParams, mode: str, rng: np.random.Generator) -> Partition:
    """Run the generalised Polya urn for ``n`` draws and return the partition.

    Draw ``i + 1`` opens a new block with probability ``g0(i, k_i)`` and
    otherwise joins block ``j`` with probability proportional to
    ``n_j - alpha``.  In approx mode ``g0`` is the clamped second-order weight.
    Hybrid mode uses exact weights while ``i`` is within the exact range and
    the approximation afterwards.  Early draws fix the limit of
    ``K_n / n^alpha``, and the approximation is poor there.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    _check_mode(mode)
    table = _table_for(n, params, mode)
    sizes = [1]
    a = params.alpha
    for i in range(1, n):
        k = len(sizes)
        if rng.random() < _new_prob(i, k, params, mode, table):
            sizes.append(1)
        else:
            w = np.asarray(sizes, dtype=float) - a
            j = int(np.searchsorted(np.cumsum(w), rng.random() * (i - a * k), side="right"))
            sizes[min(j, k - 1)] += 1
    return Partition(tuple(sizes))


def _urn_chunk(n, params, mode, r, rng, table):
    a = params.alpha
    sizes = np.zeros((r, n), dtype=np.int32)
    labels = np.zeros((r, n), dtype=np.int32)
    sizes[:, 0] = 1
    k = np.ones(r, dtype=np.int64)
    rows = np.arange(r)
    for i in range(1, n):
        fresh = rng.random(r) < _new_prob(i, k, params, mode, table)
        u = rng.random(r)
        old = ~fresh
        if old.any():
            w = np.where(sizes[old] > 0, sizes[old] - a, 0.0)
            cw = np.cumsum(w, axis=1)
            target = u[old] * cw[:, -1]
            j = (cw <= target[:, None]).sum(axis=1)
            j = np.minimum(j, k[old] - 1)
            sizes[rows[old], j] += 1
            labels[rows[old], i] = j
        sizes[rows[fresh], k[fresh]] = 1
        labels[rows[fresh], i] = k[fresh]
        k = k + fresh
    return sizes, labels


def _urn_vectorised(n, params, mode, replicates, rng, chunk, want):
    if n < 1:
        raise DomainError("n must be at least 1")
    _check_mode(mode)
    table = _table_for(n, params, mode)
    chunk = chunk or max(1, 4_000_000 // n)
    out = np.zeros((replicates, n), dtype=np.int32)
    for lo in range(0, replicates, chunk):
        r = min(chunk, replicates - lo)
        res = _urn_chunk(n, params, mode, r, rng, table)
        out[lo:lo + r] = res[want]
    return out


def urn_block_sizes(n: int, params: GGParams, mode: str, replicates: int,
                    rng: np.random.Generator, chunk: int | None = None) -> np.ndarray:
    """Vectorised ``urn_sample``: an ``(replicates, n)`` array of block sizes.

    Blocks are stored in order of creation; unused slots are zero.
    """
    return _urn_vectorised(n, params, mode, replicates, rng, chunk, 0)


def urn_labels(n: int, params: GGParams, mode: str, replicates: int,
               rng: np.random.Generator, chunk: int | None = None) -> np.ndarray:
    """Label of every draw, ``(replicates, n)``; blocks are numbered by creation.

    Uses the same random stream as ``urn_block_sizes``.
    """
    return _urn_vectorised(n, params, mode, replicates, rng, chunk, 1)


def urn_cluster_counts(n: int, params: GGParams, mode: str, replicates: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Block count ``K_n`` and singleton count ``M_{1,n}`` of urn samples.

    Under the urn, ``(K_i, M_{1,i})`` is itself a Markov chain: a draw that
    joins an existing block hits a singleton with probability
    ``M_1 (1 - alpha) / (i - alpha K)``.  That makes large ``n`` cheap.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    _check_mode(mode)
    table = _table_for(n, params, mode)
    a = params.alpha
    k = np.ones(replicates, dtype=np.int64)
    m1 = np.ones(replicates, dtype=np.int64)
    for i in range(1, n):
        p_new = _new_prob(i, k, params, mode, table)
        u = rng.random(replicates)
        fresh = u < p_new
        # conditional on joining, the singleton share of the mass i - alpha k
        hit_single = ~fresh & (u - p_new < (1.0 - p_new) * m1 * (1.0 - a) / (i - a * k))
        k += fresh
        m1 += fresh.astype(np.int64) - hit_single
    return k, m1


# --------------------------------------------------------------------------
# law of K_n


def k_log_pmf(n: int, k: int, params: GGParams) -> float:
    if n < 1 or not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")
    if n > EXACT_N_MAX:
        raise DomainError(f"the exact law of K_n is limited to n <= {EXACT_N_MAX}")
    a, b = params.alpha, params.beta
    log_g = log_gen_factorial_table(n, a)[n, k]
    alt = gg_alternating_sum(n - 1, k, a, b)
    if alt.sign <= 0:
        return -math.inf
    return b + float(log_g) + alt.log_magnitude - math.log(a) - math.lgamma(n)


def k_pmf(n: int, k: int, params: GGParams) -> float:
    """``P(K_n = k) = e^beta G(n, k, alpha) / (alpha Gamma(n)) * S(n - 1, k)``."""
    return math.exp(k_log_pmf(n, k, params))


def k_pmf_vector(n: int, params: GGParams) -> np.ndarray:
    """``P(K_n = k)`` for ``k = 1..n`` (index 0 holds ``k = 1``)."""
    return np.array([k_pmf(n, k, params) for k in range(1, n + 1)])


# --------------------------------------------------------------------------
# positive stable law and alpha-diversity


def _log_zolotarev_a(u, alpha):
    u = np.asarray(u, dtype=float)
    return (np.log(np.sin(alpha * u)) - np.log(np.sin(u))) / (1 - alpha) + \
        np.log(np.sin((1 - alpha) * u)) - np.log(np.sin(alpha * u))


def _stable_series(alpha: float, t: float) -> float:
    # f(t) = (1/pi) sum_k (-1)^(k+1) Gamma(k alpha + 1) / k! sin(k pi alpha) t^(-k alpha - 1)
    lx = -alpha * math.log(t)
    total = 0.0
    for k in range(1, 400):
        mag = math.exp(math.lgamma(k * alpha + 1) - math.lgamma(k + 1) + k * lx)
        term = mag * math.sin(k * math.pi * alpha)
        total += term if k % 2 else -term
        if mag < 1e-18 * abs(total):
            break
    return total / (math.pi * t)


def stable_density(alpha: float, t: float) -> float:
    """Density of the positive stable law with Laplace transform ``exp(-lambda^alpha)``.

    Far in the right tail (``t^-alpha < 0.1``) the convergent power series in
    ``t^-alpha`` is summed directly.  Elsewhere Zolotarev's representation::

        f(t) = alpha / (1 - alpha) t^(-1/(1-alpha)) / pi
               * int_0^pi A(u) exp(-t^(-alpha/(1-alpha)) A(u)) du

    The integrand is sharply peaked where ``A(u) = t^(alpha/(1-alpha))``,
    so the range is split there.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not t > 0:
        raise DomainError(f"stable density needs t > 0, got {t}")
    if t ** -alpha < 0.1:
        return _stable_series(alpha, t)
    c = t ** (-alpha / (1 - alpha))
    a0 = alpha ** (alpha / (1 - alpha)) * (1 - alpha)
    if c * a0 > 800.0:
        return 0.0  # the density is below exp(-700) here and underflows
    la0 = math.log(a0)

    def log_integrand(u):
        la = float(_log_zolotarev_a(u, alpha))
        if la - la0 > 700:
            return -math.inf
        return la - c * a0 * math.expm1(la - la0)

    lo, hi = 1e-12, math.pi - 1e-12
    peak = lo
    if 1 / c > a0 * (1 + 1e-12) and float(_log_zolotarev_a(hi, alpha)) > -math.log(c):
        target = -math.log(c)
        peak = optimize.brentq(lambda u: float(_log_zolotarev_a(u, alpha)) - target, lo, hi, xtol=1e-14)
    # integrate only where the integrand is within e^-60 of its peak value
    top = log_integrand(peak)
    cut = lambda u: log_integrand(u) - (top - 60.0)  # noqa: E731
    left = optimize.brentq(cut, lo, peak, xtol=1e-15) if peak > lo and cut(lo) < 0 else 0.0
    right = optimize.brentq(cut, peak, hi, xtol=1e-15) if cut(hi) < 0 else math.pi
    total = 0.0
    for a, b in ((left, peak), (peak, right)):
        if b > a:
            val, _ = integrate.quad(lambda u: math.exp(min(log_integrand(u) - top, 0.0)), a, b,
                                    epsabs=0.0, epsrel=1e-12, limit=400)
            total += val
    log_f = (math.log(alpha / (1 - alpha)) - math.log(t) / (1 - alpha) - math.log(math.pi)
             - c * a0 + top + math.log(total))
    return math.exp(log_f)


def alpha_diversity_density(params: GGParams, s: float) -> float:
    """Density of the limit ``S`` of ``K_n / n^alpha``."""
    if not s > 0:
        raise DomainError(f"alpha-diversity density needs s > 0, got {s}")
    a, b = params.alpha, params.beta
    expo = b - (b / s) ** (1 / a)
    if expo < -745:
        return 0.0
    return math.exp(expo) / a * s ** (-1 - 1 / a) * stable_density(a, s ** (-1 / a))


def stable_sample(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Positive stable variates, Laplace transform ``exp(-lambda^alpha)``.

    Chambers-Mallows-Stuck in Kanter's form: ``(A(U) / E)^((1-alpha)/alpha)``
    with ``U`` uniform on (0, pi) and ``E`` standard exponential.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    u = rng.uniform(0.0, math.pi, size)
    e = rng.standard_exponential(size)
    la = _log_zolotarev_a(u, alpha)
    return np.exp((la - np.log(e)) * (1 - alpha) / alpha)


def alpha_diversity_samples(params: GGParams, size: int, rng: np.random.Generator,
                            return_proposals: bool = False):
    """Draws of ``S`` by exponential tilting of the positive stable law.

    A stable proposal ``T`` is kept with probability ``exp(-beta^(1/alpha) T)``
    and mapped to ``T^(-alpha)``.  The acceptance rate is ``exp(-beta)``.
    """
    a, b = params.alpha, params.beta
    lam = b ** (1 / a)
    out = np.empty(size)
    filled = 0
    proposals = 0
    while filled < size:
        batch = int(min(5e6, (size - filled) * math.exp(b) * 1.1 + 64))
        t = stable_sample(a, batch, rng)
        keep = rng.random(batch) < np.exp(-lam * t)
        proposals += batch
        acc = t[keep] ** (-a)
        take = min(acc.size, size - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
        if filled == size:
            # count only the proposals actually consumed
            proposals -= batch - (np.flatnonzero(keep)[take - 1] + 1 if take else 0)
    if return_proposals:
        return out, proposals
    return out


def alpha_diversity_sample(params: GGParams, rng: np.random.Generator) -> float:
    return float(alpha_diversity_samples(params, 1, rng)[0])


def alpha_diversity_cdf(params: GGParams, s) -> np.ndarray:
    """CDF of ``S`` by quadrature of ``alpha_diversity_density`` on a grid."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    order = np.argsort(s)
    out = np.empty_like(s)
    acc = 0.0
    prev = 0.0
    dens = lambda x: alpha_diversity_density(params, x) if x > 0 else 0.0  # noqa: E731
    for idx in order:
        x = s[idx]
        if x > prev:
            acc += integrate.quad(dens, prev, x, epsabs=1e-13, epsrel=1e-10, limit=200)[0]
            prev = x
        out[idx] = acc
    return out
