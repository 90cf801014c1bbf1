"""Predictive weights ``g0`` (new type) and ``g1`` (per unit of ``n_j - alpha``).

Three families: the exact normalised generalised gamma weights, their
second-order large-``n`` approximation and the Pitman-Yor weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .special_fn import gg_alternating_sum

# Exact weights (and the exact law of K_n) are only offered up to this size.
EXACT_N_MAX = 200


@dataclass(frozen=True)
class GGParams:
    """Parameters of the GG(beta, alpha) prior, ``beta = tau^alpha / alpha``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (isinstance(self.alpha, (int, float)) and 0 < self.alpha < 1):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (isinstance(self.beta, (int, float)) and self.beta > 0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def tau(self) -> float:
        return (self.alpha * self.beta) ** (1.0 / self.alpha)

    @classmethod
    def from_tau(cls, alpha: float, tau: float) -> "GGParams":
        return cls(alpha, tau**alpha / alpha)


@dataclass(frozen=True)
class PYParams:
    alpha: float
    theta: float

    def __post_init__(self):
        a, t = self.alpha, self.theta
        if a < 0:
            m = t / abs(a)
            if not (m >= 1 and abs(m - round(m)) < 1e-12):
                raise DomainError(f"alpha < 0 needs theta = |alpha| m with integer m >= 1, got {a}, {t}")
        elif not (a < 1 and t > -a):
            raise DomainError(f"need alpha in [0, 1) and theta > -alpha, got {a}, {t}")


@dataclass(frozen=True)
class WeightPair:
    g0: float
    g1: float

    def identity_residual(self, n: int, k: int, alpha: float) -> float:
        """``g0 + (n - alpha k) g1 - 1``; zero for an exact urn."""
        return self.g0 + (n - alpha * k) * self.g1 - 1.0


@dataclass(frozen=True)
class ApproxWeightPair:
    """Raw second-order weights with a clamped view on top."""

    g0_raw: float
    g1_raw: float

    @property
    def g0(self) -> float:
        return min(max(self.g0_raw, 0.0), 1.0)

    @property
    def g1(self) -> float:
        return min(max(self.g1_raw, 0.0), 1.0)

    def clamped(self) -> WeightPair:
        return WeightPair(self.g0, self.g1)


def _check_nk(n: int, k: int) -> None:
    if n < 1 or not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")


def _check_exact_n(n: int) -> None:
    if n > EXACT_N_MAX:
        raise DomainError(f"exact weights are limited to n <= {EXACT_N_MAX}, got n={n}; use approx mode")


def gg_weights_exact(n: int, k: int, params: GGParams) -> WeightPair:
    """Exact GG urn weights as ratios of alternating incomplete-gamma sums.

    With ``S(m, a) = sum_i C(m, i) (-1)^i beta^(i/alpha) Gamma(a - i/alpha; beta)``::

        g0 = (alpha / n) S(n, k + 1) / S(n - 1, k)
        g1 = (1 / n)     S(n, k)     / S(n - 1, k)
    """
    _check_nk(n, k)
    _check_exact_n(n)
    a, b = params.alpha, params.beta
    den = gg_alternating_sum(n - 1, k, a, b)
    num0 = gg_alternating_sum(n, k + 1, a, b)
    num1 = gg_alternating_sum(n, k, a, b)
    g0 = a / n * float(num0 / den)
    g1 = float(num1 / den) / n
    return WeightPair(g0, g1)


def gg_weights_approx(n: int, k: int, params: GGParams) -> ApproxWeightPair:
    """``g0 = alpha k / n + beta / k^(1/alpha)``, ``g1 = 1/n - beta / (n k^(1/alpha))``.

    The asymptotic remainders are dropped.
    """
    _check_nk(n, k)
    a, b = params.alpha, params.beta
    tail = b / k ** (1.0 / a)
    return ApproxWeightPair(a * k / n + tail, 1.0 / n - tail / n)


def py_weights(n: int, k: int, params: PYParams) -> WeightPair:
    _check_nk(n, k)
    th, a = params.theta, params.alpha
    return WeightPair((th + a * k) / (th + n), 1.0 / (th + n))


# --------------------------------------------------------------------------
# tables for the simulators


@lru_cache(maxsize=64)
def _exact_table(n_max: int, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    params = GGParams(alpha, beta)
    g0 = np.zeros((n_max + 1, n_max + 2))
    g1 = np.zeros((n_max + 1, n_max + 2))
    g0[0, 0] = 1.0  # empty conditioning sample: always a new type
    for n in range(1, n_max + 1):
        for k in range(1, n + 1):
            w = gg_weights_exact(n, k, params)
            g0[n, k] = w.g0
            g1[n, k] = w.g1
    g0.setflags(write=False)
    g1.setflags(write=False)
    return g0, g1


def exact_weight_table(n_max: int, params: GGParams) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``g0[n, k]``, ``g1[n, k]`` for ``1 <= k <= n <= n_max``.

    Row ``n = 0`` holds the convention ``g0(0, 0) = 1``.  The arrays may
    extend past ``n_max``; tables are shared between nearby sizes.
    """
    _check_exact_n(n_max)
    bucket = min(EXACT_N_MAX, -(-max(int(n_max), 1) // 32) * 32)
    return _exact_table(bucket, params.alpha, params.beta)


def approx_g0_raw(n, k, params: GGParams):
    """Vectorised raw ``g0`` of the second-order approximation."""
    k = np.asarray(k, dtype=float)
    return params.alpha * k / n + params.beta / k ** (1.0 / params.alpha)


def approx_g1_raw(n, k, params: GGParams):
    k = np.asarray(k, dtype=float)
    return 1.0 / n - params.beta / (n * k ** (1.0 / params.alpha))


def new_type_probability(n: int, k, params: GGParams, mode: str):
    """Probability that draw ``n + 1`` opens a new block, given ``k`` blocks.

    Exact mode reads the exact table; approx mode clamps the raw weight into
    [0, 1].  ``n = 0`` (no conditioning sample) always gives 1.
    """
    k = np.asarray(k)
    if n == 0:
        return np.ones(k.shape)
    if mode == "exact":
        g0, _ = exact_weight_table(n, params)
        return g0[n, k]
    if mode == "approx":
        return np.clip(approx_g0_raw(n, k, params), 0.0, 1.0)
    raise DomainError(f"unknown weight mode {mode!r}")
