"""The limit diffusion ``dS = beta S^(-1/alpha) dt + sqrt(2 alpha S) dB`` and its
stationary relatives ``S_gamma`` with diffusion coefficient ``2 alpha S^(1+gamma)``.

Numerical integration is Euler-Maruyama with a floor at ``eps``.  Near zero
the drift is stiff, so a step is split in two (Brownian bridge refinement of
the same increment) until it is resolved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericInstabilityError, StepExplosionError
from .urn_weights import GGParams

POLICIES = ("full_truncation", "reflect_at_eps")
MAX_DEPTH = 20
_NORMAL_BLOCK = 1 << 16

InitialState = Union[float, np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


@dataclass(frozen=True)
class DiffusionSpec:
    params: GGParams
    gamma: float = 0.0
    dt: float = 1e-3
    horizon: float = 1.0
    s0: InitialState = 1.0
    boundary_policy: str = "full_truncation"
    eps: float = 1e-8
    substep_threshold: float | None = None
    seed: int | None = None
    noise: bool = True
    record_every: int = 1

    def __post_init__(self):
        if not self.gamma >= 0:
            raise DomainError(f"gamma must be nonnegative, got {self.gamma}")
        if not (self.dt > 0 and self.horizon > 0):
            raise DomainError("dt and horizon must be positive")
        if not 0 < self.eps < 1e-2:
            raise DomainError(f"eps must lie in (0, 1e-2), got {self.eps}")
        if self.boundary_policy not in POLICIES:
            raise DomainError(f"boundary_policy must be one of {POLICIES}")
        if self.record_every < 1:
            raise DomainError("record_every must be at least 1")
        if isinstance(self.s0, (int, float)) and not self.s0 > 0:
            raise DomainError("s0 must be positive; start at eps to approximate the entrance boundary")
        if self.substep_threshold is None:
            object.__setattr__(self, "substep_threshold", 10.0 * self.eps)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def metadata(self) -> dict:
        s0 = self.s0 if isinstance(self.s0, (int, float)) else "sampled"
        return {"alpha": self.params.alpha, "beta": self.params.beta, "gamma": self.gamma,
                "dt": self.dt, "horizon": self.horizon, "s0": s0,
                "boundary_policy": self.boundary_policy, "eps": self.eps,
                "substep_threshold": self.substep_threshold, "seed": self.seed,
                "noise": self.noise, "record_every": self.record_every}


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape or np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
            raise DomainError("grid must be positive and strictly increasing, matching values")
        if not np.all(np.isfinite(values)):
            raise NumericInstabilityError("density values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


# --------------------------------------------------------------------------
# coefficients


def _check_positive(s) -> None:
    if np.any(np.asarray(s) <= 0):
        raise DomainError("state must be positive")


def _drift(s, alpha, beta):
    return beta * s ** (-1.0 / alpha)


def _sigma2_limit(s, alpha):
    return 2.0 * alpha * s


def _sigma2_gamma(s, alpha, gamma):
    return 2.0 * alpha * s ** (1.0 + gamma)


def drift_diffusion(s, params: GGParams, gamma: float = 0.0):
    """``(mu, sigma2) = (beta s^(-1/alpha), 2 alpha s^(1+gamma))``."""
    _check_positive(s)
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    a, b = params.alpha, params.beta
    sigma2 = _sigma2_limit(s, a) if gamma == 0 else _sigma2_gamma(s, a, gamma)
    return _drift(s, a, b), sigma2


def generator_apply(fval, fprime, fsecond, s, params: GGParams, gamma: float = 0.0):
    """``(beta / s^(1/alpha)) f' + alpha s^(1+gamma) f''``; ``fval`` does not enter."""
    _check_positive(s)
    mu, sigma2 = drift_diffusion(s, params, gamma)
    return mu * fprime + 0.5 * sigma2 * fsecond


# --------------------------------------------------------------------------
# scale, speed and the invariant law


def _speed_exponents(params: GGParams, gamma: float) -> tuple[float, float]:
    """``b = beta / (1 + alpha gamma)`` and ``p = (1 + alpha gamma) / alpha``."""
    a = params.alpha
    return params.beta / (1.0 + a * gamma), (1.0 + a * gamma) / a


def log_scale_speed(x, params: GGParams, gamma: float = 0.0):
    """``(log z, log m)``, safe where ``z`` itself would overflow."""
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    b, p = _speed_exponents(params, gamma)
    log_z = b * x ** (-p)
    log_m = -log_z - math.log(2.0 * params.alpha) - (1.0 + gamma) * np.log(x)
    return log_z, log_m


def scale_speed(x, params: GGParams, gamma: float = 0.0):
    """Scale density ``z`` and speed density ``m = 1 / (2 alpha x^(1+gamma) z)``."""
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    if gamma == 0:
        return scale_speed_limit(x, params)
    b, p = _speed_exponents(params, gamma)
    log_z = b * x ** (-p)
    if np.any(log_z > 709.0):
        raise NumericInstabilityError("scale density overflows; x is too close to 0")
    z = np.exp(log_z)
    m = 1.0 / (2.0 * params.alpha * x ** (1.0 + gamma) * z)
    return z, m


def scale_speed_limit(x, params: GGParams):
    """``z = exp(beta x^(-1/alpha))``, ``m = 1 / (2 alpha x z)``."""
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    log_z = params.beta * x ** (-1.0 / params.alpha)
    if np.any(log_z > 709.0):
        raise NumericInstabilityError("scale density overflows; x is too close to 0")
    z = np.exp(log_z)
    return z, 1.0 / (2.0 * params.alpha * x * z)


def _closed_form_constant(params: GGParams, gamma: float) -> float:
    """``C = 2 beta ((1 + alpha gamma) / beta)^(1/(1 + alpha gamma)) / Gamma(alpha gamma / (1 + alpha gamma))``."""
    a, b = params.alpha, params.beta
    r = 1.0 + a * gamma
    return 2.0 * b * (r / b) ** (1.0 / r) / math.gamma(a * gamma / r)


def speed_mass(params: GGParams, gamma: float, epsabs: float = 0.0, epsrel: float = 1e-12) -> float:
    """``int_0^inf m_gamma`` by adaptive quadrature in ``log x``."""
    b, p = _speed_exponents(params, gamma)
    # the integrand in u = log x peaks where b p x^(-p) = gamma
    peak = math.log((b * p / gamma) ** (1.0 / p))

    def f(u):
        return math.exp(-b * math.exp(-p * u) - gamma * u) / (2.0 * params.alpha)

    lo = math.log((b / 800.0) ** (1.0 / p))  # exp(-b x^-p) < e^-800 below here
    pieces = [lo, peak - 2.0, peak, peak + 2.0, peak + 10.0]
    total = 0.0
    for u0, u1 in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(f, u0, u1, epsabs=epsabs, epsrel=epsrel, limit=200)[0]
    total += integrate.quad(f, pieces[-1], np.inf, epsabs=epsabs, epsrel=epsrel, limit=200)[0]
    return total


@lru_cache(maxsize=256)
def _checked_constant(alpha: float, beta: float, gamma: float, tol: float) -> float:
    params = GGParams(alpha, beta)
    c = _closed_form_constant(params, gamma)
    mismatch = abs(c * speed_mass(params, gamma) - 1.0)
    if not mismatch <= tol:
        raise NumericInstabilityError(
            f"normalising constant disagrees with quadrature by {mismatch:.3g} "
            f"(alpha={alpha}, beta={beta}, gamma={gamma})")
    return c


def normalising_constant(params: GGParams, gamma: float, tol: float = 1e-6) -> float:
    """Closed-form constant of the invariant law, verified once by quadrature."""
    if not gamma > 0:
        raise DomainError("no stationary law for gamma <= 0")
    return _checked_constant(params.alpha, params.beta, float(gamma), tol)


def invariant_density(x, params: GGParams, gamma: float):
    """``C m_gamma(x)``, the stationary density of ``S_gamma``."""
    c = normalising_constant(params, gamma)
    _, log_m = log_scale_speed(x, params, gamma)
    return c * np.exp(log_m)


def _invariant_shape(params: GGParams, gamma: float) -> tuple[float, float, float]:
    b, p = _speed_exponents(params, gamma)
    return gamma / p, b, p  # q = alpha gamma / (1 + alpha gamma)


def invariant_cdf(x, params: GGParams, gamma: float):
    """``P(S_gamma <= x) = Q(q, b x^(-p))`` with ``Q`` the regularised upper gamma."""
    if not gamma > 0:
        raise DomainError("no stationary law for gamma <= 0")
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    q, b, p = _invariant_shape(params, gamma)
    return special.gammaincc(q, b * x ** (-p))


def invariant_sample(params: GGParams, gamma: float, size, rng: np.random.Generator) -> np.ndarray:
    """Exact draws: ``U ~ Gamma(q, rate b)`` gives ``U^(-1/p)`` with the invariant law."""
    if not gamma > 0:
        raise DomainError("no stationary law for gamma <= 0")
    q, b, p = _invariant_shape(params, gamma)
    u = rng.gamma(q, 1.0 / b, size=size)
    return u ** (-1.0 / p)


# --------------------------------------------------------------------------
# path simulation


class _Stepper:
    """Scalar refinement of stiff steps, shared by path and ensemble drivers."""

    def __init__(self, spec: DiffusionSpec, bridge_rng: np.random.Generator, generic: bool):
        a = spec.params.alpha
        self.a, self.b = a, spec.params.beta
        self.gamma = spec.gamma
        self.generic = generic or spec.gamma != 0
        self.eps = spec.eps
        self.thr = spec.substep_threshold
        self.reflect = spec.boundary_policy == "reflect_at_eps"
        self.noise = 1.0 if spec.noise else 0.0
        self.p = 1.0 + 1.0 / a
        self.bridge = bridge_rng
        self.calls = 0

    def sigma2(self, s):
        return _sigma2_gamma(s, self.a, self.gamma) if self.generic else _sigma2_limit(s, self.a)

    def floor(self, s):
        if s < self.eps:
            s = 2.0 * self.eps - s if self.reflect else self.eps
            if s < self.eps:
                s = self.eps
        return s

    def advance(self, s: float, h: float, dw: float, depth: int = 0) -> float:
        self.calls += 1
        mu = _drift(s, self.a, self.b)
        stiff = s < self.thr or mu * h > s
        if stiff and depth < MAX_DEPTH:
            half = 0.5 * h
            dw1 = 0.5 * dw + math.sqrt(0.5 * half) * float(self.bridge.standard_normal())
            s = self.advance(s, half, dw1, depth + 1)
            return self.advance(s, half, dw - dw1, depth + 1)
        try:
            if stiff:
                # deepest level: integrate the drift exactly, then add the noise
                drifted = (s ** self.p + self.p * self.b * h) ** (1.0 / self.p)
                new = drifted + self.noise * math.sqrt(self.sigma2(s)) * dw
            else:
                new = s + mu * h + self.noise * math.sqrt(self.sigma2(s)) * dw
        except OverflowError:
            new = math.inf
        if not math.isfinite(new):
            raise StepExplosionError(f"non-finite state after a step from s={s!r}")
        return self.floor(new)


def _split_rng(rng: np.random.Generator) -> tuple[np.random.Generator, np.random.Generator]:
    # bridge refinements draw from their own stream so that the coarse
    # increments stay identical across runs that share a seed
    return rng, np.random.default_rng(rng.integers(2**63))


def _initial(spec: DiffusionSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    s0 = spec.s0
    if callable(s0):
        out = np.asarray(s0(rng, size), dtype=float)
    else:
        out = np.broadcast_to(np.asarray(s0, dtype=float), (size,)).copy()
    if out.shape != (size,) or np.any(out <= 0):
        raise DomainError("initial states must be positive, one per replicate")
    return out


def simulate_path(spec: DiffusionSpec, rng: np.random.Generator,
                  generic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One path on the grid ``0, dt, 2 dt, ...``, thinned by ``record_every``.

    ``generic`` forces the ``S_gamma`` coefficient code even at ``gamma = 0``.
    """
    rng, bridge = _split_rng(rng)
    step = _Stepper(spec, bridge, generic)
    s = float(_initial(spec, 1, rng)[0])
    n, h, every = spec.n_steps, spec.dt, spec.record_every
    sq = math.sqrt(h)
    out = [s]
    for lo in range(0, n, _NORMAL_BLOCK):
        dws = (rng.standard_normal(min(_NORMAL_BLOCK, n - lo)) * sq).tolist()
        for j, dw in enumerate(dws):
            s = step.advance(s, h, dw)
            if (lo + j + 1) % every == 0:
                out.append(s)
    times = np.arange(len(out)) * (h * every)
    return times, np.asarray(out)


def simulate_ensemble(spec: DiffusionSpec, replicates: int, rng: np.random.Generator,
                      record_times=None, generic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised independent paths recorded at ``record_times``.

    Times are rounded to the ``dt`` grid.  Returns ``(times, states)`` with
    ``states`` of shape ``(len(times), replicates)``.
    """
    rng, bridge = _split_rng(rng)
    step = _Stepper(spec, bridge, generic)
    h = spec.dt
    if record_times is None:
        record_times = [spec.horizon]
    idx = np.rint(np.asarray(record_times, dtype=float) / h).astype(np.int64)
    if idx.min() < 0 or idx.max() > spec.n_steps:
        raise DomainError("record times must lie in [0, horizon]")
    s = _initial(spec, replicates, rng)
    a, b = step.a, step.b
    sq = math.sqrt(h)
    out = np.empty((idx.size, replicates))
    order = np.argsort(idx, kind="stable")
    m = 0
    for slot in order:
        while m < idx[slot]:
            dw = rng.standard_normal(replicates) * sq
            mu = _drift(s, a, b)
            stiff = (s < step.thr) | (mu * h > s)
            with np.errstate(over="ignore", invalid="ignore"):
                new = s + mu * h + step.noise * np.sqrt(step.sigma2(s)) * dw
            if stiff.any():
                for i in np.flatnonzero(stiff):
                    new[i] = step.advance(float(s[i]), h, float(dw[i]))
            low = new < step.eps
            if low.any():
                fix = 2.0 * step.eps - new[low] if step.reflect else np.full(int(low.sum()), step.eps)
                new[low] = np.maximum(fix, step.eps)
            if not np.all(np.isfinite(new)):
                raise StepExplosionError("non-finite state in ensemble step")
            s = new
            m += 1
        out[slot] = s
    return idx * h, out


def deterministic_flow(s0, t, params: GGParams):
    """Noise-free solution ``(s0^p + p beta t)^(1/p)``, ``p = 1 + 1/alpha``."""
    p = 1.0 + 1.0 / params.alpha
    return (np.asarray(s0, dtype=float) ** p + p * params.beta * np.asarray(t, dtype=float)) ** (1.0 / p)


# --------------------------------------------------------------------------
# boundary classification


@dataclass(frozen=True)
class LadderResult:
    name: str
    truncations: tuple[float, ...]
    log_values: tuple[float, ...]
    verdict: str  # "finite", "infinite" or "inconclusive"


@dataclass(frozen=True)
class BoundaryReport:
    params: GGParams
    gamma: float
    entries: dict = field(default_factory=dict)

    def verdicts(self) -> dict[str, str]:
        return {k: v.verdict for k, v in self.entries.items()}

    def to_dict(self) -> dict:
        return {"alpha": self.params.alpha, "beta": self.params.beta, "gamma": self.gamma,
                "entries": {k: {"verdict": v.verdict, "truncations": list(v.truncations),
                                "log_values": list(v.log_values)} for k, v in self.entries.items()}}


def _log_cumtrapz(log_f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``log int_{x_0}^{x_i} f`` for every ``i`` (``-inf`` at ``i = 0``).

    On each cell ``log f`` is taken linear in ``x``, which is exact for
    exponentials and keeps steep integrands near 0 from being overweighted.
    """
    log_dx = np.log(np.abs(np.diff(x)))
    f0, f1 = log_f[:-1], log_f[1:]
    d = np.abs(f1 - f0)
    top = np.maximum(f0, f1)
    with np.errstate(divide="ignore", invalid="ignore"):
        steep = top + np.log(-np.expm1(-d)) - np.log(d)
    flat = np.logaddexp(f0, f1) - math.log(2.0)
    pieces = log_dx + np.where(d > 1e-6, steep, flat)
    return np.concatenate([[-np.inf], np.logaddexp.accumulate(pieces)])


def _log_integrals(params: GGParams, gamma: float, lo: float, hi: float, toward_zero: bool,
                   points_per_decade: int) -> dict[str, float]:
    # nodes 10^(j / points_per_decade) are shared by every truncation, so
    # successive rungs of a ladder integrate over nested grids
    j_lo = math.floor(math.log10(lo) * points_per_decade + 1e-9)
    j_hi = math.ceil(math.log10(hi) * points_per_decade - 1e-9)
    x = 10.0 ** (np.arange(j_lo, j_hi + 1) / points_per_decade)
    log_z, log_m = log_scale_speed(x, params, gamma)
    cz, cm = _log_cumtrapz(log_z, x), _log_cumtrapz(log_m, x)
    if toward_zero:
        # inner integrals run from the truncated boundary lo up to x
        inner_z, inner_m = cz, cm
    else:
        # inner integrals run from x out to the truncated boundary hi
        inner_z = _log_cumtrapz(log_z[::-1], x[::-1])[::-1]
        inner_m = _log_cumtrapz(log_m[::-1], x[::-1])[::-1]
    sigma = _log_cumtrapz(inner_z + log_m, x)[-1]
    nu = _log_cumtrapz(inner_m + log_z, x)[-1]
    return {"Z": cz[-1], "M": cm[-1], "Sigma": sigma, "N": nu}


def _classify(log_vals: list[float], ratio_finite: float = 0.9, ratio_infinite: float = 0.97) -> str:
    v = np.asarray(log_vals)
    d = np.diff(v)
    tol = 1e-10 * max(1.0, abs(v[-1]))
    if np.all(np.abs(d[-3:]) <= tol):
        return "finite"  # the ladder has stabilised
    if np.any(d < -tol):
        return "inconclusive"
    with np.errstate(divide="ignore", invalid="ignore"):
        log_inc = v[1:] + np.log(-np.expm1(np.minimum(v[:-1] - v[1:], 0.0)))  # log increments
    tail = log_inc[-4:]
    if np.isneginf(tail[-1]) or tail[-1] - v[-1] < math.log(1e-12):
        return "finite"
    log_ratio = np.diff(tail)
    if np.all(log_ratio >= math.log(ratio_infinite)):
        return "infinite"
    if np.all(log_ratio <= math.log(ratio_finite)):
        return "finite"
    return "inconclusive"


def boundary_divergence_report(params: GGParams, gamma: float = 0.0, ladder: int = 12,
                               points_per_decade: int = 4000) -> BoundaryReport:
    """Truncated scale/speed integrals toward 0 and infinity, with verdicts.

    With reference point 1, and inner integrals measured from the boundary::

        Z(0) = int_0^1 z,  M(0) = int_0^1 m,
        Sigma(0) = int_0^1 (int_0^x z) m(x) dx,  N(0) = int_0^1 (int_0^x m) z(x) dx

    and likewise toward infinity.  Each is evaluated on a geometric ladder of
    truncation points and classified from the growth of its increments.
    """
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    entries: dict[str, LadderResult] = {}
    zero_cuts = [2.0 ** (-j / 2) for j in range(1, ladder + 1)]
    inf_cuts = [4.0 ** j for j in range(1, 2 * ladder + 1)]
    for side, cuts in (("0", zero_cuts), ("inf", inf_cuts)):
        logs: dict[str, list[float]] = {"Z": [], "M": [], "Sigma": [], "N": []}
        for c in cuts:
            vals = (_log_integrals(params, gamma, c, 1.0, True, points_per_decade) if side == "0"
                    else _log_integrals(params, gamma, 1.0, c, False, points_per_decade))
            for k in logs:
                logs[k].append(float(vals[k]))
        for k, vals in logs.items():
            name = f"{k}({side})"
            entries[name] = LadderResult(name, tuple(cuts), tuple(vals), _classify(vals))
    return BoundaryReport(params, gamma, entries)


__all__ = [
    "DiffusionSpec", "DensityCurve", "POLICIES", "drift_diffusion", "generator_apply",
    "log_scale_speed", "scale_speed", "scale_speed_limit", "speed_mass", "normalising_constant",
    "invariant_density", "invariant_cdf", "invariant_sample", "simulate_path", "simulate_ensemble",
    "deterministic_flow", "boundary_divergence_report", "BoundaryReport", "LadderResult",
]
