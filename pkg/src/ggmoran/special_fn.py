"""Special functions in sign-tracked log form.

Everything the exact generalised gamma formulas need: log-domain signed
values, the upper incomplete gamma function for any real first argument,
rising factorials, generalised factorial coefficients and the alternating
incomplete-gamma sums whose cancellation forces extended precision.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import mpmath
import numpy as np
from scipy import special

from .errors import DomainError, NumericInstabilityError

_LOG_DBL_MAX = math.log(np.finfo(float).max)
_TINY = 1e-300

# Double-precision alternating sums are trusted only when the result keeps at
# least this fraction of the largest term; otherwise extended precision.
CANCELLATION_THRESHOLD = 1e-2
# Bits that must survive cancellation in the extended-precision evaluation.
_GUARD_BITS = 80
_MAX_PREC = 1 << 15
# Beyond this many terms the double attempt practically always cancels.
_DOUBLE_MAX_M = 8


# mpmath keeps its working precision in global state, so every
# extended-precision section runs under this lock
_MP_LOCK = threading.RLock()


@contextmanager
def _workprec(prec: int):
    with _MP_LOCK, mpmath.workprec(prec):
        yield


@dataclass(frozen=True)
class SignedLog:
    """A real number stored as ``sign * exp(log_magnitude)``.

    ``sign == 0`` represents exactly zero; ``log_magnitude`` is then ignored.
    """

    log_magnitude: float
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise DomainError(f"sign must be -1, 0 or +1, got {self.sign}")

    @classmethod
    def zero(cls) -> "SignedLog":
        return cls(-math.inf, 0)

    @classmethod
    def from_float(cls, x: float) -> "SignedLog":
        if x == 0:
            return cls.zero()
        if not math.isfinite(x):
            raise DomainError(f"cannot represent {x}")
        return cls(math.log(abs(x)), 1 if x > 0 else -1)

    @classmethod
    def from_mpf(cls, x) -> "SignedLog":
        if x == 0:
            return cls.zero()
        return cls(float(mpmath.log(abs(x))), 1 if x > 0 else -1)

    @property
    def saturated(self) -> bool:
        """True when the value is too large to be held in a double."""
        return self.sign != 0 and self.log_magnitude > _LOG_DBL_MAX

    def __float__(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.saturated:
            return math.copysign(math.inf, self.sign)
        return self.sign * math.exp(self.log_magnitude)

    def __neg__(self) -> "SignedLog":
        return SignedLog(self.log_magnitude, -self.sign)

    def __mul__(self, other: "SignedLog") -> "SignedLog":
        if self.sign == 0 or other.sign == 0:
            return SignedLog.zero()
        return SignedLog(self.log_magnitude + other.log_magnitude, self.sign * other.sign)

    def __truediv__(self, other: "SignedLog") -> "SignedLog":
        if other.sign == 0:
            raise ZeroDivisionError("division by SignedLog zero")
        if self.sign == 0:
            return SignedLog.zero()
        return SignedLog(self.log_magnitude - other.log_magnitude, self.sign * other.sign)

    def add(self, other: "SignedLog") -> tuple["SignedLog", float]:
        """Sum with its cancellation ratio ``|result| / max(|self|, |other|)``."""
        return signed_logsumexp([self.log_magnitude, other.log_magnitude], [self.sign, other.sign])

    def __add__(self, other: "SignedLog") -> "SignedLog":
        return self.add(other)[0]

    def __sub__(self, other: "SignedLog") -> "SignedLog":
        return self.add(-other)[0]


def signed_logsumexp(log_mags: Sequence[float], signs: Sequence[int]) -> tuple[SignedLog, float]:
    """Sum of ``sign_i * exp(log_mag_i)`` and the cancellation ratio.

    The ratio is ``|sum| / max_i |term_i|``; values far below one mean the
    result lost that many significant digits to cancellation.
    """
    lm = np.asarray(log_mags, dtype=float)
    sg = np.asarray(signs, dtype=int)
    live = sg != 0
    if not live.any():
        return SignedLog.zero(), 1.0
    lm, sg = lm[live], sg[live]
    top = lm.max()
    scaled = sg * np.exp(lm - top)
    pos = math.fsum(scaled[scaled > 0])
    neg = math.fsum(-scaled[scaled < 0])
    total = pos - neg
    if total == 0:
        return SignedLog.zero(), 0.0
    return SignedLog(top + math.log(abs(total)), 1 if total > 0 else -1), abs(total)


# --------------------------------------------------------------------------
# upper incomplete gamma


def _log_uigamma_cf(a: float, x: float) -> float:
    # modified Lentz evaluation of the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:
        raise NumericInstabilityError(f"continued fraction for Gamma({a}, {x}) did not converge")
    if h <= 0:
        raise NumericInstabilityError(f"continued fraction for Gamma({a}, {x}) lost its sign")
    return -x + a * math.log(x) + math.log(h)


def _log_uigamma_mp(a: float, x: float) -> float:
    with _workprec(136):
        return float(mpmath.log(mpmath.gammainc(a, x)))


def _log_uigamma_downward(a: float, x: float) -> float:
    # a <= 0 and 0 < x < 1: climb down from the first point with a safe start
    if a == math.floor(a):
        b = 0.0
        lg = math.log(special.exp1(x))
    else:
        b = a + math.ceil(-a)
        lg = special.gammaln(b) + math.log(special.gammaincc(b, x))
    logx = math.log(x)
    while b > a + 0.5:
        b -= 1.0
        lt = b * logx - x
        # Gamma(b, x) = (x^b e^-x - Gamma(b+1, x)) / |b| for b < 0
        r = lg - lt
        if r >= -1e-3:
            return _log_uigamma_mp(a, x)
        lg = lt + math.log1p(-math.exp(r)) - math.log(-b)
    return lg


def log_upper_incomplete_gamma(a: float, x: float) -> float:
    """Natural log of ``Gamma(a; x)``, which is positive whenever it exists."""
    if x < 0 or (x == 0 and a <= 0):
        raise DomainError(f"Gamma({a}; {x}) diverges: need x > 0 when a <= 0")
    if x == 0:
        return float(special.gammaln(a))
    if a > 0 and x < a + 1.0:
        q = special.gammaincc(a, x)
        if q > 1e-280:
            return float(special.gammaln(a)) + math.log(q)
    if x >= 1.0 or a > 0:
        return _log_uigamma_cf(a, x)
    return _log_uigamma_downward(a, x)


def upper_incomplete_gamma(a: float, x: float) -> SignedLog:
    """``Gamma(a; x) = int_x^inf t^(a-1) e^-t dt`` for any real ``a``.

    For ``a <= 0`` and small ``x`` the value comes from the downward
    recurrence ``Gamma(a, x) = (Gamma(a+1, x) - x^a e^-x) / a``; a step that
    would cancel badly is redone in extended precision.  Overflow shows up as
    ``SignedLog.saturated``.
    """
    return SignedLog(log_upper_incomplete_gamma(float(a), float(x)), 1)


def upper_incomplete_gamma_mp(a, x, prec: int = 256):
    """Extended-precision ``Gamma(a; x)`` as an ``mpmath.mpf``."""
    if x < 0 or (x == 0 and a <= 0):
        raise DomainError(f"Gamma({a}; {x}) diverges: need x > 0 when a <= 0")
    with _workprec(prec):
        return mpmath.gammainc(mpmath.mpf(a), mpmath.mpf(x))


# --------------------------------------------------------------------------
# factorial-type coefficients


def rising_factorial(a: float, n: int) -> SignedLog:
    """``(a)_n = a (a+1) ... (a+n-1)`` with ``(a)_0 = 1``."""
    if n < 0:
        raise DomainError("rising factorial needs n >= 0")
    logm = 0.0
    sign = 1
    for j in range(n):
        f = a + j
        if f == 0:
            return SignedLog.zero()
        logm += math.log(abs(f))
        if f < 0:
            sign = -sign
    return SignedLog(logm, sign)


@lru_cache(maxsize=64)
def _log_gfc_table(alpha: float, n_max: int) -> np.ndarray:
    table = np.full((n_max + 1, n_max + 1), -np.inf)
    table[0, 0] = 0.0
    log_alpha = math.log(alpha)
    ks = np.arange(n_max + 1)
    for n in range(n_max):
        row = table[n]
        up = np.full(n_max + 1, -np.inf)
        up[1:] = log_alpha + row[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            stay = np.where(ks <= n, np.log(np.maximum(n - ks * alpha, 0.0)) + row, -np.inf)
        table[n + 1] = np.logaddexp(up, stay)
    table.setflags(write=False)
    return table


def log_gen_factorial_table(n_max: int, alpha: float) -> np.ndarray:
    """Table of ``log G(n, k, alpha)`` for ``0 <= k <= n <= n_max``."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    size = max(16, 1 << max(0, int(n_max - 1).bit_length()))
    return _log_gfc_table(float(alpha), size)[: n_max + 1, : n_max + 1]


def gen_factorial_coeff(n: int, k: int, alpha: float) -> SignedLog:
    """Generalised factorial coefficient ``G(n, k, alpha)``.

    Built by the triangular recurrence
    ``G(n+1, k) = alpha G(n, k-1) + (n - k alpha) G(n, k)``; every entry is
    nonnegative for ``alpha`` in (0, 1).
    """
    if n < 0 or not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got n={n}, k={k}")
    value = log_gen_factorial_table(n, alpha)[n, k]
    if value == -np.inf:
        return SignedLog.zero()
    return SignedLog(float(value), 1)


def gen_factorial_coeff_explicit(n: int, k: int, alpha) -> Fraction:
    """``(1/k!) sum_j (-1)^j C(k, j) (-j alpha)_n`` in exact rational arithmetic."""
    if n < 0 or not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got n={n}, k={k}")
    a = Fraction(alpha)
    total = Fraction(0)
    for j in range(k + 1):
        prod = Fraction(1)
        for m in range(n):
            prod *= -j * a + m
        total += (-1) ** j * math.comb(k, j) * prod
    return total / math.factorial(k)


# --------------------------------------------------------------------------
# alternating incomplete-gamma sums


class _GammaColumns:
    """``Gamma(j - i/alpha; beta)`` for integer ``j >= 0``, one column per ``i``."""

    def __init__(self, alpha: float, beta: float):
        self.alpha = alpha
        self.beta = beta
        self._cols: dict[tuple[int, int], list] = {}
        self._lock = threading.Lock()

    def column(self, i: int, top: int, prec: int) -> list:
        key = (prec, i)
        with self._lock:
            col = self._cols.get(key)
        if col is not None and len(col) > top:
            return col
        size = max(64, 1 << int(top).bit_length())
        col = self._build(i, size, prec)
        with self._lock:
            self._cols[key] = col
        return col

    def _build(self, i: int, size: int, prec: int) -> list:
        with _workprec(prec + 32):
            x = mpmath.mpf(self.beta)
            shift = mpmath.mpf(i) / mpmath.mpf(self.alpha)
            logx = mpmath.log(x)
            col = [None] * size
            col[-1] = mpmath.gammainc(size - 1 - shift, x)
            for j in range(size - 2, -1, -1):
                a = j - shift
                if abs(a) < 1e-3:
                    col[j] = mpmath.gammainc(a, x)
                else:
                    col[j] = (col[j + 1] - mpmath.exp(a * logx - x)) / a
            check = mpmath.gammainc(-shift, x)
            if abs(col[0] - check) > abs(check) * mpmath.mpf(2) ** (-prec + 8):
                col = [mpmath.gammainc(j - shift, x) for j in range(size)]
        return col


@lru_cache(maxsize=32)
def _columns(alpha: float, beta: float) -> _GammaColumns:
    return _GammaColumns(alpha, beta)


def _alt_sum_double(m: int, k: int, alpha: float, beta: float) -> tuple[SignedLog, float]:
    logs = []
    signs = []
    log_beta = math.log(beta)
    for i in range(m + 1):
        a = k - i / alpha
        lb = math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1)
        logs.append(lb + (i / alpha) * log_beta + log_upper_incomplete_gamma(a, beta))
        signs.append(-1 if i % 2 else 1)
    return signed_logsumexp(logs, signs)


def _alt_sum_mp(m: int, k: int, alpha: float, beta: float, prec: int):
    cols = _columns(alpha, beta)
    with _workprec(prec):
        bpow = mpmath.mpf(beta) ** (1 / mpmath.mpf(alpha))
        terms = []
        weight = mpmath.mpf(1)
        for i in range(m + 1):
            g = cols.column(i, k, prec)[k]
            terms.append(weight * g if i % 2 == 0 else -weight * g)
            weight = weight * bpow * (m - i) / (i + 1)
        total = mpmath.fsum(terms)
        biggest = max(abs(t) for t in terms)
        return total, biggest


@lru_cache(maxsize=200_000)
def gg_alternating_sum(m: int, k: int, alpha: float, beta: float) -> SignedLog:
    """``sum_{i=0}^{m} C(m, i) (-1)^i beta^(i/alpha) Gamma(k - i/alpha; beta)``.

    Tried first in double precision; when the cancellation ratio falls below
    ``CANCELLATION_THRESHOLD`` the sum is redone in binary floating point of
    increasing precision until at least ``_GUARD_BITS`` bits survive.
    """
    if m < 0:
        raise DomainError("m must be nonnegative")
    if not 0 < alpha < 1 or beta <= 0:
        raise DomainError(f"need 0 < alpha < 1 and beta > 0, got {alpha}, {beta}")
    if m <= _DOUBLE_MAX_M:
        value, ratio = _alt_sum_double(m, k, alpha, beta)
        if ratio >= CANCELLATION_THRESHOLD:
            return value
    with _MP_LOCK:
        return _alt_sum_escalate(m, k, alpha, beta)


def _alt_sum_escalate(m: int, k: int, alpha: float, beta: float) -> SignedLog:
    prec = 256
    while prec <= _MAX_PREC:
        total, biggest = _alt_sum_mp(m, k, alpha, beta, prec)
        if total != 0:
            lost = float(mpmath.log(biggest / abs(total), 2))
            if prec - lost - math.log2(m + 1) >= _GUARD_BITS:
                return SignedLog.from_mpf(total)
            prec = max(2 * prec, int(lost) + 2 * _GUARD_BITS)
        else:
            prec *= 2
    raise NumericInstabilityError(
        f"alternating gamma sum (m={m}, k={k}, alpha={alpha}, beta={beta}) "
        f"still cancels at {_MAX_PREC} bits"
    )


def log_binomial(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def logsumexp_signed(pairs: Iterable[SignedLog]) -> tuple[SignedLog, float]:
    """Sum of a sequence of ``SignedLog`` values and its cancellation ratio."""
    items = list(pairs)
    return signed_logsumexp([p.log_magnitude for p in items], [p.sign for p in items])
