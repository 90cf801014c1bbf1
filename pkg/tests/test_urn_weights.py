import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GRID_ALPHAS, GRID_BETAS
from ggmoran.errors import DomainError
from ggmoran.urn_weights import (EXACT_N_MAX, GGParams, PYParams, approx_g0_raw, approx_g1_raw,
                                 exact_weight_table, gg_weights_approx, gg_weights_exact,
                                 new_type_probability, py_weights)
from oracles import alt_sum_termwise, gg_weights_integral


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.2, -0.3, math.nan])
def test_alpha_domain(alpha):
    with pytest.raises(DomainError):
        GGParams(alpha, 1.0)


@pytest.mark.parametrize("beta", [0.0, -1.0, math.inf, math.nan])
def test_beta_domain(beta):
    with pytest.raises(DomainError):
        GGParams(0.5, beta)


def test_tau_round_trip():
    p = GGParams.from_tau(0.3, 2.5)
    assert p.tau == pytest.approx(2.5, rel=1e-14)
    assert p.beta == pytest.approx(2.5 ** 0.3 / 0.3, rel=1e-14)


def test_py_params_domain():
    PYParams(-0.5, 1.5)  # m = 3
    PYParams(0.0, 1.0)
    PYParams(0.3, -0.2)
    for a, t in [(-0.5, 0.7), (0.3, -0.4), (1.0, 1.0), (-0.5, 0.0)]:
        with pytest.raises(DomainError):
            PYParams(a, t)


def test_exact_n1_k1_identity():
    for a in GRID_ALPHAS:
        for b in GRID_BETAS:
            w = gg_weights_exact(1, 1, GGParams(a, b))
            assert w.g0 + (1 - a) * w.g1 == pytest.approx(1.0, abs=1e-10)


def test_exact_vs_termwise_oracle():
    a, b, n, k = 0.5, 1.0, 5, 3
    with mpmath.workdps(60):
        den = alt_sum_termwise(n - 1, k, a, b)
        g0 = mpmath.mpf(a) / n * alt_sum_termwise(n, k + 1, a, b) / den
        g1 = alt_sum_termwise(n, k, a, b) / den / n
    w = gg_weights_exact(n, k, GGParams(a, b))
    assert w.g0 == pytest.approx(float(g0), rel=1e-12)
    assert w.g1 == pytest.approx(float(g1), rel=1e-12)


@pytest.mark.parametrize("n,k", [(40, 6), (120, 12), (200, 14), (200, 150)])
def test_exact_vs_integral_oracle(n, k):
    w = gg_weights_exact(n, k, GGParams(0.5, 1.0))
    g0, g1 = gg_weights_integral(n, k, 0.5, 1.0)
    assert w.g0 == pytest.approx(g0, rel=1e-9)
    assert w.g1 == pytest.approx(g1, rel=1e-9)


def test_exact_mismatch_shrinks_with_n():
    p = GGParams(0.4, 2.0)
    gap = lambda n: abs(gg_weights_exact(n, 10, p).g0 - gg_weights_approx(n, 10, p).g0_raw)  # noqa: E731
    assert gap(50) < gap(25)


def test_exact_weights_in_range():
    for a in GRID_ALPHAS:
        p = GGParams(a, 1.0)
        for n in (1, 7, 30):
            for k in range(1, n + 1):
                w = gg_weights_exact(n, k, p)
                assert 0.0 <= w.g0 <= 1.0 and w.g1 >= 0.0


def test_exact_limited_to_threshold():
    with pytest.raises(DomainError):
        gg_weights_exact(EXACT_N_MAX + 1, 3, GGParams(0.5, 1.0))
    with pytest.raises(DomainError):
        gg_weights_exact(5, 6, GGParams(0.5, 1.0))


def test_approx_examples():
    w = gg_weights_approx(100, 10, GGParams(0.5, 1.0))
    assert w.g0_raw == pytest.approx(0.06, abs=1e-15)
    assert w.g1_raw == pytest.approx(0.0099, abs=1e-15)
    assert approx_g0_raw(100, 10, GGParams(0.5, 1.0)) == pytest.approx(0.06)
    assert approx_g1_raw(100, 10, GGParams(0.5, 1.0)) == pytest.approx(0.0099)


def test_approx_clamped_view_keeps_raw():
    w = gg_weights_approx(1, 1, GGParams(0.5, 1.0))
    assert w.g0_raw == pytest.approx(1.5)
    assert w.g0 == 1.0
    assert w.g1_raw == 0.0 and w.g1 == 0.0
    neg = gg_weights_approx(2, 1, GGParams(0.5, 5.0))
    assert neg.g1_raw < 0 and neg.g1 == 0.0
    assert neg.clamped().g1 == 0.0


def test_approx_convergence_trend():
    p = GGParams(0.5, 1.0)
    d0, d1 = [], []
    for n in (10 ** 2, 10 ** 3, 10 ** 4):
        k = int(math.floor(n ** p.alpha))
        g0, g1 = gg_weights_integral(n, k, p.alpha, p.beta)
        w = gg_weights_approx(n, k, p)
        d0.append(n * abs(g0 - w.g0_raw))
        d1.append(n * abs(g1 - w.g1_raw))
    assert d1[0] > d1[1] > d1[2]
    assert max(d0) < 1.0 and d0[2] <= d0[0]


def test_approx_at_large_n_beats_smaller_n():
    p = GGParams(0.5, 1.0)
    g0_big, _ = gg_weights_integral(10 ** 4, 100, 0.5, 1.0)
    g0_small, _ = gg_weights_integral(10 ** 3, 31, 0.5, 1.0)
    big = abs(approx_g0_raw(10 ** 4, 100, p) - g0_big) * 10 ** 4
    small = abs(approx_g0_raw(10 ** 3, 31, p) - g0_small) * 10 ** 3
    assert big < small


def test_py_examples():
    assert py_weights(10, 3, PYParams(0.0, 1.0)).g0 == pytest.approx(1 / 11)
    w = py_weights(10, 3, PYParams(0.5, 1.0))
    assert w.g0 == pytest.approx(2.5 / 11) and w.g1 == pytest.approx(1 / 11)


@given(a=st.floats(0.0, 0.95), t=st.floats(0.01, 20), n=st.integers(1, 500), data=st.data())
@settings(max_examples=200, deadline=None)
def test_py_identity(a, t, n, data):
    k = data.draw(st.integers(1, n))
    w = py_weights(n, k, PYParams(a, t))
    assert w.identity_residual(n, k, a) == pytest.approx(0.0, abs=1e-12)


def test_gg_distinct_from_py():
    gg = gg_weights_exact(20, 5, GGParams(0.5, 1.0))
    for theta in (0.5, 1.0, 2.0, 5.0):
        assert abs(py_weights(20, 5, PYParams(0.5, theta)).g0 - gg.g0) > 1e-4


def test_weight_table_matches_scalar():
    p = GGParams(0.25, 5.0)
    g0, g1 = exact_weight_table(40, p)
    for n, k in [(1, 1), (17, 4), (40, 40), (33, 2)]:
        w = gg_weights_exact(n, k, p)
        assert g0[n, k] == w.g0 and g1[n, k] == w.g1
    assert g0[0, 0] == 1.0
    with pytest.raises(DomainError):
        exact_weight_table(EXACT_N_MAX + 1, p)


def test_new_type_probability():
    p = GGParams(0.5, 1.0)
    assert np.all(new_type_probability(0, [0], p, "approx") == 1.0)
    assert new_type_probability(1, 1, p, "approx") == 1.0
    assert new_type_probability(7, 3, p, "exact") == pytest.approx(gg_weights_exact(7, 3, p).g0)
    with pytest.raises(DomainError):
        new_type_probability(7, 3, p, "bogus")
