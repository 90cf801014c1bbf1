import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggmoran.convergence_lab import total_variation
from ggmoran.errors import DomainError, InsufficientLengthError
from ggmoran.moran import (KChainState, PopulationState, ctmc_paths, ctmc_rates, ctmc_step,
                           initial_k, initial_population, kchain_paths, kchain_prob_table,
                           kchain_run, kchain_step, kchain_transition_probs, moran_k_ensemble,
                           moran_step, rescale_path, rescaled_step_index, scale_steps_to_time)
from ggmoran.partition import k_pmf_vector
from ggmoran.urn_weights import GGParams, gg_weights_exact


def _k_hist(ks, n):
    return np.bincount(np.ravel(ks), minlength=n + 1)[1:] / np.size(ks)


# --------------------------------------------------------------------------
# full particle chain

def test_population_state():
    s = PopulationState((4, 4, 1))
    assert s.n == 3 and s.partition.multiset() == (2, 1)
    with pytest.raises(DomainError):
        PopulationState(())


def test_moran_step_single_individual(rng, params):
    s = PopulationState((7,))
    for mode in ("exact", "approx"):
        nxt = moran_step(s, params, mode, rng)
        assert nxt.types == (0,) and nxt.step == 1  # always a fresh type


def test_moran_step_mode_checked(rng, params):
    with pytest.raises(DomainError):
        moran_step(PopulationState((0, 1)), params, "m1_reduced", rng)


@given(seed=st.integers(0, 2 ** 32 - 1), mode=st.sampled_from(["exact", "approx"]))
@settings(max_examples=60, deadline=None)
def test_moran_step_changes_one_coordinate(seed, mode):
    rng = np.random.default_rng(seed)
    s = initial_population(12, GGParams(0.5, 1.0), "exact", rng)
    nxt = moran_step(s, GGParams(0.5, 1.0), mode, rng)
    assert sum(a != b for a, b in zip(s.types, nxt.types)) <= 1
    assert abs(nxt.partition.k - s.partition.k) <= 1
    assert nxt.partition.n == 12


def test_moran_fresh_label_unused(rng):
    # beta large: new types are likely, and a new label must not collide
    p = GGParams(0.5, 50.0)
    s = PopulationState((0, 0, 1, 2))
    for _ in range(200):
        s = moran_step(s, p, "approx", rng)
        assert s.partition.k == len(set(s.types))


def test_decrease_probability_from_distinct(params):
    n, reps = 5, 10 ** 6
    k = moran_k_ensemble(n, 1, params, "exact", reps, np.random.default_rng(31), checkpoints=[1],
                         initial="distinct")[0]
    # the removed individual is a singleton; the replacement copies one of the 4 left
    p = (n - 1 - params.alpha * (n - 1)) * gg_weights_exact(n - 1, n - 1, params).g1
    se = math.sqrt(p * (1 - p) / reps)
    assert abs(np.mean(k == n - 1) - p) < 3 * se
    assert np.all((k == n) | (k == n - 1))


def test_ensemble_matches_scalar_step(params):
    # one step from a fixed state: vectorised and scalar chains agree in law
    reps = 40_000
    k_vec = moran_k_ensemble(6, 3, params, "exact", reps, np.random.default_rng(2), checkpoints=[3],
                             initial="distinct")[0]
    rng = np.random.default_rng(3)
    k_sc = []
    for _ in range(4000):
        s = PopulationState(tuple(range(6)))
        for _ in range(3):
            s = moran_step(s, params, "exact", rng)
        k_sc.append(s.partition.k)
    a, b = _k_hist(k_vec, 6), _k_hist(k_sc, 6)
    assert total_variation(k_vec, k_sc) < 0.03
    assert a.argmax() == b.argmax()


def test_stationary_start_stays_stationary(params):
    n, reps = 10, 100_000
    ks = moran_k_ensemble(n, 50, params, "exact", reps, np.random.default_rng(4), checkpoints=[0, 50])
    pmf = k_pmf_vector(n, params)
    for row in ks:
        assert 0.5 * np.abs(_k_hist(row, n) - pmf).sum() < 0.01


def test_long_run_matches_exact_pmf(params):
    # 1000 chains from the all-distinct state, 10^5 steps each; snapshots
    # every 500 steps after a burn-in of 5000 are pooled
    n = 50
    checkpoints = np.arange(5000, 10 ** 5 + 1, 500)
    ks = moran_k_ensemble(n, 10 ** 5, params, "exact", 1000, np.random.default_rng(5),
                          checkpoints=checkpoints, initial="distinct")
    d = 0.5 * np.abs(_k_hist(ks, n) - k_pmf_vector(n, params)).sum()
    assert d < 0.01


def test_ensemble_validation(params, rng):
    with pytest.raises(DomainError):
        moran_k_ensemble(5, 3, params, "exact", 2, rng, checkpoints=[4])
    with pytest.raises(DomainError):
        moran_k_ensemble(5, 3, params, "exact", 2, rng, initial="other")


# --------------------------------------------------------------------------
# reduced chain

def test_kchain_state_validation():
    with pytest.raises(DomainError):
        KChainState(0, 1)
    with pytest.raises(DomainError):
        KChainState(5, 0)


def test_kchain_example_verbatim(params):
    up, down, stay = kchain_transition_probs(100, 10, params, "approx")
    assert up == pytest.approx((1 - 0.05) * (10 * 0.5 / 99 + 1 / 100), rel=1e-14)
    assert up == pytest.approx(0.057480, abs=1e-6)
    assert down == pytest.approx(0.05 * (99 - 0.5 * 9) * (1 / 99 - 1 / (99 * 9 ** 2)), rel=1e-14)
    assert stay == pytest.approx(1 - up - down)


@pytest.mark.parametrize("mode", ["approx", "m1_reduced"])
def test_kchain_boundaries(mode, params):
    for n in (2, 5, 60):
        assert kchain_transition_probs(n, 1, params, mode)[1] == 0.0
        assert kchain_transition_probs(n, n, params, mode)[0] == 0.0
    assert kchain_transition_probs(1, 1, params, mode) == (0.0, 0.0, 1.0)


@pytest.mark.parametrize("alpha,beta", [(0.25, 0.5), (0.5, 1.0), (0.75, 5.0), (0.1, 20.0)])
def test_kchain_probability_vectors(alpha, beta):
    p = GGParams(alpha, beta)
    for n in (1, 2, 3, 10, 100, 1000, 10_000):
        ks = range(1, n + 1) if n <= 1000 else np.unique(np.geomspace(1, n, 300).astype(int))
        for k in ks:
            up, down, stay = kchain_transition_probs(n, int(k), p, "approx")
            assert min(up, down, stay) >= 0.0 and max(up, down, stay) <= 1.0
            assert (up + down) + stay == 1.0
    for n in (2, 50, 201) if p == GGParams(0.5, 1.0) else (2, 50):
        for k in range(1, n + 1):
            up, down, stay = kchain_transition_probs(n, k, p, "m1_reduced")
            assert min(up, down, stay) >= 0.0 and (up + down) + stay == 1.0


def test_kchain_modes_checked(params):
    with pytest.raises(DomainError):
        kchain_transition_probs(300, 3, params, "m1_reduced")
    with pytest.raises(DomainError):
        kchain_transition_probs(30, 3, params, "exact")
    with pytest.raises(DomainError):
        kchain_transition_probs(3, 4, params, "approx")


def test_kchain_step_support(params):
    rng = np.random.default_rng(9)
    for _ in range(500):
        assert kchain_step(KChainState(20, 1), params, "approx", rng).k in (1, 2)
        assert kchain_step(KChainState(20, 20), params, "approx", rng).k in (19, 20)
        assert kchain_step(KChainState(20, 7), params, "approx", rng).k in (6, 7, 8)


def test_kchain_run_and_paths_share_stream(params):
    path = kchain_run(KChainState(80, 9), 400, params, "approx", np.random.default_rng(1))
    vec = kchain_paths(80, [9], np.arange(401), params, "approx", np.random.default_rng(1))[:, 0]
    assert [s.k for s in path] == vec.tolist()
    assert [s.step for s in path] == list(range(401))


@pytest.mark.parametrize("mode", ["approx", "m1_reduced"])
def test_kchain_long_run_mode(mode, params):
    n = 100
    ks = kchain_paths(n, np.full(200, 10), np.arange(2000, 40_001, 200), params, mode,
                      np.random.default_rng(3))
    mode_k = np.bincount(ks.ravel()).argmax()
    assert 2 <= mode_k <= 25


def test_kchain_recurrence(params):
    # from every start the chain visits both k <= 2 and k >= ceil(3 n^alpha)
    n = 50
    top = math.ceil(3 * n ** params.alpha)
    k = np.arange(1, n + 1)
    low_seen = np.zeros(n, bool)
    high_seen = np.zeros(n, bool)
    rng = np.random.default_rng(4)
    steps = 0
    while not (low_seen.all() and high_seen.all()):
        assert steps < 10 ** 7
        block = kchain_paths(n, k, np.arange(1, 20_001), params, "approx", rng)
        low_seen |= (block <= 2).any(axis=0)
        high_seen |= (block >= top).any(axis=0)
        k = block[-1]
        steps += 20_000


def test_reduction_error_is_measurable(params):
    # Both chains start from the stationary law of the particle chain.  The
    # particle chain stays there; the reduced chain, whose M1 = alpha K
    # substitution drops the singleton excess that balances the new-type
    # drift, moves upward.
    n, reps, steps = 30, 50_000, 640
    full = moran_k_ensemble(n, steps, params, "exact", reps, np.random.default_rng(6),
                            checkpoints=[0, steps])
    red = kchain_paths(n, full[0], [steps], params, "m1_reduced", np.random.default_rng(7))[0]
    pmf = k_pmf_vector(n, params)
    assert 0.5 * np.abs(_k_hist(full[1], n) - pmf).sum() < 0.02
    se = math.hypot(full[1].std(), red.std()) / math.sqrt(reps)
    assert red.mean() - full[1].mean() > 10 * se
    assert total_variation(full[1], red) > 0.1


# --------------------------------------------------------------------------
# continuous-time chain

@given(n=st.integers(1, 10 ** 6), k=st.integers(2, 10 ** 4), g=st.floats(0.01, 3.0))
@settings(max_examples=200, deadline=None)
def test_ctmc_rate_difference(n, k, g):
    p = GGParams(0.5, 1.0)
    up, down = ctmc_rates(n, k, p, g)
    # the symmetric term cancels; only its rounding error is left
    assert float(up - down) == pytest.approx(p.beta / k ** (1 / p.alpha), rel=1e-9, abs=1e-14 * float(up))


def test_ctmc_examples(params):
    _, down = ctmc_rates(100, 10, params, 1.0)
    assert float(down) == pytest.approx(0.05, rel=1e-14)
    up, down = ctmc_rates(100, 1, params, 1.0)
    assert float(down) == 0.0 and float(up) > 0


def test_ctmc_step(params):
    rng = np.random.default_rng(2)
    state = KChainState(100, 10)
    holds, moves = [], []
    for _ in range(20_000):
        nxt, h = ctmc_step(state, params, 1.0, rng)
        assert h > 0 and abs(nxt.k - state.k) == 1
        holds.append(h)
        moves.append(nxt.k - state.k)
    up, down = (float(x) for x in ctmc_rates(100, 10, params, 1.0))
    assert np.mean(holds) == pytest.approx(1 / (up + down), rel=0.03)
    assert np.mean(np.array(moves) == 1) == pytest.approx(up / (up + down), abs=0.015)
    assert ctmc_step(KChainState(100, 1), params, 1.0, rng)[0].k == 2
    with pytest.raises(DomainError):
        ctmc_step(state, params, 0.0, rng)


def test_ctmc_paths_positive(params):
    ks = ctmc_paths(100, np.full(300, 3), [0.0, 5.0, 50.0], params, 0.5, np.random.default_rng(1))
    assert ks.shape == (3, 300) and ks.min() >= 1
    assert np.all(ks[0] == 3)


# --------------------------------------------------------------------------
# rescaling

def test_rescaled_indices():
    assert rescaled_step_index(10, 0.5, 1.0) == 31
    assert rescaled_step_index(100, 0.5, 0.5) == 500
    assert rescaled_step_index(100, 0.5, 0.0) == 0
    assert scale_steps_to_time(100, 0.5) == pytest.approx(1000.0)


def test_rescale_path(params):
    raw = kchain_run(KChainState(100, 10), 1000, params, "approx", np.random.default_rng(1))
    r = rescale_path(raw, params, [0.0, 0.5, 1.0])
    assert r.values[0] == pytest.approx(10 / 10)
    assert r.values[1] == pytest.approx(raw[500].k / 10)
    assert r.values[2] == pytest.approx(raw[1000].k / 10)
    with pytest.raises(InsufficientLengthError):
        rescale_path(raw, params, [0.0, 1.001])
    with pytest.raises(InsufficientLengthError):
        rescale_path([], params, [0.0])
    with pytest.raises(DomainError):
        rescale_path(raw, params, [0.5, 0.1])


def test_initial_k():
    assert initial_k(1.0, 100, 0.5) == 10
    assert initial_k(0.0, 100, 0.5) == 1
    assert initial_k(50.0, 100, 0.5) == 100


def test_prob_table_matches_scalar(params):
    up, down = kchain_prob_table(40, params, "m1_reduced")
    for k in (1, 7, 40):
        u, d, _ = kchain_transition_probs(40, k, params, "m1_reduced")
        assert (up[k], down[k]) == (u, d)
