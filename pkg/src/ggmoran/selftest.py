"""Fast property checks bundled with the package (``ggmoran selftest``).

Each check compares an implementation against an independent reference
and finishes in a few seconds.  The full suite lives in ``tests/``.
"""
from __future__ import annotations

import math
import time

import numpy as np

from . import diffusion as dif
from .partition import k_pmf_vector, stable_density
from .special_fn import upper_incomplete_gamma, upper_incomplete_gamma_mp
from .urn_weights import GGParams, gg_weights_exact


def _weight_identity():
    worst = 0.0
    for a in (0.25, 0.5, 0.75):
        p = GGParams(a, 1.0)
        for n in (1, 5, 20):
            for k in range(1, n + 1):
                worst = max(worst, abs(gg_weights_exact(n, k, p).identity_residual(n, k, a)))
    return worst, worst < 1e-10


def _pmf_mass():
    worst = max(abs(k_pmf_vector(n, GGParams(0.5, 1.0)).sum() - 1.0) for n in (1, 10, 30))
    return worst, worst < 1e-8


def _incomplete_gamma():
    worst = 0.0
    for a in (-2.5, -1.0, 0.3, 2.0):
        for x in (0.1, 1.0, 7.0):
            ref = float(upper_incomplete_gamma_mp(a, x))
            worst = max(worst, abs(float(upper_incomplete_gamma(a, x)) / ref - 1.0))
    return worst, worst < 1e-10


def _levy():
    t = np.geomspace(0.05, 20.0, 15)
    levy = t ** -1.5 * np.exp(-1.0 / (4.0 * t)) / (2.0 * math.sqrt(math.pi))
    got = np.array([stable_density(0.5, float(v)) for v in t])
    worst = float(np.max(np.abs(got / levy - 1.0)))
    return worst, worst < 1e-8


def _flow():
    spec = dif.DiffusionSpec(GGParams(0.5, 1.0), 0.0, dt=1e-3, horizon=1.0, noise=False)
    _, s = dif.simulate_path(spec, np.random.default_rng(0))
    err = abs(s[-1] - 4.0 ** (1.0 / 3.0))
    return err, err < 10 * spec.dt


def _constant():
    p = GGParams(0.5, 1.0)
    worst = max(abs(dif._closed_form_constant(p, g) * dif.speed_mass(p, g) - 1.0) for g in (0.1, 0.5, 1.0))
    return worst, worst < 1e-8


def _boundary():
    p = GGParams(0.5, 1.0)
    v0 = dif.boundary_divergence_report(p, 0.0, points_per_decade=1000).verdicts()
    v1 = dif.boundary_divergence_report(p, 0.5, points_per_decade=1000).verdicts()
    ok = (v0["Z(0)"] == v0["Z(inf)"] == v0["M(inf)"] == "infinite" and v0["M(0)"] == "finite"
          and v1["M(inf)"] == v1["N(0)"] == "finite" and v1["N(inf)"] == "infinite")
    return {"gamma0": v0, "gamma0.5": v1}, ok


CHECKS = {"weight_identity": _weight_identity, "pmf_mass": _pmf_mass,
          "incomplete_gamma": _incomplete_gamma, "stable_levy": _levy, "zero_noise_flow": _flow,
          "invariant_constant": _constant, "boundary_pattern": _boundary}


def run_checks() -> dict:
    results = {}
    for name, check in CHECKS.items():
        start = time.perf_counter()
        value, passed = check()
        results[name] = {"value": value, "passed": bool(passed),
                         "seconds": round(time.perf_counter() - start, 3)}
    return results
