"""Command-line entry point.

Every run writes its artifacts plus a JSON sidecar into ``--out``.  Passing
the sidecar back with ``--config`` reproduces the run exactly.  Config files
are flat YAML or JSON mappings whose keys are the long flag names with
underscores; explicit flags override file values.

Exit codes: 0 success, 2 validation, 3 numeric failure, 4 I/O.  Errors are
reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import convergence_lab as lab
from . import diffusion as dif
from . import moran
from .errors import DomainError, GGMoranError, NumericInstabilityError
from .io import OutputError, long_rows, write_csv, write_json
from .partition import MODES, k_pmf_vector, urn_cluster_counts
from .urn_weights import EXACT_N_MAX, GGParams

SEED_ENV = "GGMORAN_SEED"
SIDECAR = "run.json"

COMMON = {"alpha": 0.5, "beta": 1.0, "seed": None, "out": "ggmoran_out", "workers": None}

DEFAULTS = {
    "urn": {"n": 100, "replicates": 10_000, "mode": "exact"},
    "moran": {"n": 30, "steps": 300, "replicates": 100, "mode": "exact", "initial": "urn",
              "record_every": 1},
    "kchain": {"n": 100, "steps": 1000, "replicates": 10, "mode": "approx", "s0": 1.0,
               "rescale": False, "horizon": 1.0, "points": 101},
    "ctmc": {"n": 100, "gamma": 0.5, "replicates": 10, "s0": 1.0, "horizon": 1.0, "points": 101},
    "sde": {"alphas": [0.5], "gamma": 0.0, "dt": 1e-3, "horizon": 1.0, "s0": 1.0,
            "replicates": 5, "policy": "full_truncation", "eps": 1e-8, "record_every": 10},
    "density": {"gammas": [0.1, 0.05, 0.025, 0.0], "xmin": 0.5, "xmax": 5.0, "points": 451},
    "verify": {"experiment": "scaling", "n_list": [50, 200, 800], "gamma_list": [1.0, 0.3, 0.1],
               "gamma": 0.5, "times": [0.0, 0.5, 1.0], "replicates": 10_000, "metric": "W1",
               "mode": "approx", "n": 30, "steps": 300},
    "selftest": {},
}

# flag name -> (type, nargs, choices)
SCHEMA = {
    "alpha": (float, None, None), "beta": (float, None, None), "seed": (int, None, None),
    "out": (str, None, None), "workers": (int, None, None),
    "n": (int, None, None), "replicates": (int, None, None), "steps": (int, None, None),
    "mode": (str, None, None), "initial": (str, None, ("urn", "distinct")),
    "record_every": (int, None, None), "s0": (float, None, None), "rescale": (bool, None, None),
    "horizon": (float, None, None), "points": (int, None, None), "gamma": (float, None, None),
    "alphas": (float, "+", None), "dt": (float, None, None), "policy": (str, None, dif.POLICIES),
    "eps": (float, None, None), "gammas": (float, "+", None), "xmin": (float, None, None),
    "xmax": (float, None, None), "experiment": (str, None, lab.EXPERIMENTS),
    "n_list": (int, "+", None), "gamma_list": (float, "+", None), "times": (float, "+", None),
    "metric": (str, None, lab.METRICS),
}

_MODE_CHOICES = {"urn": MODES, "moran": ("exact", "approx"), "kchain": moran.KCHAIN_MODES,
                 "verify": moran.KCHAIN_MODES}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise DomainError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ggmoran", description="Generalised gamma population model toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=f"run the {name} subcommand")
        p.add_argument("--config", help="YAML or JSON file of flag values")
        for key in list(COMMON) + list(defaults):
            typ, nargs, choices = SCHEMA[key]
            if key == "mode":
                choices = _MODE_CHOICES[name]
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=key, type=typ, nargs=nargs, choices=choices,
                               default=argparse.SUPPRESS)
    return parser


def load_config(path: str | os.PathLike) -> dict:
    """Read a flat mapping; sidecars (``{"command", "config"}``) are unwrapped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise DomainError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise DomainError("config must be a mapping of flag names to values")
    return data


def _coerce(key: str, value):
    typ, nargs, choices = SCHEMA[key]
    try:
        if value is None:
            return None
        if nargs:
            vals = value if isinstance(value, (list, tuple)) else [value]
            return [typ(v) for v in vals]
        if typ is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        out = typ(value)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"config value for {key!r} has the wrong type: {value!r}") from exc
    if choices and out not in choices:
        raise DomainError(f"{key} must be one of {choices}, got {out!r}")
    return out


def resolve_config(command: str, flags: dict, config_path: str | None) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {**COMMON, **DEFAULTS[command]}
    if config_path:
        for key, value in load_config(config_path).items():
            if key not in cfg:
                raise DomainError(f"unknown config key {key!r} for {command}")
            cfg[key] = _coerce(key, value)
    cfg.update(flags)
    if cfg["seed"] is None:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise DomainError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    if cfg["workers"] is None:
        cfg["workers"] = lab.default_workers()
    if "mode" in cfg and cfg["mode"] not in _MODE_CHOICES[command]:
        raise DomainError(f"mode must be one of {_MODE_CHOICES[command]}, got {cfg['mode']!r}")
    _validate(command, cfg)
    return cfg


def _positive_int(cfg, *keys):
    for k in keys:
        if k in cfg and not (isinstance(cfg[k], int) and cfg[k] >= 1):
            raise DomainError(f"{k} must be a positive integer, got {cfg[k]!r}")


def _validate(command: str, cfg: dict) -> None:
    GGParams(cfg["alpha"], cfg["beta"])
    for a in cfg.get("alphas", []):
        GGParams(a, cfg["beta"])
    _positive_int(cfg, "n", "replicates", "points", "record_every", "workers")
    if "steps" in cfg and cfg["steps"] < 0:
        raise DomainError("steps must be nonnegative")
    for k in ("horizon", "dt", "eps", "s0", "xmin"):
        if k in cfg and not (isinstance(cfg[k], float) and cfg[k] > 0 and math.isfinite(cfg[k])):
            raise DomainError(f"{k} must be positive and finite, got {cfg[k]!r}")
    if "gamma" in cfg and cfg["gamma"] < 0:
        raise DomainError("gamma must be nonnegative")
    if command == "ctmc" and cfg["gamma"] <= 0:
        raise DomainError("the continuous-time chain needs gamma > 0")
    if command == "density":
        if cfg["xmax"] <= cfg["xmin"]:
            raise DomainError("xmax must exceed xmin")
        if any(g < 0 for g in cfg["gammas"]):
            raise DomainError("gammas must be nonnegative")
    if command == "urn" and cfg["mode"] == "exact" and cfg["n"] > EXACT_N_MAX + 1:
        raise DomainError(f"exact mode is limited to n <= {EXACT_N_MAX + 1}; use approx or hybrid")
    if command == "verify" and any(t < 0 for t in cfg["times"]):
        raise DomainError("times must be nonnegative")


# --------------------------------------------------------------------------
# subcommands


def _rng(cfg) -> np.random.Generator:
    return np.random.default_rng(cfg["seed"])


def _params(cfg) -> GGParams:
    return GGParams(cfg["alpha"], cfg["beta"])


def cmd_urn(cfg) -> list[Path]:
    params = _params(cfg)
    k, m1 = urn_cluster_counts(cfg["n"], params, cfg["mode"], cfg["replicates"], _rng(cfg))
    counts = np.bincount(k, minlength=cfg["n"] + 1)
    pmf = k_pmf_vector(cfg["n"], params) if cfg["n"] <= EXACT_N_MAX else None
    rows = []
    for kk in range(1, cfg["n"] + 1):
        exact = "" if pmf is None else pmf[kk - 1]
        if counts[kk] or (pmf is not None and pmf[kk - 1] > 1e-12):
            rows.append((kk, int(counts[kk]), counts[kk] / k.size, exact))
    summary = {"mean_k": float(k.mean()), "mean_k_over_n_alpha": float(k.mean() / cfg["n"] ** cfg["alpha"]),
               "mean_m1_over_k": float(np.mean(m1 / k))}
    return [write_csv(cfg["out"], "urn_k_hist.csv", ["k", "count", "freq", "pmf"], rows),
            write_json(cfg["out"], "urn_summary.json", summary)]


def cmd_moran(cfg) -> list[Path]:
    steps = list(range(0, cfg["steps"] + 1, cfg["record_every"]))
    k = moran.moran_k_ensemble(cfg["n"], cfg["steps"], _params(cfg), cfg["mode"], cfg["replicates"],
                               _rng(cfg), steps, cfg["initial"])
    return [write_csv(cfg["out"], "moran_k.csv", ["replicate", "step", "k"], long_rows(steps, k))]


def cmd_kchain(cfg) -> list[Path]:
    params = _params(cfg)
    n = cfg["n"]
    k0 = np.repeat(moran.initial_k(cfg["s0"], n, params.alpha), cfg["replicates"])
    if cfg["rescale"]:
        times = np.linspace(0.0, cfg["horizon"], cfg["points"])
        steps = moran.rescaled_step_index(n, params.alpha, times)
        k = moran.kchain_paths(n, k0, steps, params, cfg["mode"], _rng(cfg))
        return [write_csv(cfg["out"], "kchain_rescaled.csv", ["replicate", "t", "s"],
                          long_rows(times, k / n ** params.alpha))]
    steps = np.arange(cfg["steps"] + 1)
    k = moran.kchain_paths(n, k0, steps, params, cfg["mode"], _rng(cfg))
    return [write_csv(cfg["out"], "kchain_paths.csv", ["replicate", "step", "k"], long_rows(steps, k))]


def cmd_ctmc(cfg) -> list[Path]:
    params = _params(cfg)
    n = cfg["n"]
    k0 = np.repeat(moran.initial_k(cfg["s0"], n, params.alpha), cfg["replicates"])
    times = np.linspace(0.0, cfg["horizon"], cfg["points"])
    k = moran.ctmc_paths(n, k0, times * float(n) ** (1 + params.alpha), params, cfg["gamma"], _rng(cfg))
    return [write_csv(cfg["out"], "ctmc_rescaled.csv", ["replicate", "t", "s"],
                      long_rows(times, k / n ** params.alpha))]


def cmd_sde(cfg) -> list[Path]:
    written = []
    for a in cfg["alphas"]:
        spec = dif.DiffusionSpec(GGParams(a, cfg["beta"]), cfg["gamma"], dt=cfg["dt"],
                                 horizon=cfg["horizon"], s0=cfg["s0"], boundary_policy=cfg["policy"],
                                 eps=cfg["eps"], seed=cfg["seed"], record_every=cfg["record_every"])
        rng = _rng(cfg)  # same seed for every alpha, so the paths can be overlaid
        paths = [dif.simulate_path(spec, rng) for _ in range(cfg["replicates"])]
        times = paths[0][0]
        states = np.stack([p[1] for p in paths], axis=1)
        written.append(write_csv(cfg["out"], f"sde_alpha{a:g}_gamma{cfg['gamma']:g}.csv",
                                 ["replicate", "t", "s"], long_rows(times, states)))
    return written


def cmd_density(cfg) -> list[Path]:
    params = _params(cfg)
    x = np.linspace(cfg["xmin"], cfg["xmax"], cfg["points"])
    written = []
    for g in cfg["gammas"]:
        _, m = dif.scale_speed(x, params, g)
        written.append(write_csv(cfg["out"], f"density_speed_gamma{g:g}.csv", ["x", "value"], zip(x, m)))
        if g > 0:
            f = dif.invariant_density(x, params, g)
            written.append(write_csv(cfg["out"], f"density_invariant_gamma{g:g}.csv", ["x", "value"],
                                     zip(x, f)))
    return written


def cmd_verify(cfg) -> list[Path]:
    params = _params(cfg)
    exp = cfg["experiment"]
    common = {"seed": cfg["seed"], "workers": cfg["workers"]}
    if exp == "scaling":
        table = lab.scaling_experiment(cfg["n_list"], cfg["times"], params, cfg["replicates"],
                                       cfg["mode"], metric=cfg["metric"], **common)
    elif exp == "gamma_limit":
        table = lab.gamma_limit_experiment(cfg["gamma_list"], cfg["times"], params, cfg["replicates"],
                                           metric=cfg["metric"], **common)
    elif exp == "ctmc_limit":
        table = lab.ctmc_limit_experiment(cfg["n_list"], cfg["gamma"], cfg["times"], params,
                                          cfg["replicates"], metric=cfg["metric"], **common)
    elif exp == "stationarity":
        rep = lab.stationarity_experiment(cfg["n"], cfg["steps"], params, cfg["replicates"], **common)
        return [write_json(cfg["out"], "stationarity.json", rep.to_dict())]
    else:
        if not cfg["gamma"] > 0:
            raise DomainError("the invariant experiment needs gamma > 0")
        x = lab.stationary_occupation(params, cfg["gamma"], cfg["replicates"], max(max(cfg["times"]), 0.25),
                                      0.25, **common)
        report = {"samples": int(x.size),
                  "ks": lab.ks_to_cdf(x, lambda v: dif.invariant_cdf(v, params, cfg["gamma"])),
                  "tail_exponent": lab.tail_exponent_estimate(x, 0.01) if x.size >= 10_000 else None,
                  "target_tail_exponent": 1.0 + cfg["gamma"]}
        return [write_json(cfg["out"], "invariant.json", report)]
    return [write_json(cfg["out"], f"{exp}.json", table.to_dict()),
            write_csv(cfg["out"], f"{exp}.csv", [table.axis_name, "t", "distance", "noise_floor"],
                      table.csv_rows())]


def cmd_selftest(cfg) -> list[Path]:
    from .selftest import run_checks

    results = run_checks()
    path = write_json(cfg["out"], "selftest.json", results)
    failed = [name for name, r in results.items() if not r["passed"]]
    if failed:
        raise NumericInstabilityError(f"self-test failures: {', '.join(failed)}")
    return [path]


COMMANDS = {"urn": cmd_urn, "moran": cmd_moran, "kchain": cmd_kchain, "ctmc": cmd_ctmc,
            "sde": cmd_sde, "density": cmd_density, "verify": cmd_verify, "selftest": cmd_selftest}


def run(command: str, cfg: dict) -> list[Path]:
    """Execute one subcommand with a resolved config and write its sidecar."""
    written = COMMANDS[command](cfg)
    sidecar = {"command": command, "config": cfg, "version": __version__,
               "artifacts": [p.name for p in written]}
    written.append(write_json(cfg["out"], SIDECAR, sidecar))
    return written


def _fail(exc: BaseException, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        config_path = args.pop("config", None)
        cfg = resolve_config(command, args, config_path)
        for path in run(command, cfg):
            print(path)
        return 0
    except GGMoranError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, OutputError.exit_code)
    except (ArithmeticError, FloatingPointError) as exc:
        return _fail(exc, NumericInstabilityError.exit_code)


if __name__ == "__main__":
    sys.exit(main())
