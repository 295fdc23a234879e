"""Command-line experiment runner.

    jgl run <config.json | preset:NAME> [--workers K] [--out DIR]
    jgl presets [--show NAME]
    jgl validate <config.json | preset:NAME>

A run splits the experiment into independent tasks, evaluates them in a
process pool and merges results ordered by task key, so CSV bytes depend only
on the configuration.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .asymptotics import (
    aggregate,
    exponent_fit,
    increment_decay_fit,
    normalizer_kind_for,
    predicted_exponent,
    subordinate_angles,
    theta_separation,
    write_exponent_report,
    xi_from_trajectory,
)
from .coeffstream import ensemble_params, materialize, stream_from_dict
from .dynamics import evolve_moments, transport_exponent_fit, write_transport_csv
from .errors import ConfigError, DomainError, NumericalFlag
from .greens import ct_verify, decay_fit, write_greens_csv
from .spectral import (
    de_joint_density_check,
    eigensystem,
    trace_moment_check,
    truncate,
    write_spectrum_csv,
)
from .transfer import HALF_PI, log_grid, oscillatory_sum, run_trajectory, theta_increment_series, write_trajectory_csv

EXPERIMENTS = ("exponents", "xi", "subordinate", "spectrum", "de_stats", "dynamics", "greens", "diagnose")
DEFAULT_ENERGIES = [0.0, 0.5, -0.5, 1.0, -1.0]

# ---------------------------------------------------------------------------
# presets


def _ups(eta1, eta2, lambda1, lambda2):
    return {"kind": "upsilon", "eta1": eta1, "eta2": eta2, "lambda1": lambda1, "lambda2": lambda2}


PRESETS = {
    "supercritical": {
        "description": "gamma > 1/2: ||T||^2 exponent -eta1",
        "experiment": "exponents", "ensemble": _ups(0.7, 0.0, 1.0, 1.0),
        "n_max": 1_000_000, "window": [1e4, 1e6], "seeds": {"master": 2024, "count": 20},
    },
    "critical": {
        "description": "gamma = 1/2: R^2 exponent Lambda + eta1, ||T||^2 exponent Lambda - eta1",
        "experiment": "exponents", "ensemble": _ups(0.6, 0.1, 1.0, 1.0),
        "n_max": 1_000_000, "window": [1e4, 1e6], "seeds": {"master": 2024, "count": 20},
    },
    "subcritical": {
        "description": "gamma < 1/2: ||T||^2 against n^(1 - 2 gamma)",
        "experiment": "exponents", "ensemble": _ups(0.4, 0.1, 1.0, 2.0),
        "n_max": 1_000_000, "window": [1e4, 1e6], "tolerance": 0.3, "seeds": {"master": 2024, "count": 20},
    },
    "critical-sc": {
        "description": "gamma = 1/2 with Lambda = 0.3 <= 1 - eta1 (singular continuous branch)",
        "experiment": "subordinate", "ensemble": _ups(0.6, 0.1, 1.0, math.sqrt(0.6)),
        "n_max": 10_000_000, "seeds": {"master": 2024, "count": 20},
    },
    "critical-pp": {
        "description": "gamma = 1/2 with Lambda = 0.6 > 1 - eta1 (pure point branch)",
        "experiment": "subordinate", "ensemble": _ups(0.6, 0.1, 1.0, math.sqrt(1.2)),
        "n_max": 10_000_000, "seeds": {"master": 2024, "count": 20},
    },
    "xi-critical": {
        "description": "the five xi partial-sum limits at gamma = 1/2",
        "experiment": "xi", "ensemble": _ups(0.6, 0.1, 1.0, 1.0),
        "n_max": 1_000_000, "xi_from": 10, "seeds": {"master": 2024, "count": 100},
    },
    "subordinate-critical": {
        "description": "subordinate decay and rho convergence at gamma = 1/2, Lambda = 0.5",
        "experiment": "subordinate", "ensemble": _ups(0.6, 0.1, 1.0, 1.0),
        "n_max": 10_000_000, "seeds": {"master": 2024, "count": 20},
    },
    "de-beta1": {
        "description": "Dumitriu-Edelman beta = 1: subordinate decay -(1/2 + 1/beta)/2",
        "experiment": "subordinate", "ensemble": {"kind": "dumitriu_edelman", "beta": 1.0},
        "n_max": 10_000_000, "seeds": {"master": 2024, "count": 20},
    },
    "de-beta2": {
        "description": "Dumitriu-Edelman beta = 2 (boundary case Lambda = 1/2)",
        "experiment": "subordinate", "ensemble": {"kind": "dumitriu_edelman", "beta": 2.0},
        "n_max": 10_000_000, "seeds": {"master": 2024, "count": 20},
    },
    "de-beta4": {
        "description": "Dumitriu-Edelman beta = 4: transport of delta_1, m = 1",
        "experiment": "dynamics", "ensemble": {"kind": "dumitriu_edelman", "beta": 4.0},
        "N": 24000, "time_grid": {"t_max": 100.0, "dt": 0.05}, "m_list": [1], "method": "chebyshev",
        "fit_window": [1.0, 100.0], "seeds": {"master": 2024, "count": 1},
    },
    "free-transport": {
        "description": "constant coefficients a = 1: ballistic control",
        "experiment": "dynamics", "ensemble": {"kind": "constant", "lambda1": 1.0},
        "N": 5000, "time_grid": {"t_max": 100.0, "dt": 0.05}, "m_list": [1], "method": "chebyshev",
        "fit_window": [1.0, 100.0], "seeds": {"master": 2024, "count": 1},
    },
    "de-stats": {
        "description": "N = 2 joint density and Tr(J^2) moments of the beta ensembles",
        "experiment": "de_stats", "betas": [1.0, 2.0, 4.0], "samples": 1_000_000,
        "trace_N": [2, 10, 100], "trace_samples": 100_000, "seeds": {"master": 2024, "count": 1},
    },
    "combes-thomas": {
        "description": "off-diagonal resolvent bound at z = E + i sigma",
        "experiment": "greens", "ensemble": _ups(0.5, 0.0, 1.0, 1.0),
        "energies": [0.0, 1.0, -1.0], "sigmas": [0.5, 1.0, 2.0], "N_list": list(range(100, 2001, 100)),
        "trunc_size": 4000, "seeds": {"master": 2024, "count": 4},
    },
    "diagnose": {
        "description": "angular increments and the oscillatory sum at gamma = 1/2",
        "experiment": "diagnose", "ensemble": _ups(0.6, 0.1, 1.0, 1.0),
        "n_max": 1_000_000, "energies": [0.0], "seeds": {"master": 2024, "count": 4},
    },
}


def preset(name):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}")
    cfg = copy.deepcopy(PRESETS[name])
    cfg.pop("description", None)
    return cfg


# ---------------------------------------------------------------------------
# validation


def _num(cfg, key, cast=float, default=None, positive=False):
    if key not in cfg or cfg[key] is None:
        if default is None:
            raise ConfigError(key, "required")
        return default
    try:
        v = cast(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot interpret {cfg[key]!r}") from exc
    if positive and not v > 0:
        raise ConfigError(key, "must be positive")
    return v


def _list(cfg, key, default=None, cast=float):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(key, "required")
    if not isinstance(v, (list, tuple)) or len(v) == 0:
        raise ConfigError(key, "must be a non-empty list")
    try:
        return [cast(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot interpret {v!r}") from exc


def validate_config(cfg):
    """Return a normalized copy of ``cfg`` or raise ConfigError naming the field."""
    if not isinstance(cfg, dict):
        raise ConfigError("config", "must be a JSON object")
    out = copy.deepcopy(cfg)
    exp = out.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENTS}")
    seeds = out.get("seeds", {"master": 0, "count": 1})
    if not isinstance(seeds, dict):
        raise ConfigError("seeds", "must be an object {master, count}")
    master = _num(seeds, "master", int, 0)
    if not 0 <= master < 2**63:
        raise ConfigError("master", "must be a non-negative 63-bit integer")
    out["seeds"] = {"master": master, "count": _num(seeds, "count", int, 1, positive=True)}
    if exp != "de_stats":
        ens = out.get("ensemble")
        if ens is None:
            raise ConfigError("ensemble", "required")
        stream_from_dict(ens, seed=0)
    if exp in ("exponents", "xi", "subordinate", "diagnose"):
        out["n_max"] = _num(out, "n_max", int, positive=True)
        if out["n_max"] < 100:
            raise ConfigError("n_max", "must be at least 100")
        out["energies"] = _list(out, "energies", DEFAULT_ENERGIES)
    if exp in ("exponents", "xi"):
        out["phis"] = _list(out, "phis", [0.0, HALF_PI])
    if exp == "exponents":
        w = _list(out, "window", [out["n_max"] / 100.0, out["n_max"]])
        if len(w) != 2 or not 2 <= w[0] < w[1] <= out["n_max"]:
            raise ConfigError("window", "must be [n_lo, n_hi] with 2 <= n_lo < n_hi <= n_max")
        out["window"] = w
        out["tolerance"] = _num(out, "tolerance", float, 0.1, positive=True)
    if exp == "xi":
        out["xi_from"] = _num(out, "xi_from", int, 10, positive=True)
        if not 2 <= out["xi_from"] < out["n_max"]:
            raise ConfigError("xi_from", "must lie in [2, n_max)")
    if exp == "spectrum":
        out["N"] = _num(out, "N", int, positive=True)
    if exp == "de_stats":
        out["betas"] = _list(out, "betas", [1.0, 2.0, 4.0])
        if min(out["betas"]) <= 0:
            raise ConfigError("betas", "must be positive")
        out["samples"] = _num(out, "samples", int, 1_000_000, positive=True)
        if out["samples"] < 100_000:
            raise ConfigError("samples", "must be at least 100000")
        out["trace_N"] = _list(out, "trace_N", [2, 10, 100], int)
        out["trace_samples"] = _num(out, "trace_samples", int, 100_000, positive=True)
    if exp == "dynamics":
        out["N"] = _num(out, "N", int, positive=True)
        tg = out.get("time_grid")
        if isinstance(tg, dict):
            _num(tg, "t_max", float, positive=True)
            _num(tg, "dt", float, positive=True)
        elif not isinstance(tg, list) or len(tg) < 2:
            raise ConfigError("time_grid", "must be {t_max, dt} or a list of times")
        out["m_list"] = _list(out, "m_list", [1], int)
        if min(out["m_list"]) < 1 or max(out["m_list"]) > 3:
            raise ConfigError("m_list", "moment orders must lie in 1..3")
        out["guard"] = _num(out, "guard", float, 0.1, positive=True)
        out["method"] = out.get("method", "spectral")
        if out["method"] not in ("spectral", "chebyshev"):
            raise ConfigError("method", "must be 'spectral' or 'chebyshev'")
        fw = out.get("fit_window")
        if fw is not None and (not isinstance(fw, list) or len(fw) != 2 or not 0 < fw[0] < fw[1]):
            raise ConfigError("fit_window", "must be [T_lo, T_hi] with 0 < T_lo < T_hi")
    if exp == "greens":
        out["energies"] = _list(out, "energies", [0.0])
        out["sigmas"] = _list(out, "sigmas", [1.0])
        if min(out["sigmas"]) <= 0:
            raise ConfigError("sigmas", "must be positive")
        out["N_list"] = _list(out, "N_list", None, int)
        out["trunc_size"] = _num(out, "trunc_size", int, 2 * max(out["N_list"]), positive=True)
        if out["trunc_size"] < 2 * max(out["N_list"]):
            raise ConfigError("trunc_size", "must be at least 2 max(N_list)")
    return out


def load_config(arg):
    if arg.startswith("preset:"):
        return preset(arg[len("preset:"):])
    try:
        with open(arg) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"no such file {arg}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# tasks


def task_seed(master, index):
    """64-bit seed of realization ``index``, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _stream(cfg, seed):
    return stream_from_dict(cfg["ensemble"], seed=seed)


def _task_exponents(cfg, idx, seed):
    base = _stream(cfg, seed)
    params = ensemble_params(base)
    n_max = cfg["n_max"]
    st = materialize(base, n_max)
    kind = normalizer_kind_for(params.gamma) if params else "log_n"
    rows = []
    for E in cfg["energies"]:
        tr = run_trajectory(st, E, n_max, phis=cfg["phis"])
        n = tr.n.astype(np.float64)
        fit = exponent_fit((n, tr.log_norm_sq), kind, cfg["window"])
        rows.append((E, None, "transfer_norm_sq", fit.slope, fit.stderr))
        for p, phi in enumerate(cfg["phis"]):
            fit = exponent_fit((n, tr.log_R2[p]), kind, cfg["window"])
            rows.append((E, phi, "prufer_R_sq", fit.slope, fit.stderr))
    return rows


def _task_xi(cfg, idx, seed):
    base = _stream(cfg, seed)
    params = ensemble_params(base)
    st = materialize(base, cfg["n_max"])
    rec = [cfg["xi_from"], cfg["n_max"]]
    rows = []
    for E in cfg["energies"]:
        tr = run_trajectory(st, E, cfg["n_max"], phis=cfg["phis"], record_at=rec)
        for p, phi in enumerate(cfg["phis"]):
            x = xi_from_trajectory(tr, params.gamma, p, -1, n_from=cfg["xi_from"])
            rows.append((E, phi) + x.as_tuple() + (x.xi_sum, x.total, x.tolerance))
    return rows


def _task_subordinate(cfg, idx, seed):
    st = _stream(cfg, seed)
    res = subordinate_angles(cfg["energies"], st, cfg["n_max"])
    return [(E, r.phi_infinity, r.rho_infinity, r.decay_slope, r.rho_convergence_slope, int(r.degenerate))
            for E, r in zip(cfg["energies"], res)]


def _task_diagnose(cfg, idx, seed):
    st = materialize(_stream(cfg, seed), cfg["n_max"])
    params = ensemble_params(st)
    n_max = cfg["n_max"]
    rows = []
    for E in cfg["energies"]:
        n, inc = theta_increment_series(E, st, 0.0, n_max)
        slope = increment_decay_fit(n, inc, (n_max / 1000.0, n_max)).slope
        tr = run_trajectory(st, E, n_max, phis=(0.0, HALF_PI), record_every=1)
        th = tr.theta[0][tr.n0 - tr.n[0]:]
        r = params.gamma - 1.0
        osc = oscillatory_sum(th, r, params.gamma, n_max, j0=tr.n0)
        ctrl = oscillatory_sum(np.zeros_like(th), r, params.gamma, n_max, j0=tr.n0)
        sep = theta_separation(E, st, n_max, tr=tr).slope
        rows.append((E, slope, osc, ctrl, sep))
    return rows


def _task_spectrum(cfg, idx, seed):
    T = truncate(_stream(cfg, seed), cfg["N"])
    sd = eigensystem(T)
    return sd


def _task_greens(cfg, idx, seed):
    st = _stream(cfg, seed)
    T = truncate(st, cfg["trunc_size"])
    rows = []
    for E in cfg["energies"]:
        for s in cfg["sigmas"]:
            rows.extend(ct_verify(st, E, s, cfg["N_list"], cfg["trunc_size"], T=T))
    return rows


def _task_dynamics(cfg, idx, seed):
    st = _stream(cfg, seed)
    T = truncate(st, cfg["N"])
    psi = np.zeros(T.N)
    psi[0] = 1.0
    tg = cfg["time_grid"]
    if isinstance(tg, dict):
        steps = int(round(tg["t_max"] / tg["dt"]))
        times = np.linspace(0.0, tg["t_max"], steps + 1)
    else:
        times = np.asarray(tg, dtype=np.float64)
    return evolve_moments(T, psi, times, cfg["m_list"], cfg["guard"], cfg["method"])


_TASKS = {
    "exponents": _task_exponents,
    "xi": _task_xi,
    "subordinate": _task_subordinate,
    "diagnose": _task_diagnose,
    "spectrum": _task_spectrum,
    "greens": _task_greens,
    "dynamics": _task_dynamics,
}


def _run_task(args):
    exp, cfg, idx, seed = args
    try:
        return idx, _TASKS[exp](cfg, idx, seed), None
    except NumericalFlag as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def _map_tasks(cfg, workers):
    master, count = cfg["seeds"]["master"], cfg["seeds"]["count"]
    seeds = [task_seed(master, i) for i in range(count)]
    jobs = [(cfg["experiment"], cfg, i, s) for i, s in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_task, jobs))
    else:
        results = [_run_task(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    return seeds, results


# ---------------------------------------------------------------------------
# experiments: each returns (files written, summary dict, error or None)


def _f(x):
    return repr(float(x)) if x is not None else ""


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _f(v))
                              for v in r) + "\n")


def _ensemble_id(cfg):
    e = cfg["ensemble"]
    keys = [k for k in ("beta", "eta1", "eta2", "lambda1", "lambda2") if k in e]
    return e["kind"] + "(" + ",".join(f"{e[k]:g}" for k in keys) + ")"


def _per_seed_mean(results, select):
    """Mean over a seed's selected rows, then one value per seed."""
    vals = []
    for _, rows, err in results:
        if err is None:
            v = [select(r) for r in rows if select(r) is not None]
            if v:
                vals.append(float(np.mean(v)))
    return np.array(vals)


def _exp_exponents(cfg, results, seeds, out):
    params = ensemble_params(_stream(cfg, 0))
    kind = normalizer_kind_for(params.gamma)
    lo, hi = cfg["window"]
    per_seed = []
    for idx, rows, err in results:
        if err is None:
            for E, phi, q, slope, se in rows:
                per_seed.append((idx, seeds[idx], E, "" if phi is None else _f(phi), q, slope, se))
    _write_rows(out / "slopes.csv", ["seed_index", "seed", "E", "phi", "quantity", "slope", "stderr"], per_seed)

    report, verdicts = [], {}
    for q in ("transfer_norm_sq", "prufer_R_sq"):
        pred = predicted_exponent(params, q)
        keys = sorted({(r[2], r[3]) for r in per_seed if r[4] == q})
        for E, phi in keys:
            sl = [r[5] for r in per_seed if r[4] == q and r[2] == E and r[3] == phi]
            report.append({"ensemble_id": _ensemble_id(cfg), "E": E, "phi": phi, "quantity": q,
                           "slope": float(np.median(sl)), "stderr": float(np.std(sl) / math.sqrt(len(sl))),
                           "predicted": pred, "n_lo": lo, "n_hi": hi, "seed_count": len(sl)})
        pooled = _per_seed_mean(results, lambda r, q=q: r[3] if r[2] == q else None)
        med = float(np.median(pooled))
        verdicts[q] = {"normalizer": kind, "predicted": pred, "median": med,
                       "tolerance": cfg["tolerance"], "seeds": int(pooled.size),
                       "verdict": "pass" if abs(med - pred) <= cfg["tolerance"] else "fail"}
        if params.gamma < 0.5:
            verdicts[q]["sum_rule_prediction"] = params.Lambda / (1.0 - 2.0 * params.gamma)
    write_exponent_report(report, out / "exponents.csv")
    return ["slopes.csv", "exponents.csv"], {"regime": params.regime(), "quantities": verdicts}


def _xi_targets(params):
    g, lam, e1 = params.gamma, params.Lambda, params.eta1
    if g > 0.5 + 1e-12:
        return (e1, 0.0, 0.0, 0.0, 0.0)
    if g < 0.5 - 1e-12:
        c = 1.0 / (1.0 - 2.0 * g)
        return (0.0, 2 * lam * c, 0.5 * lam * c, -2 * lam * c, 0.5 * lam * c)
    return (e1, 2 * lam, 0.5 * lam, -2 * lam, 0.5 * lam)


XI_NAMES = ("xi_Z", "xi_W", "xi_ZW", "xi_ZW2", "xi_A")


def _exp_xi(cfg, results, seeds, out):
    params = ensemble_params(_stream(cfg, 0))
    rows = []
    for idx, rr, err in results:
        if err is None:
            rows.extend((idx, seeds[idx]) + tuple(r) for r in rr)
    _write_rows(out / "xi.csv", ["seed_index", "seed", "E", "phi", *XI_NAMES, "xi_sum", "total", "tolerance"], rows)
    targets = _xi_targets(params)
    summary = {"n_from": cfg["xi_from"], "n": cfg["n_max"], "components": {}}
    for j, name in enumerate(XI_NAMES + ("xi_sum",)):
        pooled = _per_seed_mean(results, lambda r, j=j: r[2 + j])
        tgt = targets[j] if j < 5 else sum(targets)
        summary["components"][name] = {"median": float(np.median(pooled)), "target": tgt, "seeds": int(pooled.size)}
    sum_rule = max(abs(r[9] - r[10]) - r[11] for r in rows) if rows else float("nan")
    summary["sum_rule_worst_excess"] = float(sum_rule)
    return ["xi.csv"], summary


def _exp_subordinate(cfg, results, seeds, out):
    params = ensemble_params(_stream(cfg, 0))
    rows = []
    for idx, rr, err in results:
        if err is None:
            rows.extend((idx, seeds[idx]) + tuple(r) for r in rr)
    _write_rows(out / "subordinate.csv", ["seed_index", "seed", "E", "phi_infinity", "rho_infinity",
                                          "decay_slope", "rho_convergence_slope", "degenerate"], rows)
    dec = _per_seed_mean(results, lambda r: r[3] if not r[5] else None)
    rho = _per_seed_mean(results, lambda r: r[4] if not r[5] else None)
    crit = abs(params.gamma - 0.5) < 1e-12
    pred = predicted_exponent(params, "subordinate_log") if crit else None
    return ["subordinate.csv"], {
        "decay_slope_median": float(np.median(dec)),
        "rho_convergence_slope_median": float(np.median(rho)),
        "predicted_decay": pred,
        "rho_bound": -params.Lambda if crit else None,
        "degenerate_count": int(sum(r[7] for r in rows)),
        "exploratory": not crit,
        "seeds": int(dec.size),
    }


def _exp_diagnose(cfg, results, seeds, out):
    rows = []
    for idx, rr, err in results:
        if err is None:
            rows.extend((idx, seeds[idx]) + tuple(r) for r in rr)
    _write_rows(out / "diagnose.csv", ["seed_index", "seed", "E", "increment_slope", "oscillatory_sum",
                                       "control_sum", "theta_separation_slope"], rows)
    return ["diagnose.csv"], {
        "increment_slope_max": float(max(r[3] for r in rows)),
        "oscillatory_sum_max_abs": float(max(abs(r[4]) for r in rows)),
        "theta_separation_median": float(np.median([r[6] for r in rows])),
    }


def _exp_spectrum(cfg, results, seeds, out):
    files = []
    for idx, sd, err in results:
        if err is None:
            name = f"spectrum_{idx:04d}.csv"
            write_spectrum_csv(sd, out / name)
            files.append(name)
    return files, {"N": cfg["N"], "realizations": len(files)}


def _exp_greens(cfg, results, seeds, out):
    rows = []
    for idx, rr, err in results:
        if err is None:
            rows.extend(rr)
    write_greens_csv(rows, out / "greens.csv")
    summary = {"probes": len(rows), "violations": int(sum(r["margin"] < 0 for r in rows))}
    params = ensemble_params(_stream(cfg, 0))
    if params is not None:
        p = 1.0 - params.eta1
        fits = []
        for idx, rr, err in results:
            if err is None:
                for E in cfg["energies"]:
                    for s in cfg["sigmas"]:
                        sel = [r for r in rr if r["E"] == E and r["sigma"] == s]
                        fits.append(decay_fit([r["N"] for r in sel], [r["log_abs_G"] for r in sel], p))
        summary["decay_power"] = p
        summary["decay_slope_min"] = float(min(f[0] for f in fits))
        summary["decay_r2_min"] = float(min(f[2] for f in fits))
    return ["greens.csv"], summary


def _exp_dynamics(cfg, results, seeds, out):
    files, fits = [], []
    for idx, rec, err in results:
        if err is None:
            name = f"transport_{idx:04d}.csv"
            write_transport_csv(rec, out / name)
            files.append(name)
            entry = {"seed_index": idx, "flagged_from": rec.flagged_from}
            if cfg.get("fit_window"):
                for m in cfg["m_list"]:
                    entry[f"slope_m{m}"] = transport_exponent_fit(rec, m, cfg["fit_window"]).slope
            fits.append(entry)
    return files, {"N": cfg["N"], "method": cfg["method"], "fits": fits}


def _exp_de_stats(cfg, out):
    seed = task_seed(cfg["seeds"]["master"], 0)
    report = {"joint_density": [], "trace_moments": []}
    for i, beta in enumerate(cfg["betas"]):
        report["joint_density"].append(de_joint_density_check(beta, cfg["samples"], seed + i))
        for N in cfg["trace_N"]:
            report["trace_moments"].append(trace_moment_check(beta, N, cfg["trace_samples"], seed + 100 + i))
    with open(out / "de_stats.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ["de_stats.json"], {
        "ks_max": max(r["ks"] for r in report["joint_density"]),
        "trace_all_within_3se": all(r["pass"] for r in report["trace_moments"]),
    }, {"de_stats": seed}


_EXPERIMENTS = {
    "exponents": _exp_exponents,
    "xi": _exp_xi,
    "subordinate": _exp_subordinate,
    "diagnose": _exp_diagnose,
    "spectrum": _exp_spectrum,
    "greens": _exp_greens,
    "dynamics": _exp_dynamics,
}


def _version():
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def execute(cfg, out, workers=1):
    """Validate, run and write artifacts; returns (exit status, summary)."""
    cfg = validate_config(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".partial"
    if marker.exists():
        marker.unlink()
    t0 = time.time()
    errors = []
    if cfg["experiment"] == "de_stats":
        files, summary, task_seeds = _exp_de_stats(cfg, out)
    else:
        seeds, results = _map_tasks(cfg, workers)
        errors = [f"task {idx}: {err}" for idx, _, err in results if err is not None]
        try:
            files, summary = _EXPERIMENTS[cfg["experiment"]](cfg, results, seeds, out)
        except NumericalFlag as exc:
            files, summary = [], {}
            errors.append(f"{type(exc).__name__}: {exc}")
        task_seeds = {str(i): s for i, s in enumerate(seeds)}
    summary["errors"] = errors
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files = list(files) + ["summary.json"]
    manifest = {
        "config": cfg,
        "version": _version(),
        "backend": backend_name(),
        "wall_time_s": round(time.time() - t0, 3),
        "workers": workers,
        "task_seeds": task_seeds,
        "files": {f: _sha256(out / f) for f in files},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if errors:
        marker.write_text("\n".join(errors) + "\n")
        return 3, summary
    return 0, summary


def _default_workers():
    try:
        return max(1, int(os.environ.get("JGL_WORKERS", "1")))
    except ValueError:
        return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="jgl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config", help="path to a JSON config or preset:NAME")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--out", default=None)
    p = sub.add_parser("presets", help="list named configurations")
    p.add_argument("--show", metavar="NAME", default=None)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "presets":
            if args.show:
                print(json.dumps(preset(args.show), indent=2, sort_keys=True))
            else:
                for name, c in PRESETS.items():
                    print(f"{name:22s} {c['experiment']:12s} {c['description']}")
            return 0
        cfg = load_config(args.config)
        if args.cmd == "validate":
            validate_config(cfg)
            print("ok")
            return 0
        out = args.out or cfg.get("output") or "jgl-out"
        workers = args.workers if args.workers is not None else _default_workers()
        status, summary = execute(cfg, out, workers)
        print(json.dumps(summary, indent=2, sort_keys=True))
        if status:
            print(f"numerical flags raised; partial results in {out}", file=sys.stderr)
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
