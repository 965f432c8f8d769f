"""Configuration-driven studies: stability ratios, end-to-end cost, runtime scaling.

Configurations are flat JSON-compatible dictionaries. :func:`make_config`
merges user values over the scenario defaults (unknown keys are rejected)
and every random draw is a deterministic function of ``cfg["seed"]``.
Each runner returns plain rows and, when output paths are configured,
writes CSV files whose first line carries the config hash and version.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time

import numpy as np

from .bootstrap import bootstrap_eps, spectral_norm
from .evaluate import STABILITY_MARGIN, closed_loop_matrix, lqr_cost, realize, static_cost
from .io import config_hash, write_csv
from .plant import (PlantModel, UnstableError, dare_gain, make_chain, make_rng, perturb,
                    simulate, spectral_radius)
from .synthesis import SynthesisProblem, golden_section_synthesize
from .sysid import auto_c_lambda, choose_lambda, lasso_fit

log = logging.getLogger(__name__)

_COMMON = {"seed": 0, "d": 3, "c": 2, "alpha": None, "eta1": 1e-3, "eta2": 1e-6,
           "v_exponent": -1.0, "workers": None}

DEFAULTS = {
    "stability_study": dict(
        _COMMON, scenario="stability_study", n=8, a=1.0 / 3.0, D=0.05,
        D_ends=0.05 - 1.0 / 3.0, scale=1.0, m_list=[5, 6, 7, 8], instances=100,
        level=0.1, L=10, eps_source="true", eps_given=0.0, record_time=False,
        out=None, summary_out=None),
    "end_to_end": dict(
        _COMMON, scenario="end_to_end", n=40, a=0.2, D=0.0, D_ends=None, scale=0.99,
        sigma_w=1.0, sigma_v=math.sqrt(0.1), T_list=[150, 300, 600, 1000], seeds=5,
        lam=None, c_lambda=0.05, delta=0.05, N=500, L_list=[4, 8, 12], oracle_L=100,
        eps_source="bootstrap", eps_given=0.0, cost_method="impulse",
        cache_dir=".robust_sls_cache", out=None, summary_out=None, errors_out=None),
    "runtime_scaling": dict(
        _COMMON, scenario="runtime_scaling", n_list=[20, 40, 80, 150], a=0.2, D=0.0,
        D_ends=None, scale=0.99, L=8, eps_bar=0.01, repeats=1, out=None),
}


class ConfigError(ValueError):
    """Unknown scenario or key in an experiment configuration."""


def make_config(scenario, overrides=None):
    if scenario not in DEFAULTS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(DEFAULTS)}")
    cfg = dict(DEFAULTS[scenario])
    for k, v in (overrides or {}).items():
        if k not in cfg:
            raise ConfigError(f"unknown key {k!r} for scenario {scenario}")
        if v is not None or k in ("alpha", "lam", "workers", "out"):
            cfg[k] = v
    return cfg


def load_config(path, overrides=None):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict) or "scenario" not in raw:
        raise ConfigError(f"{path}:1: config must be an object with a 'scenario' key")
    raw = dict(raw)
    scenario = raw.pop("scenario")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return make_config(scenario, raw)


def _offsets(cfg, n):
    D = np.full(n, float(cfg["D"]))
    if cfg.get("D_ends") is not None:
        D[0] = D[-1] = float(cfg["D_ends"])
    return D


def _problem(cfg, A, B, eps, L):
    return SynthesisProblem.from_plant(A, B, eps, L, d=cfg["d"], c=cfg["c"],
                                       alpha=cfg["alpha"], eta1=cfg["eta1"],
                                       eta2=cfg["eta2"], v_exponent=cfg["v_exponent"])


def _true_rho(A, B, ctrl):
    return spectral_radius(closed_loop_matrix(A, B, ctrl))


def true_eps(A, B, Ahat, Bhat):
    return max(spectral_norm(Ahat - A), spectral_norm(Bhat - B))


# ---------------------------------------------------------------- stability study

STABILITY_HEADER = ["instance", "m", "method", "status", "stable", "rho", "J", "bound",
                    "gamma_bar", "eps"]


def stability_instance(cfg, m, i):
    """Rows for one perturbed instance (one per method)."""
    n = cfg["n"]
    rng = make_rng(cfg["seed"], m, i)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=m, replace=False)] = True
    plant = make_chain(n, cfg["a"], _offsets(cfg, n), mask, cfg["scale"])
    Ahat = perturb(plant.A, cfg["level"], rng)
    Bhat = perturb(plant.B, cfg["level"], rng)
    eps = true_eps(plant.A, plant.B, Ahat, Bhat)
    eps_design = eps if cfg["eps_source"] == "true" else float(cfg["eps_given"])
    rows = []
    base = _problem(cfg, Ahat, Bhat, eps_design, cfg["L"])
    for method, prob in (("robust", base), ("nominal", base.with_eps(0.0))):
        t0 = time.perf_counter()
        row = {"instance": i, "m": m, "method": method, "eps": eps}
        try:
            sol = golden_section_synthesize(prob, workers=cfg["workers"])
            if sol.feasible:
                ctrl = realize(sol)
                rho = _true_rho(plant.A, plant.B, ctrl)
                stable = rho < 1.0 - STABILITY_MARGIN
                J = lqr_cost(plant, ctrl) if stable else math.inf
                row.update(status="feasible", stable=int(stable), rho=rho, J=J,
                           bound=sol.certificate["bound"], gamma_bar=sol.gamma_bar)
            else:
                row.update(status="infeasible", stable=0, rho=math.nan, J=math.inf,
                           bound=math.nan, gamma_bar=math.nan)
        except Exception as exc:   # per-instance failures never abort the sweep
            log.warning("instance %d m=%d %s failed: %s", i, m, method, exc)
            row.update(status="error", stable=0, rho=math.nan, J=math.inf, bound=math.nan,
                       gamma_bar=math.nan)
        row["wall"] = time.perf_counter() - t0
        rows.append(row)
    row = {"instance": i, "m": m, "method": "centralized", "eps": eps, "bound": math.nan,
           "gamma_bar": math.nan}
    t0 = time.perf_counter()
    try:
        K = dare_gain(PlantModel(Ahat, Bhat))
        rho = spectral_radius(plant.A + plant.B @ K)
        stable = rho < 1.0 - STABILITY_MARGIN
        row.update(status="feasible", stable=int(stable), rho=rho,
                   J=static_cost(plant.A, plant.B, K) if stable else math.inf)
    except (UnstableError, np.linalg.LinAlgError) as exc:
        log.warning("instance %d m=%d centralized failed: %s", i, m, exc)
        row.update(status="error", stable=0, rho=math.nan, J=math.inf)
    row["wall"] = time.perf_counter() - t0
    rows.append(row)
    return rows


def stability_ratios(rows):
    """``{(m, method): fraction of stabilizing instances}``."""
    acc = {}
    for r in rows:
        key = (r["m"], r["method"])
        hit, tot = acc.get(key, (0, 0))
        acc[key] = (hit + int(r["stable"]), tot + 1)
    return {k: h / t for k, (h, t) in sorted(acc.items())}


def run_stability_study(cfg):
    rows = []
    for m in cfg["m_list"]:
        for i in range(cfg["instances"]):
            rows.extend(stability_instance(cfg, m, i))
    ratios = stability_ratios(rows)
    header = STABILITY_HEADER + (["wall"] if cfg["record_time"] else [])
    if cfg["out"]:
        write_csv(cfg["out"], header, [[r[k] for k in header] for r in rows], cfg)
    if cfg["summary_out"]:
        write_csv(cfg["summary_out"], ["m", "method", "ratio"],
                  [[m, meth, v] for (m, meth), v in ratios.items()], cfg)
    return {"rows": rows, "ratios": ratios}


# ---------------------------------------------------------------- end to end

def e2e_plant(cfg):
    n = cfg["n"]
    return make_chain(n, cfg["a"], _offsets(cfg, n), None, cfg["scale"],
                      sigma_w=cfg["sigma_w"], sigma_v=cfg["sigma_v"])


def oracle_cost(cfg, plant, L=None):
    """Cost of the nominal design on the true plant with a long FIR horizon.

    Cached on disk under ``cfg["cache_dir"]`` keyed by the hash of the
    plant and the synthesis settings.
    """
    L = cfg["oracle_L"] if L is None else L
    key = {"A": plant.A.tolist(), "B": plant.B.tolist(), "L": L, "d": cfg["d"],
           "c": cfg["c"], "alpha": cfg["alpha"], "eta1": cfg["eta1"], "eta2": cfg["eta2"],
           "v_exponent": cfg["v_exponent"], "method": cfg["cost_method"]}
    h = config_hash(key)
    path = None
    if cfg.get("cache_dir"):
        path = os.path.join(cfg["cache_dir"], f"oracle-{h}.json")
        if os.path.exists(path):
            with open(path) as fh:
                return float(json.load(fh)["J"])
    sol = golden_section_synthesize(_problem(cfg, plant.A, plant.B, 0.0, L),
                                    workers=cfg["workers"])
    if not sol.feasible:
        raise RuntimeError("oracle design is infeasible")
    J = lqr_cost(plant, realize(sol), plant.sigma_w, method=cfg["cost_method"])
    if path is not None:
        os.makedirs(cfg["cache_dir"], exist_ok=True)
        with open(path, "w") as fh:
            json.dump({"key": h, "J": J, "gamma_bar": sol.gamma_bar, "L": L}, fh)
    return J


E2E_HEADER = ["T", "seed", "L", "eps_true", "eps_bar", "status", "J", "J_oracle", "ratio"]


def e2e_run(cfg, plant, T, s, J_star):
    """Rows for one ``(T, seed)`` pipeline run, one per FIR length."""
    seed = int(make_rng(cfg["seed"], T, s).integers(2 ** 31))
    traj = simulate(plant, T, seed)
    if cfg["lam"] is not None:
        lam = float(cfg["lam"])
    else:
        c_lam = cfg["c_lambda"]
        if c_lam == "auto":
            c_lam = auto_c_lambda(traj, cfg["delta"])
        lam = choose_lambda(T, plant.n, plant.m, cfg["delta"], float(c_lam))
    est = lasso_fit(traj, lam)
    eps_true = true_eps(plant.A, plant.B, est.Ahat, est.Bhat)
    if cfg["eps_source"] == "bootstrap":
        boot = bootstrap_eps(est.Ahat, est.Bhat, None, plant.sigma_w, plant.sigma_v,
                             delta=cfg["delta"], N=cfg["N"], T=T, lam=lam, seed=seed)
        eps_bar = boot.eps_bar
    elif cfg["eps_source"] == "oracle":
        eps_bar = eps_true
    else:
        eps_bar = float(cfg["eps_given"])
    rows = []
    for L in cfg["L_list"]:
        row = {"T": T, "seed": s, "L": L, "eps_true": eps_true, "eps_bar": eps_bar,
               "J_oracle": J_star}
        try:
            sol = golden_section_synthesize(_problem(cfg, est.Ahat, est.Bhat, eps_bar, L),
                                            workers=cfg["workers"])
            if sol.feasible:
                J = lqr_cost(plant, realize(sol), plant.sigma_w, method=cfg["cost_method"])
                row.update(status="feasible", J=J, ratio=J / J_star)
            else:
                row.update(status="infeasible", J=math.nan, ratio=math.nan)
        except UnstableError:
            row.update(status="unstable", J=math.inf, ratio=math.inf)
        rows.append(row)
    return rows


def e2e_summary(rows):
    out = []
    for T in sorted({r["T"] for r in rows}):
        for L in sorted({r["L"] for r in rows}):
            vals = np.array([r["ratio"] for r in rows if r["T"] == T and r["L"] == L
                             and r["status"] == "feasible"])
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
            else:
                q1 = med = q3 = math.nan
            out.append({"T": T, "L": L, "median": med, "q1": q1, "q3": q3,
                        "feasible": int(vals.size)})
    return out


def run_end_to_end(cfg):
    plant = e2e_plant(cfg)
    J_star = oracle_cost(cfg, plant)
    rows = []
    for T in cfg["T_list"]:
        for s in range(cfg["seeds"]):
            rows.extend(e2e_run(cfg, plant, T, s, J_star))
    summary = e2e_summary(rows)
    errors = {}
    for r in rows:
        errors[(r["T"], r["seed"])] = (r["eps_true"], r["eps_bar"])
    if cfg["out"]:
        write_csv(cfg["out"], E2E_HEADER, [[r[k] for k in E2E_HEADER] for r in rows], cfg)
    if cfg["summary_out"]:
        keys = ["T", "L", "median", "q1", "q3", "feasible"]
        write_csv(cfg["summary_out"], keys, [[r[k] for k in keys] for r in summary], cfg)
    if cfg["errors_out"]:
        write_csv(cfg["errors_out"], ["T", "seed", "eps_true", "eps_bar"],
                  [[T, s, a, b] for (T, s), (a, b) in sorted(errors.items())], cfg)
    return {"rows": rows, "summary": summary, "J_oracle": J_star}


# ---------------------------------------------------------------- runtime scaling

def loglog_slope(ns, times):
    """Least-squares slope of ``log t`` against ``log n`` (``nan`` for one point)."""
    ns = np.asarray(ns, dtype=float)
    times = np.asarray(times, dtype=float)
    if np.unique(ns).size < 2:
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def run_runtime_scaling(cfg):
    rows = []
    for n in cfg["n_list"]:
        plant = make_chain(n, cfg["a"], _offsets(cfg, n), None, cfg["scale"])
        best = math.inf
        for _ in range(cfg["repeats"]):
            prob = _problem(cfg, plant.A, plant.B, cfg["eps_bar"], cfg["L"])
            t0 = time.perf_counter()
            sol = golden_section_synthesize(prob, workers=cfg["workers"])
            best = min(best, time.perf_counter() - t0)
        rows.append({"n": n, "wall": best, "status": sol.status,
                     "gamma_bar": sol.gamma_bar, "g": sol.g})
    slope = loglog_slope([r["n"] for r in rows], [r["wall"] for r in rows])
    if cfg["out"]:
        keys = ["n", "wall", "status", "gamma_bar", "g"]
        write_csv(cfg["out"], keys + ["slope"],
                  [[r[k] for k in keys] + [slope] for r in rows], cfg)
    return {"rows": rows, "slope": slope}


RUNNERS = {"stability_study": run_stability_study, "end_to_end": run_end_to_end,
           "runtime_scaling": run_runtime_scaling}


def run(cfg):
    return RUNNERS[cfg["scenario"]](cfg)
