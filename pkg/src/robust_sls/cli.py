"""Command-line entry point ``robust-sls``.

Stage subcommands read and write the JSON artifacts of :mod:`robust_sls.io`;
study subcommands run the configuration-driven experiments. Exit status is
0 on success, 2 when the synthesis program is infeasible and 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .bootstrap import bootstrap_eps
from .evaluate import closed_loop_report, realize, robust_certificate
from .experiments import ConfigError, load_config, make_config, run
from .io import ArtifactParseError, load, read_trajectory, save, write_csv, write_trajectory
from .plant import UnstableError, make_chain, simulate, spread_actuators
from .synthesis import SynthesisInputError, SynthesisProblem, golden_section_synthesize
from .sysid import LassoInputError, auto_c_lambda, choose_lambda, lasso_fit

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class CliError(Exception):
    pass


def _chain_from_args(args):
    n = args.n
    D = np.full(n, args.D)
    if args.D_ends is not None:
        D[0] = D[-1] = args.D_ends
    if args.actuated:
        mask = np.zeros(n, dtype=bool)
        mask[[int(i) for i in args.actuated.split(",")]] = True
    elif args.m is not None:
        mask = spread_actuators(n, args.m)
    else:
        mask = None
    return make_chain(n, args.a, D, mask, args.scale, args.sigma_w, args.sigma_v)


def cmd_simulate(args):
    if args.plant:
        _, plant = load(args.plant, "plant")
    else:
        plant = _chain_from_args(args)
    traj = simulate(plant, args.T, args.seed)
    write_trajectory(args.out, traj)
    if args.plant_out:
        save(args.plant_out, "plant", plant)
    return EXIT_OK


def cmd_identify(args):
    traj = read_trajectory(args.trajectory)
    if args.lam is not None:
        lam = args.lam
    else:
        c = auto_c_lambda(traj, args.delta) if args.c_lambda == "auto" else float(args.c_lambda)
        lam = choose_lambda(traj.T, traj.n, traj.m, args.delta, c)
    est = lasso_fit(traj, lam)
    save(args.out, "estimate", est, {"T": traj.T, "seed": traj.seed, "model": traj.model_id,
                                     "delta": args.delta})
    if not est.all_converged:
        print("warning: some Lasso rows did not converge", file=sys.stderr)
    return EXIT_OK


def _estimate_meta(path):
    with open(path) as fh:
        return json.load(fh).get("meta", {})


def cmd_bootstrap(args):
    _, est = load(args.estimate, "estimate")
    T = args.T if args.T is not None else _estimate_meta(args.estimate).get("T")
    if T is None:
        raise CliError("trajectory length unknown: pass --T")
    res = bootstrap_eps(est.Ahat, est.Bhat, None, args.sigma_w, args.sigma_v,
                        delta=args.delta, N=args.N, T=int(T), lam=est.lam, seed=args.seed)
    save(args.out, "bootstrap", res)
    if args.samples_out:
        write_csv(args.samples_out, ["round", "eps"], list(enumerate(res.samples)),
                  {"N": args.N, "delta": args.delta, "seed": args.seed, "T": int(T)})
    print(f"eps_bar={res.eps_bar!r}")
    return EXIT_OK


def cmd_synthesize(args):
    if args.estimate:
        _, est = load(args.estimate, "estimate")
        A, B = est.Ahat, est.Bhat
    elif args.plant:
        _, plant = load(args.plant, "plant")
        A, B = plant.A, plant.B
    else:
        raise CliError("pass --estimate or --plant")
    if args.bootstrap:
        _, boot = load(args.bootstrap, "bootstrap")
        eps = boot.eps_bar
    else:
        eps = args.eps
    d = None if str(args.d).lower() == "none" else int(args.d)
    prob = SynthesisProblem.from_plant(A, B, eps, args.L, d, args.c, args.alpha,
                                       eta1=args.eta1, eta2=args.eta2,
                                       v_exponent=args.v_exponent)
    if args.problem_out:
        save(args.problem_out, "problem", prob)
    sol = golden_section_synthesize(prob, workers=args.workers, trace_path=args.trace)
    save(args.out, "solution", sol)
    if not sol.feasible:
        print("Infeasible")
        return EXIT_INFEASIBLE
    print(f"gamma_bar={sol.gamma_bar!r} g={sol.g!r} objective={sol.scaled_objective!r}")
    return EXIT_OK


def cmd_evaluate(args):
    _, plant = load(args.plant, "plant")
    _, sol = load(args.solution, "solution")
    if not sol.feasible:
        print("Infeasible")
        return EXIT_INFEASIBLE
    ctrl = realize(sol)
    kw = {"steps": args.steps, "seed": args.seed} if args.method == "montecarlo" else {}
    rep = closed_loop_report(plant, ctrl, plant.sigma_w, args.method, **kw)
    eps_used = sol.eps_bar if args.eps_used is None else args.eps_used
    bound, certified = robust_certificate(sol, eps_used)
    header = ["rho", "stable", "J", "method", "bound", "certified", "gamma_bar", "eps_used"]
    row = [rep.spectral_radius, int(rep.stable), rep.cost, args.method, bound,
           int(certified), sol.gamma_bar, eps_used]
    if args.out:
        write_csv(args.out, header, [row], {"plant": plant.model_hash(),
                                            "method": args.method, "eps_used": eps_used})
    print(" ".join(f"{k}={v}" for k, v in zip(header, row)))
    return EXIT_OK


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def cmd_study(args):
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = load_config(args.config, overrides) if args.config else \
        make_config(args.scenario, overrides)
    if cfg["scenario"] != args.scenario:
        raise CliError(f"config scenario {cfg['scenario']!r} does not match "
                       f"subcommand {args.scenario!r}")
    res = run(cfg)
    if args.scenario == "stability_study":
        for (m, meth), v in res["ratios"].items():
            print(f"m={m} {meth} ratio={v:.3f}")
    elif args.scenario == "end_to_end":
        for r in res["summary"]:
            print(f"T={r['T']} L={r['L']} median={r['median']:.4g} feasible={r['feasible']}")
    else:
        for r in res["rows"]:
            print(f"n={r['n']} wall={r['wall']:.3f}s {r['status']}")
        slope = res["slope"]
        print("slope=undefined" if math.isnan(slope) else f"slope={slope:.3f}")
    return EXIT_OK


def _plant_args(p):
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--a", type=float, default=0.2)
    p.add_argument("--D", type=float, default=0.0)
    p.add_argument("--D-ends", dest="D_ends", type=float, default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--m", type=int, default=None, help="spread m actuators evenly")
    p.add_argument("--actuated", default=None, help="comma-separated actuated nodes")


def build_parser():
    ap = argparse.ArgumentParser(prog="robust-sls", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    p.add_argument("--plant", help="plant artifact (otherwise a chain is built)")
    _plant_args(p)
    p.add_argument("--sigma-w", dest="sigma_w", type=float, default=1.0)
    p.add_argument("--sigma-v", dest="sigma_v", type=float, default=1.0)
    p.add_argument("-T", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--plant-out", dest="plant_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="Lasso estimate from a trajectory")
    p.add_argument("trajectory")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--c-lambda", dest="c_lambda", default="1.0")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("bootstrap", help="bootstrap bound on the estimation error")
    p.add_argument("--estimate", required=True)
    p.add_argument("-T", "--T", dest="T", type=int, default=None)
    p.add_argument("--sigma-w", dest="sigma_w", type=float, default=1.0)
    p.add_argument("--sigma-v", dest="sigma_v", type=float, default=1.0)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--samples-out", dest="samples_out")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("synthesize", help="robust FIR controller synthesis")
    p.add_argument("--estimate")
    p.add_argument("--plant")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--bootstrap")
    p.add_argument("-L", type=int, default=8)
    p.add_argument("--d", default="3")
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--eta1", type=float, default=1e-3)
    p.add_argument("--eta2", type=float, default=1e-6)
    p.add_argument("--v-exponent", dest="v_exponent", type=float, default=-1.0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--problem-out", dest="problem_out")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="closed-loop report on a plant")
    p.add_argument("--plant", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--method", choices=["lyapunov", "impulse", "montecarlo"],
                   default="lyapunov")
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-used", dest="eps_used", type=float, default=None)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_evaluate)

    for name, scen in (("stability-study", "stability_study"), ("end-to-end", "end_to_end"),
                       ("runtime-scaling", "runtime_scaling")):
        p = sub.add_parser(name, help=f"run the {scen} study")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (JSON value)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-o", "--out", default=None)
        p.set_defaults(func=cmd_study, scenario=scen)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ArtifactParseError, ConfigError, CliError, LassoInputError, SynthesisInputError,
            UnstableError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
