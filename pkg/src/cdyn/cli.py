"""Command-line driver: ``simulate``, ``analyze-dae``, ``lcp-bench``, ``probe-index``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from . import integrators as di
from . import io
from .errors import CdynError, ContractError, StepFailure
from .lcp import (LcpSolverConfig, StepContext, enumerate_solve, random_spd_problem, solve)
from .linear_dae import consistency_residual, differentiation_index, pencil_is_regular
from .nonsmooth import NonsmoothConfig, simulate as simulate_nonsmooth
from .scenarios import (DIFFERENTIATOR_VARIABLES, build_bouncing_ball, build_differentiator,
                        build_disk_pile, build_pendulum, differentiator_initial, sine_source)

log = logging.getLogger("cdyn")

DEFAULTS = {
    "pendulum": {"integrator": "ggl", "dt": 1e-3, "t_end": 10.0},
    "bouncing-ball": {"integrator": "moreau-jean", "dt": 1e-3, "t_end": 3.0,
                      "tol": 1e-10, "max_iter": 10000},
    "disk-pile": {"integrator": "moreau-jean", "dt": 1e-3, "t_end": 5.0, "tol": 1e-6,
                  "max_iter": 100000, "contact_margin": 0.5},
    "differentiator": {"dt": 1e-4, "t_end": 2 * np.pi},
}
SMOOTH = ("index3", "baumgarte", "ggl", "half-explicit", "shake")
SOLVER_NAMES = {"pgj": "pgj", "pgs": "pgs", "psor": "psor", "al": "augmented_lagrangian"}


def _add_run_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--scenario", choices=io.SCENARIOS)
    p.add_argument("--integrator", choices=io.INTEGRATORS)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--mode", choices=("active-set", "linearized"))
    p.add_argument("--solver", choices=tuple(SOLVER_NAMES))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--relax", type=float)
    p.add_argument("--restitution", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--stride", type=int)
    p.add_argument("--baumgarte-alpha", type=float)
    p.add_argument("--baumgarte-beta", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="cdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="integrate a scenario and write CSV + report")
    _add_run_flags(sim)
    ana = sub.add_parser("analyze-dae", help="structural analysis of a linear DAE scenario")
    _add_run_flags(ana)
    bench = sub.add_parser("lcp-bench", help="compare LCP solvers with the enumeration oracle")
    bench.add_argument("--n", type=int, default=8, help="largest problem size")
    bench.add_argument("--count", type=int, default=200)
    bench.add_argument("--seed", type=int, default=1)
    bench.add_argument("--tol", type=float, default=1e-10)
    bench.add_argument("--max-iter", type=int, default=100000)
    probe = sub.add_parser("probe-index", help="perturbation amplification of pendulum formulations")
    _add_run_flags(probe)
    probe.add_argument("--epsilon", type=float, default=1e-6)
    probe.add_argument("--omegas", default="10,100,1000")
    probe.add_argument("--horizon", type=float, default=0.5)
    return parser


def resolve_config(args) -> io.ScenarioConfig:
    """Defaults < config file < command-line flags."""
    values = io.load_config(args.config) if getattr(args, "config", None) else {}
    for f in dataclasses.fields(io.ScenarioConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            values[f.name] = val
    if "mode" in values:
        values["mode"] = values["mode"].replace("-", "_")
    cfg = io.ScenarioConfig(**values)
    for key, val in DEFAULTS.get(cfg.scenario, {}).items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, val)
    return cfg.validate()


def _solver_config(cfg):
    variant = SOLVER_NAMES.get(cfg.solver)
    if variant is None:
        raise ContractError(f"unknown solver {cfg.solver!r}")
    if variant == "pgs" and cfg.relax != 1.0:
        variant = "psor"
    return LcpSolverConfig(tol=cfg.tol, max_iter=cfg.max_iter, r=cfg.r, alpha=cfg.relax,
                           variant=variant)


def run_scenario(cfg: io.ScenarioConfig):
    """Build and integrate ``cfg``; returns ``(system, trajectory)``."""
    observers = io.step_observers()
    if cfg.scenario == "pendulum":
        if cfg.integrator not in SMOOTH:
            raise ContractError(f"pendulum needs one of {SMOOTH}")
        sys_, s0 = build_pendulum(cfg.gamma, cfg.alpha0, cfg.omega0)
        if cfg.integrator == "baumgarte" and (cfg.baumgarte_alpha is None
                                              or cfg.baumgarte_beta is None):
            raise ContractError("baumgarte needs --baumgarte-alpha and --baumgarte-beta")
        icfg = di.IntegratorConfig(tau=cfg.dt, newton_tol=cfg.newton_tol, theta=cfg.theta,
                                   baumgarte_alpha=cfg.baumgarte_alpha or 0.0,
                                   baumgarte_beta=cfg.baumgarte_beta or 0.0)
        if cfg.integrator == "shake":
            return sys_, di.integrate_shake(sys_, s0, icfg, cfg.t_end, cfg.stride, observers)
        return sys_, di.integrate(cfg.integrator, sys_, s0, icfg, cfg.t_end,
                                  stride=cfg.stride, observers=observers)
    if cfg.scenario in ("bouncing-ball", "disk-pile"):
        if cfg.integrator != "moreau-jean":
            raise ContractError(f"{cfg.scenario} needs the moreau-jean integrator")
        if cfg.scenario == "bouncing-ball":
            sys_, s0 = build_bouncing_ball(cfg.gamma, cfg.height, cfg.mass)
            margin = np.inf if cfg.contact_margin is None else cfg.contact_margin
        else:
            sys_, s0 = build_disk_pile(cfg.n_disks, cfg.radius,
                                       (cfg.box_width, cfg.box_height), cfg.seed,
                                       cfg.gamma, cfg.mass, cfg.disks or None, cfg.pack_width)
            margin = cfg.contact_margin
        ncfg = NonsmoothConfig(h=cfg.dt, theta=cfg.theta, constraint_mode=cfg.mode,
                               activation_tol=cfg.activation_tol, restitution=cfg.restitution,
                               solver=_solver_config(cfg), contact_margin=margin)
        return sys_, simulate_nonsmooth(sys_, s0, ncfg, cfg.t_end, observers, cfg.stride)
    raise ContractError(f"scenario {cfg.scenario} is analyzed with 'analyze-dae'")


def cmd_simulate(args, out):
    cfg = resolve_config(args)
    started = time.perf_counter()
    sys_, traj = run_scenario(cfg)
    summary = io.summarize(traj)
    summary["wall_time_s"] = round(time.perf_counter() - started, 3)
    report = io.format_report(summary)
    if cfg.output:
        io.write_csv(cfg.output, sys_, traj)
        # wall time varies between runs; keep the written report reproducible
        stable = {k: v for k, v in summary.items() if k != "wall_time_s"}
        io.report_path(cfg.output).write_text(io.format_report(stable))
    out.write(report)
    return 0


def cmd_analyze(args, out):
    cfg = resolve_config(args)
    if cfg.scenario != "differentiator":
        raise ContractError("analyze-dae supports the differentiator scenario")
    src = sine_source()
    dae = build_differentiator(cfg.R, cfg.L, src)
    x0 = differentiator_initial(cfg.R, cfg.L, src)
    out.write(f"regular: {'yes' if pencil_is_regular(dae) else 'no'}\n")
    out.write(f"index: {differentiation_index(dae)}\n")
    out.write(f"consistency residual at t=0: {consistency_residual(dae, x0, 0.0):.3e}\n")
    if cfg.output:
        icfg = di.IntegratorConfig(tau=cfg.dt, newton_tol=cfg.newton_tol)
        times, X = di.integrate_bdf(di.ImplicitDae.from_linear(dae), x0, 0.0, cfg.t_end, 1, icfg)
        err = np.abs(X[:, 2] + cfg.L / cfg.R * np.cos(times)).max()
        with open(cfg.output, "w") as fh:
            fh.write(",".join(("t",) + DIFFERENTIATOR_VARIABLES) + "\n")
            for t, x in zip(times[::cfg.stride], X[::cfg.stride]):
                fh.write(",".join(format(float(v), ".17g") for v in (t, *x)) + "\n")
        out.write(f"BDF-1 max |V3 + (L/R) V'|: {err:.3e}\n")
    return 0


def lcp_benchmark(n, count, seed, tol=1e-10, max_iter=100000):
    """Solve ``count`` seeded random SPD problems with every solver; compare with the oracle."""
    rng = np.random.default_rng(seed)
    problems = [random_spd_problem(rng, n) for _ in range(count)]
    oracles = [enumerate_solve(pr) for pr in problems]
    solvers = {
        "pgj": LcpSolverConfig(tol=tol, max_iter=max_iter, variant="pgj"),
        "pgs": LcpSolverConfig(tol=tol, max_iter=max_iter, variant="pgs"),
        "psor(0.7)": LcpSolverConfig(tol=tol, max_iter=max_iter, alpha=0.7, variant="psor"),
        "psor(1.0)": LcpSolverConfig(tol=tol, max_iter=max_iter, alpha=1.0, variant="psor"),
        "psor(1.3)": LcpSolverConfig(tol=tol, max_iter=max_iter, alpha=1.3, variant="psor"),
        "al": LcpSolverConfig(tol=tol, max_iter=max_iter, variant="augmented_lagrangian"),
    }
    # compile the kernels outside the timed region
    solve(problems[0], solvers["pgj"])
    solve(problems[0], solvers["pgs"])
    rows = {}
    for name, scfg in solvers.items():
        started = time.perf_counter()
        dp, res, iters, conv = 0.0, 0.0, 0, True
        for pr, ref in zip(problems, oracles):
            ctx = StepContext.from_lcp(pr.A, pr.b) if scfg.variant == "augmented_lagrangian" else None
            sol = solve(pr, scfg, context=ctx)
            dp = max(dp, float(np.max(np.abs(sol.p - ref.p))))
            res = max(res, sol.residual)
            iters += sol.iterations
            conv &= sol.converged
        rows[name] = {"max_dp": dp, "max_residual": res, "iterations": iters,
                      "converged": conv, "seconds": time.perf_counter() - started}
    return rows


def cmd_bench(args, out):
    if args.n < 1 or args.count < 1:
        raise ContractError("--n and --count must be >= 1")
    rows = lcp_benchmark(args.n, args.count, args.seed, args.tol, args.max_iter)
    out.write(f"{'solver':<10} {'max|dp|':>10} {'residual':>10} {'iters':>8} {'seconds':>8}\n")
    ok = True
    for name, r in rows.items():
        match = r["converged"] and r["max_dp"] <= 1e-6 and r["max_residual"] <= max(args.tol, 1e-10)
        ok &= match
        out.write(f"{name:<10} {r['max_dp']:>10.2e} {r['max_residual']:>10.2e} "
                  f"{r['iterations']:>8d} {r['seconds']:>8.3f}\n")
    out.write(f"all solvers match oracle: {'yes' if ok else 'no'}\n")
    return 0 if ok else 1


def fit_slope(table):
    w = np.log10([row[0] for row in table])
    d = np.log10([max(row[1], 1e-300) for row in table])
    return float(np.polyfit(w, d, 1)[0])


def cmd_probe(args, out):
    cfg = resolve_config(args)
    if cfg.scenario != "pendulum":
        raise ContractError("probe-index runs on the pendulum scenario")
    try:
        omegas = [float(w) for w in args.omegas.split(",")]
    except ValueError as exc:
        raise ContractError(f"bad --omegas {args.omegas!r}") from exc
    sys_, s0 = build_pendulum(cfg.gamma, cfg.alpha0, cfg.omega0)
    dt = args.dt if args.dt is not None else 1e-4
    icfg = di.IntegratorConfig(tau=dt, newton_tol=cfg.newton_tol,
                               baumgarte_alpha=cfg.baumgarte_alpha if cfg.baumgarte_alpha is not None else 5.0,
                               baumgarte_beta=cfg.baumgarte_beta if cfg.baumgarte_beta is not None else 5.0)
    for form in ("index3", "ggl", "baumgarte"):
        table = di.perturbation_probe(form, sys_, s0, args.epsilon, omegas, args.horizon, icfg)
        for w, dev in table:
            out.write(f"{form:<10} omega={w:<8g} deviation={dev:.6e}\n")
        if args.epsilon != 0.0 and len(omegas) > 1:
            out.write(f"{form:<10} slope={fit_slope(table):.3f}\n")
    return 0


COMMANDS = {"simulate": cmd_simulate, "analyze-dae": cmd_analyze,
            "lcp-bench": cmd_bench, "probe-index": cmd_probe}


def run_cli(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    level = os.environ.get("CDYN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return COMMANDS[args.command](args, out)
    except StepFailure as exc:
        step = f" at step {exc.step}" if exc.step is not None else ""
        sys.stderr.write(f"error: step failure{step}: {exc}\n")
        return 1
    except ContractError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except CdynError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main():
    sys.exit(run_cli())
