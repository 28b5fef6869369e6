"""Command line entry point: ``jflow run | newton | check | verify | compare``."""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NoConvergence, PositivityLost, SolverStall
from .estimates import check_cone
from .experiment import load_config, monitors_passed, prepare_initial, run_monitors
from .flow import CONVERGED, POSITIVITY_LOST, STEP_FAILURE, TIMEOUT, evaluate_state, run_flow
from .functionals import normalize_to_I_zero
from .io import read_field, write_field, write_json, write_trajectory_csv
from .newton import newton_critical
from .verify import SUITES

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TIMEOUT = 2
EXIT_MONITOR = 3
EXIT_POSITIVITY = 4
EXIT_NO_CONVERGENCE = 5
EXIT_CONE = 6


def _field_meta(config):
    return {"n": config.n, "N": config.N, "mode": config.mode}


def _load_phi(path, grid):
    phi, _ = read_field(path)
    if phi.shape != grid.shape:
        raise ConfigError(str(path), f"field shape {phi.shape} does not match grid {grid.shape}")
    return phi


def cmd_run(args):
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.problem()
    cone = check_cone(problem.g, problem.chi0)
    phi0 = prepare_initial(config, problem)
    start = time.perf_counter()
    try:
        traj = run_flow(phi0, problem, config.flow)
    except PositivityLost as exc:
        write_json(out / "summary.json", {"version": __version__, "status": POSITIVITY_LOST,
                                          "message": str(exc), "cone": cone.as_dict()})
        print(f"positivity lost: {exc}", file=sys.stderr)
        return EXIT_POSITIVITY
    elapsed = time.perf_counter() - start
    verdicts = run_monitors(traj, problem, config.monitors)
    final = traj.final
    write_trajectory_csv(out / "trajectory.csv", traj.diagnostics)
    write_field(out / "final_phi.bin", final.phi, t=final.t, **_field_meta(config))
    summary = {
        "version": __version__,
        "status": traj.status,
        "message": traj.message,
        "converged": traj.converged,
        "c": problem.c,
        "final_t": final.t,
        "final_residual": final.residual,
        "n_steps": traj.n_steps,
        "n_rejected": traj.n_rejected,
        "n_records": len(traj.states),
        "cone": cone.as_dict(),
        "monitors": verdicts,
        "monitors_passed": monitors_passed(verdicts),
        # wall-clock numbers live in a separate file so this one stays reproducible
        "timing": "timing.json",
    }
    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", {"flow_seconds": elapsed})
    print(f"{traj.status}: t = {final.t:.6g}, residual = {final.residual:.3e}, steps = {traj.n_steps}")
    if traj.status in (POSITIVITY_LOST, STEP_FAILURE):
        return EXIT_POSITIVITY
    if not monitors_passed(verdicts):
        return EXIT_MONITOR
    if traj.status == TIMEOUT:
        return EXIT_TIMEOUT
    return EXIT_OK if traj.status == CONVERGED else EXIT_TIMEOUT


def cmd_newton(args):
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.problem()
    if args.warm_start:
        phi0 = _load_phi(args.warm_start, problem.grid)
    else:
        phi0 = prepare_initial(config, problem)
    start = time.perf_counter()
    try:
        phi, report = newton_critical(phi0, problem, tol=config.newton_tol, max_iter=config.newton_max_iter)
    except (NoConvergence, SolverStall) as exc:
        payload = {"version": __version__, "status": "NO_CONVERGENCE", "message": str(exc)}
        rep = getattr(exc, "report", None)
        if rep is not None:
            payload.update(rep.as_dict())
        write_json(out / "newton_report.json", payload)
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except PositivityLost as exc:
        write_json(out / "newton_report.json", {"version": __version__, "status": POSITIVITY_LOST,
                                                 "message": str(exc)})
        print(f"positivity lost: {exc}", file=sys.stderr)
        return EXIT_POSITIVITY
    elapsed = time.perf_counter() - start
    payload = {"version": __version__, "status": CONVERGED, "c": problem.c, **report.as_dict(),
               "final_residual": report.residuals[-1]}
    write_json(out / "newton_report.json", payload)
    write_json(out / "timing.json", {"newton_seconds": elapsed})
    write_field(out / "final_phi.bin", phi, **_field_meta(config))
    print(f"{CONVERGED}: {report.iterations} iterations, residual = {report.residuals[-1]:.3e}")
    return EXIT_OK


def cmd_check(args):
    config = load_config(args.config)
    rep = check_cone(config.g, config.chi0, config.n)
    print(json.dumps({"c": rep.c, "donaldson_ok": rep.donaldson_ok, "cone_ok": rep.cone_ok,
                      "eps_max": rep.eps_max, "min_eigs": rep.min_eigs}, indent=2, sort_keys=True))
    return EXIT_OK if rep.cone_ok else EXIT_CONE


def cmd_verify(args):
    results = SUITES[args.suite](args.seed)
    ok = True
    for r in results:
        ok &= bool(r["passed"])
        extras = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in r.items() if k not in ("property", "passed", "errors"))
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['property']}: {extras}")
    return EXIT_OK if ok else EXIT_MONITOR


def cmd_compare(args):
    config = load_config(args.config)
    problem = config.problem()
    grid = problem.grid
    a = normalize_to_I_zero(_load_phi(args.a, grid), problem.chi0, grid)
    b = normalize_to_I_zero(_load_phi(args.b, grid), problem.chi0, grid)
    diff = a - b
    sup = float(np.max(np.abs(diff)))
    l2 = float(np.sqrt(grid.integrate(diff * diff)))
    res_a = evaluate_state(a, 0.0, problem).residual
    res_b = evaluate_state(b, 0.0, problem).residual
    print(json.dumps({"sup_diff": sup, "l2_diff": l2, "residual_a": res_a, "residual_b": res_b},
                     indent=2, sort_keys=True))
    if args.tol is not None and sup > args.tol:
        return EXIT_MONITOR
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="jflow", description="J-flow experiments on flat Kähler tori.")
    p.add_argument("--version", action="version", version=f"jflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate the flow and write trajectory artifacts")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    newton = sub.add_parser("newton", help="solve the critical equation by Newton-Krylov")
    newton.add_argument("--config", required=True)
    newton.add_argument("--out", required=True)
    newton.add_argument("--warm-start", dest="warm_start", default=None, help="phi.bin to start from")
    newton.set_defaults(func=cmd_newton)

    check = sub.add_parser("check", help="report the cone and Donaldson conditions")
    check.add_argument("--config", required=True)
    check.set_defaults(func=cmd_check)

    verify = sub.add_parser("verify", help="run a property suite")
    verify.add_argument("--suite", required=True, choices=sorted(SUITES))
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=cmd_verify)

    compare = sub.add_parser("compare", help="compare two fields after I-normalization")
    compare.add_argument("--a", required=True)
    compare.add_argument("--b", required=True)
    compare.add_argument("--config", required=True)
    compare.add_argument("--tol", type=float, default=None, help="exit 3 if the sup difference exceeds this")
    compare.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
