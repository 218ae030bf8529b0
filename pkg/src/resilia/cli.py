"""Command line entry point ``resilia``.

Exit codes: 0 success, 2 infeasible problem, 1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .duality import KKT_TOL
from .experiments.common import InfeasibleExperiment, write_outputs
from .experiments.mpc_wind import DEFAULT_GUSTS, WindConfig, run_mpc_wind
from .experiments.navigation import NavigationConfig, run_navigation
from .experiments.shepherd import ShepherdConfig, run_shepherd
from .problem import load_problem
from .resilient import ViolationCost, run_arrow_hurwicz, solve_mixed_enumeration, \
    solve_resilient_joint
from .robust import RobustConfig, estimate_violation_probability, solve_robust_surrogate, \
    solve_worst_case

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

log = logging.getLogger("resilia")


class Infeasible(Exception):
    pass


def _dual_rows(ps, lam, s):
    for i, c in enumerate(ps.constraints):
        name = c.name or str(i)
        for j in range(ps.n_scenarios):
            yield {"constraint": name, "scenario": j, "lambda": float(lam[i, j]),
                   "slack": float(s[i, j])}


def _emit(out, payload: dict, rows) -> None:
    print(json.dumps(payload, indent=2))
    if out is None:
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    with open(out / "duals.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["constraint", "scenario", "lambda", "slack"])
        writer.writeheader()
        writer.writerows(rows)


def _gamma_matrix(args, m: int) -> np.ndarray:
    if args.gamma_matrix:
        return np.atleast_2d(np.loadtxt(args.gamma_matrix, ndmin=2))
    return args.gamma * np.eye(m)


def _check_status(status: str) -> None:
    if status == "infeasible":
        raise Infeasible("problem is infeasible")
    if status != "converged":
        raise RuntimeError(f"solver stopped with status {status}")


def cmd_solve(args) -> None:
    ps = load_problem(args.problem)
    if args.mode == "robust":
        if args.delta is None:
            sol = solve_worst_case(ps, tol=args.tol)
            payload = {"report": sol.report.to_dict(), "z": sol.z.tolist()}
        else:
            lip = args.lipschitz
            if lip is None:
                declared = [c.lipschitz for c in ps.constraints if c.lipschitz is not None]
                if not declared:
                    raise ValueError("no Lipschitz bound declared; pass --lipschitz")
                lip = max(declared)
            pts = ps.scenarios.points
            sigma = args.sigma or RobustConfig.box_sigma(float((pts.max(0) - pts.min(0)).max()))
            sol = solve_robust_surrogate(ps, RobustConfig(args.delta, lip, sigma), tol=args.tol)
            payload = {"report": sol.report.to_dict(), "z": sol.z.tolist(),
                       "epsilon": sol.extra["epsilon"]}
            if sol.report.status == "converged":
                w = ps.scenarios.weights / ps.scenarios.weights.sum()

                def sampler(rng, n):
                    return pts[rng.choice(len(pts), size=n, p=w)]

                p, half = estimate_violation_probability(ps, sol.z, sampler, args.samples,
                                                         args.seed)
                payload["satisfaction_probability"] = p
                payload["ci_halfwidth"] = half
        _emit(args.out, payload, _dual_rows(ps, sol.lam, sol.s))
        _check_status(sol.report.status)
        return

    if args.cost == "linear":
        raise ValueError("linear violation cost has no equilibrium slack map; "
                         "use quadratic or heaviside")
    if args.cost == "heaviside":
        res = solve_mixed_enumeration(ps, [], list(range(ps.m)), args.gamma)
        payload = {"report": res.solutions["report"].to_dict(), "z": res.z.tolist(),
                   "achieved_delta": res.achieved_delta, "subset": list(res.subset),
                   "value": res.value}
        _emit(args.out, payload, _dual_rows(ps, np.zeros_like(res.s), res.s))
        return

    h = ViolationCost.quadratic(_gamma_matrix(args, ps.m))
    if args.algorithm == "joint":
        sol = solve_resilient_joint(ps, h, tol=args.tol, max_iter=args.max_iter)
        z, lam, s, report = sol.z, sol.lam, sol.s, sol.report
    else:
        state, report = run_arrow_hurwicz(ps, h, tol=args.tol, max_iter=args.max_iter)
        z, lam, s = state.z, state.lam, state.s
    _emit(args.out, {"report": report.to_dict(), "z": z.tolist()}, _dual_rows(ps, lam, s))
    _check_status(report.status)


def _modes(arg: str):
    return ("robust", "resilient") if arg == "both" else (arg,)


def cmd_shepherd(args) -> None:
    cfg = ShepherdConfig(perimeter_radius=args.radius, delta=args.delta,
                         sheep_count=args.sheep, mc_samples=args.samples, seed=args.seed,
                         rings=args.rings)
    results = run_shepherd(cfg, _modes(args.mode))
    rows = []
    for mode, res in results.items():
        for k, d in enumerate(res.violation_samples):
            rows.append({"step": k, "mode": mode, "x0": res.decision["position"][0],
                         "x1": res.decision["position"][1], "max_distance": d})
    write_outputs(args.out, {m: r.to_dict() for m, r in results.items()}, rows)
    for mode, res in results.items():
        print(f"{mode}: position={np.round(res.decision['position'], 6).tolist()} "
              f"objective={res.objective:.6g}")


def cmd_navigate(args) -> None:
    results = run_navigation(NavigationConfig(delta=args.delta), _modes(args.mode))
    payload, rows, failed = {}, [], []
    for mass, by_mode in results.items():
        payload[str(mass)] = {m: r.to_dict() for m, r in by_mode.items()}
        for mode, r in by_mode.items():
            rows.extend(r.trace)
            failed += [r.status] if r.status != "converged" else []
            print(f"mass={mass} {mode}: reached={r.decision['reached_terminal']} "
                  f"terminal_distance={r.decision['terminal_distance']:.4g}")
    write_outputs(args.out, payload, rows)
    if "infeasible" in failed:
        raise Infeasible("a navigation plan is infeasible")
    if failed:
        raise RuntimeError(f"navigation solves failed: {sorted(set(failed))}")


def cmd_mpc_wind(args) -> None:
    gusts = {} if args.no_gusts else dict(DEFAULT_GUSTS)
    payload, rows, statuses = {}, [], []
    for mode in _modes(args.mode):
        cfg = WindConfig(gusts=gusts, slacks=(mode == "resilient"), max_steps=args.max_steps)
        res = run_mpc_wind(cfg)
        payload[mode] = {**res.to_dict(), "trace": res.trace}
        rows.extend({"mode": mode, **r} for r in res.trace)
        statuses.append(res.status)
        print(f"{mode}: status={res.status} steps={res.decision['steps']}")
    write_outputs(args.out, payload, rows)
    if "infeasible" in statuses:
        raise Infeasible("a horizon problem became infeasible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resilia", description="Robust and resilient planning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a problem stored as JSON")
    p.add_argument("problem")
    p.add_argument("--mode", choices=["robust", "resilient"], default="resilient")
    p.add_argument("--delta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lipschitz", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--cost", choices=["quadratic", "linear", "heaviside"], default="quadratic")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--gamma-matrix")
    p.add_argument("--algorithm", choices=["joint", "arrow-hurwicz"], default="joint")
    p.add_argument("--tol", type=float, default=KKT_TOL)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("shepherd", help="shepherd placement experiment")
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--sheep", type=int, default=5)
    p.add_argument("--rings", type=int, default=7)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["robust", "resilient", "both"], default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shepherd)

    p = sub.add_parser("navigate", help="waypoint navigation with an obstruction")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--mode", choices=["robust", "resilient", "both"], default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("mpc-wind", help="receding-horizon flight through wind gusts")
    p.add_argument("--mode", choices=["robust", "resilient", "both"], default="resilient")
    p.add_argument("--no-gusts", action="store_true")
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mpc_wind)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "max_iter", 0) is None:
        args.max_iter = 100 if args.algorithm == "joint" else 200_000
    try:
        args.func(args)
    except (Infeasible, InfeasibleExperiment) as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as err:  # noqa: BLE001 - reported through the exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
