"""Command-line entry point: validate / synth / simulate / robust / sdp-solve.

Every command reads JSON inputs, writes JSON results (and CSV time series)
into --out, and prints a short summary.  Outputs carry no timestamps, so
identical inputs give byte-identical files.  Exit codes: 0 success, 1 usage,
2 validation failure, 3 solver infeasible, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import daesim, lmi, robust, sdpcore, synth
from .model import ModelError, load_plant, validate_plant

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _settings(args):
    return sdpcore.SolverSettings(tol_gap=args.tol_gap, tol_feas=args.tol_feas)


def _structure(plant, name):
    if name == "dynamic":
        return synth.FilterStructure.dynamic(plant.n, plant.p)
    if name == "static":
        return synth.FilterStructure.static_gain(plant.n, plant.p)
    if name == "general":
        return synth.FilterStructure.general(
            np.eye(plant.n), np.zeros((plant.n, plant.p)), e3_mode=synth.E3_VARIABLE
        )
    raise _UsageError(f"unknown structure {name!r}")


def cmd_validate(args):
    plant = load_plant(args.model)
    report = validate_plant(plant)
    out = _outdir(args)
    payload = {
        "schema": 1,
        "rank_E": report.rank_E,
        "regular": report.regular,
        "impulse_free": report.impulse_free,
        "observable": report.observable,
        "finite_eigenvalues": [[v.real, v.imag] for v in report.finite_eigenvalues],
        "messages": report.messages,
    }
    _write_json(out / "validation.json", payload)
    print(f"rank(E) = {report.rank_E}  regular = {report.regular}  "
          f"impulse_free = {report.impulse_free}  observable = {report.observable}")
    for msg in report.messages:
        print(f"  note: {msg}")
    if not report.regular or report.impulse_free is False or report.observable is False:
        raise ModelError("plant failed pencil validation")
    return EXIT_OK


def cmd_synth(args):
    plant = load_plant(args.model)
    structure = _structure(plant, args.structure)
    settings = _settings(args)
    if args.structure == "static":
        result = synth.synthesize_static(plant, args.mu, settings)
    elif args.mode == "min-mu":
        base = synth.synthesize(plant, args.mu, structure, settings)
        result = synth.synthesize(
            plant, args.mu, structure, settings,
            mode=synth.min_mu_mode(base.alpha1, base.alpha2),
        )
    else:
        result = synth.synthesize(plant, args.mu, structure, settings)
    out = _outdir(args)
    synth.save_synthesis(result, out / "synthesis.json")
    report = synth.verify_certificate(plant, result)
    payload = {
        "schema": 1,
        "checks": [
            {"name": c.name, "value": c.value, "bound": c.bound, "passed": c.passed}
            for c in report.checks
        ],
        "passed": report.passed,
    }
    _write_json(out / "certificate.json", payload)
    print(f"status = {result.solver.status}  iterations = {result.solver.iterations}")
    print(f"gamma* = {result.gamma_star:.6f}  mu = {result.mu:.6f}  "
          f"alpha1 = {result.alpha1:.6e}  alpha2 = {result.alpha2:.6f}")
    print(f"certificate checks passed = {report.passed}")
    return EXIT_OK


def cmd_simulate(args):
    plant = load_plant(args.model)
    filt = synth.load_filter(args.filter)
    scenario = daesim.load_scenario(args.scenario) if args.scenario else daesim.Scenario.nominal()
    if args.dt is not None or args.horizon is not None:
        scenario = daesim.Scenario(
            disturbance=scenario.disturbance,
            F_of_t=scenario.F_of_t,
            uncertainty_on=scenario.uncertainty_on,
            t_span=(scenario.t_span[0], scenario.t_span[0] + args.horizon)
            if args.horizon is not None
            else scenario.t_span,
            dt=args.dt if args.dt is not None else scenario.dt,
        )
    guess = np.asarray(args.x0, dtype=float) if args.x0 else None
    traj = daesim.run_scenario(plant, filt, scenario, x0_plant_guess=guess)
    out = _outdir(args)
    daesim.trajectory_to_csv(traj, out / "trajectory.csv")
    gain = traj.metadata.get("l2_gain")
    e0 = float(np.linalg.norm(traj.e[0]))
    ef = float(np.linalg.norm(traj.e[-1]))
    payload = {
        "schema": 1,
        "l2_gain": gain,
        "error_initial_norm": e0,
        "error_final_norm": ef,
        "x0_plant": traj.metadata["x0_plant"],
        "x0_filter": traj.metadata["x0_filter"],
        "dt": scenario.dt,
        "t_span": list(scenario.t_span),
        "newton_iterations": traj.metadata["newton_iterations"],
    }
    _write_json(out / "simulation.json", payload)
    print(f"samples = {traj.times.size}  |e(0)| = {e0:.6g}  |e(tf)| = {ef:.6g}")
    print(f"measured l2 gain = {gain if gain is not None else 'n/a (w = 0)'}")
    return EXIT_OK


def cmd_robust(args):
    with open(args.filter) as fh:
        data = json.load(fh)
    gamma_star = float(data["gamma_star"]) if "gamma_star" in data else None
    if gamma_star is None:
        raise ModelError("filter document carries no gamma_star")
    plant = load_plant(args.model)
    budget = robust.UncertaintyBudget(plant.gamma1, plant.gamma2, gamma_star)
    delta = robust.max_uniform_delta(budget) if not budget.empty else 0.0
    points = robust.region_boundary(budget, args.samples) if not budget.empty else []
    out = _outdir(args)
    robust.boundary_to_csv(points, out / "boundary.csv")
    payload = {
        "schema": 1,
        "gamma1": plant.gamma1,
        "gamma2": plant.gamma2,
        "gamma_star": gamma_star,
        "nominal": budget.nominal,
        "empty": budget.empty,
        "max_uniform_delta": delta,
    }
    _write_json(out / "budget.json", payload)
    print(f"gamma* = {gamma_star:.6f}  nominal = {budget.nominal:.6f}  "
          f"empty = {budget.empty}  max uniform delta = {delta:.6f}")
    return EXIT_OK


def cmd_sdp_solve(args):
    form = lmi.load_form(args.form)
    settings = _settings(args)
    solution = sdpcore.solve(form, settings)
    out = _outdir(args)
    payload = {
        "schema": 1,
        "status": solution.status,
        "objective": solution.objective,
        "x": solution.x.tolist(),
        "iterations": solution.iterations,
        "residuals": list(solution.residuals),
        "slacks": solution.slacks,
        "variables": {e.var.name: np.asarray(form.index.extract(solution.x, e.var.name)).tolist()
                      for e in form.index.entries},
    }
    _write_json(out / "solution.json", payload)
    print(f"status = {solution.status}  objective = {solution.objective:.10g}  "
          f"iterations = {solution.iterations}")
    if solution.status == sdpcore.PRIMAL_INFEASIBLE:
        raise synth.InfeasibleError("the given constraints admit no point")
    if solution.status in (sdpcore.NUMERICAL_FAILURE, sdpcore.MAX_ITERATIONS):
        raise synth.NumericalError(f"solver ended with status {solution.status}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="descfilt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--tol-gap", type=float, default=1e-8, dest="tol_gap")
        sp.add_argument("--tol-feas", type=float, default=1e-8, dest="tol_feas")

    sp = sub.add_parser("validate", help="pencil validation of a plant")
    sp.add_argument("--model", required=True)
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth", help="synthesize a robust H-infinity filter")
    sp.add_argument("--model", required=True)
    sp.add_argument("--mu", type=float, default=0.25)
    sp.add_argument("--structure", choices=("dynamic", "static", "general"), default="dynamic")
    sp.add_argument("--mode", choices=("max-gamma", "min-mu"), default="max-gamma")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("simulate", help="simulate plant + filter on a scenario")
    sp.add_argument("--model", required=True)
    sp.add_argument("--filter", required=True)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--x0", type=float, nargs="+", default=None, help="plant initial guess")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("robust", help="uncertainty budget for a synthesis result")
    sp.add_argument("--model", required=True)
    sp.add_argument("--filter", required=True)
    sp.add_argument("--samples", type=int, default=64)
    common(sp)
    sp.set_defaults(func=cmd_robust)

    sp = sub.add_parser("sdp-solve", help="solve a dumped standard-form SDP")
    sp.add_argument("--form", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sdp_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except synth.InfeasibleError as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (synth.NumericalError, daesim.SimulationError, sdpcore.SdpError) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelError, synth.SynthesisError, robust.BudgetError, lmi.LmiError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
