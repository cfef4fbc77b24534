"""Batch command-line front end.

Exit codes: 0 success, 1 usage, 2 file parse/validation, 3 model
inconsistency, 4 numeric failure (singular pose, unidentifiable
parameters, degenerate setup, failed search). stdout is human-readable;
all machine-readable results go to the declared output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import doe, msa, robots, simcal
from .chain import Chain
from .errors import (
    ArmcalError,
    DegenerateSetupError,
    ModelError,
    NoSolutionError,
    SingularConfigurationError,
    SpecFileError,
    UnidentifiableParametersError,
)
from .ident import CalibrateOptions, MeasurementSet, calibrate
from .reduce import reduce_model
from .resources import load_chain
from .stiffness import SerialStiffnessModel

EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_MODEL = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _angles(text: str, n: int | None = None) -> np.ndarray:
    try:
        values = np.radians([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise SpecFileError(f"angle list {text!r}: {exc}") from exc
    if n is not None and len(values) != n:
        raise SpecFileError(f"expected {n} angles, got {len(values)}")
    return values


def _config_header(pairs: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in pairs.items())


# ---------------------------------------------------------------------------
# model


def cmd_model_validate(args) -> int:
    chain = load_chain(args.chain)
    chain.validate()
    print(f"{chain.name}: {chain.n_joints} joints, {len(chain.params)} parameters, "
          f"{chain.n_tools} reference points -- OK")
    return 0


def cmd_model_reduce(args) -> int:
    chain = load_chain(args.chain)
    reduced, report = reduce_model(chain)
    print(report.summary())
    print(f"parameters: {len(chain.params)} -> {len(reduced.params)}")
    if args.out:
        reduced.save(args.out)
        print(f"reduced model written to {args.out}")
    return 0


def cmd_model_fk(args) -> int:
    chain = load_chain(args.chain)
    q = _angles(args.q, chain.n_joints)
    poses = chain.forward_kinematics(q)
    for k, pose in enumerate(poses):
        x, y, z = pose.translation
        print(f"point {k + 1}: ({x:.4f}, {y:.4f}, {z:.4f}) mm")
    return 0


# ---------------------------------------------------------------------------
# plan


def _require_kuka(robot: str):
    if robot != "kuka-iiwa":
        raise SpecFileError(
            f"no pose-plan generator for robot {robot!r} (try kuka-iiwa)"
        )


def cmd_plan_generate(args) -> int:
    _require_kuka(args.robot)
    if args.pattern != "n4m4x2":
        raise SpecFileError(f"unknown pattern {args.pattern!r} (try n4m4x2)")
    first = None
    if args.first_joint:
        first = [float(v) for v in args.first_joint.split(",")]
    if args.assign == "default":
        plan = robots.iiwa_optimal_plan(first_joint_deg=first)
    else:
        if args.seed is None:
            raise SpecFileError("--assign search requires an explicit --seed")
        sym = robots.iiwa_symbolic_plan()
        limits = np.radians([[-l, l] for l in robots.IIWA_LIMITS_DEG])
        plan = doe.solve_free_angles(
            sym, limits=limits, tolerance=args.tol, seed=args.seed,
            defaults={k: np.radians(v)
                      for k, v in robots.IIWA_ASSIGNMENT_DEG.items()},
        )
        if first is not None:
            plan.configurations[:, 0] = np.radians(first)
    report = doe.optimality_residual(plan, args.tol)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(_config_header({
            "robot": args.robot, "pattern": args.pattern,
            "assign": args.assign, "tolerance": args.tol,
        }))
        fh.write(plan.to_csv())
    print(f"{plan.m} configurations written to {args.out}")
    print(f"max |residual| = {report.max_abs_residual:.3e}")
    return 0


def cmd_plan_check(args) -> int:
    limits = None
    decomp = None
    if args.robot:
        _require_kuka(args.robot)
        limits = np.radians([[-l, l] for l in robots.IIWA_LIMITS_DEG])
        decomp = robots.iiwa_decomposition()
    plan = doe.PosePlan.load(args.plan, limits=limits)
    full = doe.optimality_residual(plan, args.tol)
    ok = full.passed
    print(f"full chain: {'PASS' if full.passed else 'FAIL'} "
          f"(max |residual| {full.max_abs_residual:.3e}, tol {args.tol:g})")
    if decomp is not None:
        for key, rep in doe.subchain_reports(plan, decomp, args.tol).items():
            ok &= rep.passed
            print(f"subchain {key}: {'PASS' if rep.passed else 'FAIL'} "
                  f"(max |residual| {rep.max_abs_residual:.3e})")
    violations = plan.limit_violations()
    if violations:
        ok = False
        for row, joint, excess in violations:
            print(f"limit violation: row {row}, joint {joint + 1}, "
                  f"{np.degrees(excess):.2f} deg beyond range")
    if args.verbose:
        print(full.summary())
    return 0 if ok else EXIT_NUMERIC


def cmd_plan_random(args) -> int:
    _require_kuka(args.robot)
    plan = robots.iiwa_random_plan(args.m, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(_config_header({"robot": args.robot, "m": args.m,
                                 "seed": args.seed}))
        fh.write(plan.to_csv())
    print(f"{plan.m} random configurations written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# stiffness


def cmd_stiffness_compute(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecFileError(
                f"{args.model}: invalid JSON at line {exc.lineno}: {exc.msg}"
            ) from exc
    kind = raw.get("kind", "serial")
    if kind == "msa":
        if args.method != "msa":
            raise SpecFileError("an explicit nodal model only supports --method msa")
        system = msa.assemble(msa.model_from_dict(raw))
        print(system.dimension_report())
        kc = msa.cartesian_stiffness_msa(system)
        q = None
    elif kind == "serial":
        model = SerialStiffnessModel.from_dict(raw)
        q = (np.zeros(model.chain.n_joints) if args.q is None
             else _angles(args.q, model.chain.n_joints))
        if args.method == "vjm":
            from .vjm import cartesian_stiffness_vjm

            kc = cartesian_stiffness_vjm(model.vjm_model(), q)
        else:
            system = msa.assemble(model.msa_model(q))
            print(system.dimension_report())
            kc = msa.cartesian_stiffness_msa(system)
    else:
        raise SpecFileError(f"unknown stiffness model kind {kind!r}")

    header = {
        "method": args.method,
        "model": Path(args.model).name,
        "rows": "Fx,Fy,Fz[N] Mx,My,Mz[N*mm] per unit twist (mm, rad)",
    }
    if q is not None:
        header["q_deg"] = ",".join(f"{v:.6g}" for v in np.degrees(q))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(_config_header(header))
        for row in kc.matrix:
            fh.write(",".join(f"{v:.10e}" for v in row) + "\n")
    print(f"cartesian stiffness written to {args.out} "
          f"(symmetry error {kc.symmetry_error():.2e})")
    return 0


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate_run(args) -> int:
    chain = load_chain(args.chain)
    plan = doe.PosePlan.load(args.plan, limits=chain.limits)
    meas = MeasurementSet.load(args.measurements)
    options = CalibrateOptions(
        max_iterations=args.max_iterations,
        sigma=meas.sigma if meas.sigma > 0 else None,
    )
    result = calibrate(meas, chain, plan.configurations, options)
    out = {
        "config": {
            "chain": str(args.chain),
            "plan": str(args.plan),
            "measurements": str(args.measurements),
            "max_iterations": args.max_iterations,
            "sigma_mm": meas.sigma,
        },
        "converged": result.converged,
        "iterations": result.iterations,
        "residual_rms_mm": result.residual_rms,
        "residual_history_mm": result.residual_history,
        "condition": result.condition,
        "frame_absorbed": result.frame_absorbed,
        "base_position_mm": result.p_base.tolist(),
        "base_rotation": result.r_base.tolist(),
        "tool_points_mm": [p.tolist() for p in result.p_tool],
        "parameters": {
            e.id: {"value": e.value, "deviation": e.deviation, "unit": e.unit,
                   "std": result.param_std.get(e.id)}
            for e in result.params
        },
        "covariance_trace": (None if result.covariance is None
                             else result.covariance.trace),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.no_figures:
        from .plots import save_residual_history_figure

        fig_path = Path(args.out).with_suffix(".png")
        save_residual_history_figure(result.residual_history, fig_path)
        print(f"residual history figure: {fig_path}")
    state = "converged" if result.converged else "NOT CONVERGED"
    print(f"calibration {state} after {result.iterations} iterations, "
          f"residual RMS {result.residual_rms:.3e} mm; report: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate_run(args) -> int:
    scenario = simcal.SimScenario.load(args.scenario)
    report = simcal.run_comparison(scenario, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_dict = simcal.report_to_dict(report)
    (out_dir / "report.json").write_text(
        simcal.report_json(report), encoding="utf-8"
    )
    (out_dir / "report.csv").write_text(
        simcal.report_csv(report), encoding="utf-8"
    )
    wrote = ["report.json", "report.csv"]
    if scenario.trajectory is not None:
        traj_text = simcal.trajectories_csv(scenario, report)
        (out_dir / "trajectories.csv").write_text(traj_text, encoding="utf-8")
        wrote.append("trajectories.csv")
    if not args.no_figures:
        from .plots import save_improvement_figure, save_trajectory_figure

        save_improvement_figure(report_dict, out_dir / "parameter_errors.png")
        wrote.append("parameter_errors.png")
        if scenario.trajectory is not None:
            save_trajectory_figure(traj_text, out_dir / "trajectories.png")
            wrote.append("trajectories.png")
    for s in report.plan_stats:
        line = (f"plan {s.name}: failures {s.failures}, "
                f"trajectory RMS {s.trajectory_rms_mean:.4f} mm")
        if s.covariance_trace_wins is not None:
            line += f", covariance-trace wins {s.covariance_trace_wins}/{report.trials}"
        print(line)
    print(f"no-calibration trajectory RMS: "
          f"{report.no_calibration_trajectory_rms:.4f} mm")
    print(f"outputs in {out_dir}: {', '.join(wrote)}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="armcal",
                description="Serial-manipulator stiffness, pose planning and "
                            "calibration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("model", help="chain model operations")
    pm_sub = pm.add_subparsers(dest="subcommand", required=True)
    v = pm_sub.add_parser("validate", help="parse and validate a chain file")
    v.add_argument("chain")
    v.set_defaults(fn=cmd_model_validate)
    r = pm_sub.add_parser("reduce", help="strip non-identifiable parameters")
    r.add_argument("chain")
    r.add_argument("--out")
    r.set_defaults(fn=cmd_model_reduce)
    f = pm_sub.add_parser("fk", help="forward kinematics at a configuration")
    f.add_argument("chain")
    f.add_argument("--q", required=True, help="joint angles, degrees, comma-separated")
    f.set_defaults(fn=cmd_model_fk)

    pp = sub.add_parser("plan", help="measurement-pose plans")
    pp_sub = pp.add_subparsers(dest="subcommand", required=True)
    g = pp_sub.add_parser("generate", help="generate an optimal plan")
    g.add_argument("--robot", default="kuka-iiwa")
    g.add_argument("--pattern", default="n4m4x2")
    g.add_argument("--assign", choices=["default", "search"], default="default")
    g.add_argument("--seed", type=int)
    g.add_argument("--tol", type=float, default=1e-9)
    g.add_argument("--first-joint", help="override first-joint column, degrees")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plan_generate)
    c = pp_sub.add_parser("check", help="evaluate the optimality residual")
    c.add_argument("plan")
    c.add_argument("--robot", help="adds subchain and limit checks")
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--verbose", action="store_true")
    c.set_defaults(fn=cmd_plan_check)
    rr = pp_sub.add_parser("random", help="random plan within joint limits")
    rr.add_argument("--robot", default="kuka-iiwa")
    rr.add_argument("--m", type=int, default=16)
    rr.add_argument("--seed", type=int, required=True)
    rr.add_argument("--out", required=True)
    rr.set_defaults(fn=cmd_plan_random)

    ps = sub.add_parser("stiffness", help="Cartesian stiffness computation")
    ps_sub = ps.add_subparsers(dest="subcommand", required=True)
    sc = ps_sub.add_parser("compute", help="compute the 6x6 stiffness matrix")
    sc.add_argument("--method", choices=["vjm", "msa"], required=True)
    sc.add_argument("--model", required=True)
    sc.add_argument("--q", help="joint angles, degrees, comma-separated")
    sc.add_argument("--out", required=True)
    sc.set_defaults(fn=cmd_stiffness_compute)

    pc = sub.add_parser("calibrate", help="parameter identification")
    pc_sub = pc.add_subparsers(dest="subcommand", required=True)
    cr = pc_sub.add_parser("run", help="two-step calibration from measurements")
    cr.add_argument("--chain", required=True)
    cr.add_argument("--plan", required=True)
    cr.add_argument("--measurements", required=True)
    cr.add_argument("--out", required=True)
    cr.add_argument("--max-iterations", type=int, default=20)
    cr.add_argument("--no-figures", action="store_true")
    cr.set_defaults(fn=cmd_calibrate_run)

    pr = sub.add_parser("simulate", help="Monte-Carlo calibration comparison")
    pr_sub = pr.add_subparsers(dest="subcommand", required=True)
    sr = pr_sub.add_parser("run", help="run a scenario file")
    sr.add_argument("scenario")
    sr.add_argument("--out-dir", required=True)
    sr.add_argument("--jobs", type=int, default=1)
    sr.add_argument("--no-figures", action="store_true")
    sr.set_defaults(fn=cmd_simulate_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except SpecFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (SingularConfigurationError, UnidentifiableParametersError,
            DegenerateSetupError, NoSolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArmcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
