"""Monte-Carlo calibration experiments: truth generation, noisy
measurements, identification under competing plans, comparison reports.

Determinism contract: a scenario's master seed spawns one child stream
per trial and fixed-order grandchildren inside each trial (truth draw,
then per-plan noise and plan draws), so serial and parallel execution
produce identical reports.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import robots
from .chain import Chain, ParamVector
from .doe import PosePlan, covariance
from .errors import SpecFileError
from .ident import CalibrateOptions, MeasurementSet, calibrate
from .resources import BUILTIN_CHAINS, data_path, load_chain

INF_FACTOR_FLOOR = 1e-12


@dataclass
class DeviationSpec:
    """Per-parameter standard deviations for the truth generator."""

    rot_std_rad: float = 5e-3
    trans_std_mm: float = 5e-3
    overrides: dict[str, float] = field(default_factory=dict)

    def std_for(self, entry) -> float:
        if entry.id in self.overrides:
            return float(self.overrides[entry.id])
        return self.rot_std_rad if entry.unit == "rad" else self.trans_std_mm


@dataclass
class PlanSource:
    """A named plan: a fixed PosePlan or a fresh random draw per trial."""

    name: str
    plan: PosePlan | None = None
    random_m: int | None = None

    def realize(self, chain: Chain, rng: np.random.Generator) -> PosePlan:
        if self.plan is not None:
            return self.plan
        limits = chain.limits
        if limits is None:
            limits = np.tile([-np.pi, np.pi], (chain.n_joints, 1))
        q = rng.uniform(limits[:, 0], limits[:, 1],
                        size=(self.random_m, chain.n_joints))
        return PosePlan(q, [f"{self.name}[{k}]" for k in range(self.random_m)],
                        limits=limits)


@dataclass
class SimScenario:
    chain: Chain
    plans: list[PlanSource]
    sigma: float = 0.05
    trials: int = 100
    seed: int = 0
    deviations: DeviationSpec = field(default_factory=DeviationSpec)
    trajectory: np.ndarray | None = None  # (m, n_joints) radians
    max_iterations: int = 20
    name: str = "scenario"

    @staticmethod
    def load(path) -> "SimScenario":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecFileError(
                f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"
            ) from exc
        return SimScenario.from_dict(raw, base_dir=path.parent)

    @staticmethod
    def from_dict(raw: dict, base_dir: Path | None = None) -> "SimScenario":
        base_dir = Path(base_dir or ".")

        def resolve(ref: str) -> Path:
            p = base_dir / ref
            if p.exists():
                return p
            builtin = data_path(ref)
            if builtin.exists():
                return builtin
            raise SpecFileError(f"cannot resolve file reference {ref!r}")

        if "chain" not in raw:
            raise SpecFileError("scenario needs a chain reference")
        ref = str(raw["chain"])
        if ref in BUILTIN_CHAINS:
            chain = load_chain(ref)
        elif (base_dir / ref).exists():
            chain = Chain.load(base_dir / ref)
        else:
            chain = load_chain(ref)  # absolute path or error with clear message
        plans = []
        for name, spec in raw.get("plans", {}).items():
            if isinstance(spec, str):
                plans.append(
                    PlanSource(name, PosePlan.load(resolve(spec), chain.limits))
                )
            elif isinstance(spec, dict) and "random" in spec:
                plans.append(PlanSource(name, random_m=int(spec["random"]["m"])))
            else:
                raise SpecFileError(f"plan {name!r}: expected a path or random spec")
        if not plans:
            raise SpecFileError("scenario declares no plans")
        devs = raw.get("deviations", {})
        trajectory = None
        if "trajectory" in raw:
            trajectory = PosePlan.load(resolve(raw["trajectory"])).configurations
        return SimScenario(
            chain=chain,
            plans=plans,
            sigma=float(raw.get("sigma_mm", 0.05)),
            trials=int(raw.get("trials", 100)),
            seed=int(raw["seed"]),
            deviations=DeviationSpec(
                rot_std_rad=float(devs.get("rot_std_rad", 5e-3)),
                trans_std_mm=float(devs.get("trans_std_mm", 5e-3)),
                overrides={k: float(v) for k, v in devs.get("overrides", {}).items()},
            ),
            trajectory=trajectory,
            max_iterations=int(raw.get("max_iterations", 20)),
            name=str(raw.get("name", "scenario")),
        )


def generate_true_params(chain: Chain, spec: DeviationSpec,
                         rng: np.random.Generator) -> ParamVector:
    """Draw a ground-truth deviation for every chain parameter."""
    stds = np.array([spec.std_for(e) for e in chain.params])
    return chain.params.with_deviations(rng.normal(0.0, 1.0, len(stds)) * stds)


def simulate_measurements(chain: Chain, pi_true: ParamVector, plan: PosePlan,
                          sigma: float, seed) -> MeasurementSet:
    """Forward kinematics of every (configuration, reference point) plus
    i.i.d. Gaussian coordinate noise."""
    if plan.n != chain.n_joints:
        raise SpecFileError(
            f"plan has {plan.n} joints, chain has {chain.n_joints}"
        )
    rng = np.random.default_rng(seed)
    q = plan.configurations
    pos = chain.tool_positions(q, pi_true)
    m, n_tools = pos.shape[0], pos.shape[1]
    ci = np.repeat(np.arange(m), n_tools)
    pt = np.tile(np.arange(n_tools), m)
    clean = pos[ci, pt]
    noisy = clean + rng.normal(0.0, sigma, clean.shape) if sigma > 0 else clean
    seed_repr = seed if isinstance(seed, (int, np.integer)) else None
    return MeasurementSet(ci, pt, noisy, sigma=float(sigma), seed=seed_repr)


def trajectory_error(chain: Chain, pi_ref: ParamVector, pi_test: ParamVector,
                     trajectory, tool_index: int = 0):
    """Per-configuration tip distance (mm) and its RMS between two
    parameter states along a joint-space trajectory."""
    q = np.atleast_2d(np.asarray(trajectory, dtype=float))
    a = chain.tool_positions(q, pi_ref)[:, tool_index]
    b = chain.tool_positions(q, pi_test)[:, tool_index]
    d = np.linalg.norm(a - b, axis=1)
    return d, float(np.sqrt(np.mean(d ** 2)))


# ---------------------------------------------------------------------------
# comparison run


@dataclass
class ParamRow:
    name: str
    unit: str
    nominal: float
    true_value: float                  # trial 0
    estimates: dict[str, float]        # trial 0, per plan
    rms_error: dict[str, float]        # over trials, per plan
    baseline_rms_error: float          # |true - nominal| over trials
    improvement: dict[str, float]      # vs nominal, per plan


@dataclass
class PlanStats:
    name: str
    failures: int
    covariance_trace_mean: float
    log_det_information_mean: float
    trajectory_rms_mean: float
    covariance_trace_wins: int | None = None  # vs the second plan, paired


@dataclass
class ComparisonReport:
    scenario_name: str
    sigma: float
    trials: int
    seed: int
    rows: list[ParamRow]
    plan_stats: list[PlanStats]
    no_calibration_trajectory_rms: float
    improvement_averages: dict[str, float]
    pairwise_improvement: dict[str, float] | None
    config: dict

    def table_param_ids(self) -> list[str]:
        return [r.name for r in self.rows]


def _trial_seeds(master_seed: int, trials: int):
    return np.random.SeedSequence(master_seed).spawn(trials)


def _run_trial(scenario: SimScenario, trial_seed) -> dict:
    children = trial_seed.spawn(1 + 2 * len(scenario.plans))
    rng_truth = np.random.default_rng(children[0])
    pi_true = generate_true_params(scenario.chain, scenario.deviations, rng_truth)
    out = {"true_dev": pi_true.deviations(), "plans": {}}
    for k, source in enumerate(scenario.plans):
        plan_rng = np.random.default_rng(children[1 + 2 * k])
        noise_seed = children[2 + 2 * k]
        plan = source.realize(scenario.chain, plan_rng)
        meas = simulate_measurements(
            scenario.chain, pi_true, plan, scenario.sigma, noise_seed
        )
        entry = {"failed": False}
        try:
            res = calibrate(
                meas, scenario.chain, plan.configurations,
                CalibrateOptions(
                    max_iterations=scenario.max_iterations,
                    sigma=scenario.sigma if scenario.sigma > 0 else None,
                ),
            )
            entry["est_dev"] = res.params.deviations()
            entry["converged"] = res.converged
            if res.covariance is not None:
                entry["cov_trace"] = res.covariance.trace
                entry["log_det"] = res.covariance.log_det_information
            if scenario.trajectory is not None:
                _, rms = trajectory_error(
                    scenario.chain, pi_true, res.params, scenario.trajectory
                )
                entry["traj_rms"] = rms
        except Exception as exc:  # identification failures are data, not crashes
            entry["failed"] = True
            entry["error"] = f"{type(exc).__name__}: {exc}"
        out["plans"][source.name] = entry
    if scenario.trajectory is not None:
        _, rms = trajectory_error(
            scenario.chain, pi_true, scenario.chain.params, scenario.trajectory
        )
        out["nocal_traj_rms"] = rms
    return out


def _worker(args):
    scenario, seed = args
    return _run_trial(scenario, seed)


def run_comparison(scenario: SimScenario, jobs: int = 1) -> ComparisonReport:
    """Calibrate every plan on every trial and aggregate the comparison.

    Results are independent of ``jobs`` because every trial consumes its
    own seed substream and trials are collected in index order.
    """
    if len(scenario.plans) < 1:
        raise SpecFileError("run_comparison needs at least one plan")
    seeds = _trial_seeds(scenario.seed, scenario.trials)
    if jobs > 1:
        payload = [(scenario, s) for s in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_worker, payload, chunksize=4))
    else:
        trials = [_run_trial(scenario, s) for s in seeds]

    chain = scenario.chain
    ids = chain.params.ids()
    robot_ids = chain.param_ids_by_segment("robot")
    base_pos_ids = [p for p in chain.param_ids_by_segment("base")
                    if chain.params.entry(p).unit == "mm"]
    tool_ids = chain.param_ids_by_segment("tool")
    table_ids = robot_ids + base_pos_ids + tool_ids

    true_dev = np.array([t["true_dev"] for t in trials])  # (T, P)
    plan_names = [p.name for p in scenario.plans]
    est_dev: dict[str, np.ndarray] = {}
    ok_mask: dict[str, np.ndarray] = {}
    for name in plan_names:
        rows = []
        ok = []
        for t in trials:
            e = t["plans"][name]
            ok.append(not e["failed"])
            rows.append(e.get("est_dev", np.zeros(len(ids))))
        est_dev[name] = np.array(rows)
        ok_mask[name] = np.array(ok)

    def rms_over_trials(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        if not np.any(mask):
            return np.full(values.shape[1], np.nan)
        return np.sqrt(np.mean(values[mask] ** 2, axis=0))

    all_ok = np.ones(scenario.trials, dtype=bool)
    for name in plan_names:
        all_ok &= ok_mask[name]
    baseline_rms = rms_over_trials(true_dev, all_ok)

    def improvement(base: float, err: float) -> float:
        if err < INF_FACTOR_FLOOR:
            return 0.0 if base < INF_FACTOR_FLOOR else float("inf")
        return base / err

    rows = []
    err_rms = {
        name: rms_over_trials(est_dev[name] - true_dev, all_ok)
        for name in plan_names
    }
    for pid in table_ids:
        k = ids.index(pid)
        entry = chain.params.entry(pid)
        rows.append(
            ParamRow(
                name=pid,
                unit=entry.unit,
                nominal=entry.nominal,
                true_value=entry.nominal + float(true_dev[0, k]),
                estimates={
                    name: entry.nominal + float(est_dev[name][0, k])
                    for name in plan_names
                },
                rms_error={name: float(err_rms[name][k]) for name in plan_names},
                baseline_rms_error=float(baseline_rms[k]),
                improvement={
                    name: improvement(float(baseline_rms[k]),
                                      float(err_rms[name][k]))
                    for name in plan_names
                },
            )
        )

    averages = {}
    for name in plan_names:
        finite = [r.improvement[name] for r in rows
                  if np.isfinite(r.improvement[name])]
        averages[name] = float(np.mean(finite)) if finite else float("nan")

    pairwise = None
    if len(plan_names) == 2:
        a, b = plan_names
        pairwise = {}
        for r in rows:
            k = improvement(r.rms_error[b], r.rms_error[a])
            pairwise[r.name] = k
        finite = [v for v in pairwise.values() if np.isfinite(v)]
        pairwise["average"] = float(np.mean(finite)) if finite else float("nan")

    stats = []
    for idx, name in enumerate(plan_names):
        traces = [t["plans"][name].get("cov_trace") for t in trials]
        logdets = [t["plans"][name].get("log_det") for t in trials]
        trajs = [t["plans"][name].get("traj_rms") for t in trials]
        wins = None
        if len(plan_names) == 2 and idx == 0:
            other = plan_names[1]
            wins = sum(
                1
                for t in trials
                if not t["plans"][name]["failed"]
                and not t["plans"][other]["failed"]
                and t["plans"][name].get("cov_trace", np.inf)
                < t["plans"][other].get("cov_trace", np.inf)
            )
        stats.append(
            PlanStats(
                name=name,
                failures=int(np.sum(~ok_mask[name])),
                covariance_trace_mean=_nanmean(traces),
                log_det_information_mean=_nanmean(logdets),
                trajectory_rms_mean=_nanmean(trajs),
                covariance_trace_wins=wins,
            )
        )

    nocal = _nanmean([t.get("nocal_traj_rms") for t in trials])
    config = {
        "scenario": scenario.name,
        "chain": chain.name,
        "sigma_mm": scenario.sigma,
        "trials": scenario.trials,
        "seed": scenario.seed,
        "plans": plan_names,
        "deviations": {
            "rot_std_rad": scenario.deviations.rot_std_rad,
            "trans_std_mm": scenario.deviations.trans_std_mm,
            "overrides": dict(sorted(scenario.deviations.overrides.items())),
        },
        "max_iterations": scenario.max_iterations,
        "sigma_is_assumed_default": scenario.sigma == 0.05,
    }
    return ComparisonReport(
        scenario_name=scenario.name,
        sigma=scenario.sigma,
        trials=scenario.trials,
        seed=scenario.seed,
        rows=rows,
        plan_stats=stats,
        no_calibration_trajectory_rms=nocal,
        improvement_averages=averages,
        pairwise_improvement=pairwise,
        config=config,
    )


def _nanmean(values) -> float:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# report serialization


def _fmt(v: float) -> str | float:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "nan"
    if isinstance(v, float) and np.isinf(v):
        return "inf"
    return float(v)


def report_to_dict(report: ComparisonReport) -> dict:
    return {
        "config": report.config,
        "no_calibration_trajectory_rms_mm": _fmt(
            report.no_calibration_trajectory_rms
        ),
        "improvement_averages": {
            k: _fmt(v) for k, v in report.improvement_averages.items()
        },
        "pairwise_improvement": (
            None
            if report.pairwise_improvement is None
            else {k: _fmt(v) for k, v in report.pairwise_improvement.items()}
        ),
        "plans": [
            {
                "name": s.name,
                "failures": s.failures,
                "covariance_trace_mean": _fmt(s.covariance_trace_mean),
                "log_det_information_mean": _fmt(s.log_det_information_mean),
                "trajectory_rms_mean_mm": _fmt(s.trajectory_rms_mean),
                "covariance_trace_wins": s.covariance_trace_wins,
            }
            for s in report.plan_stats
        ],
        "parameters": [
            {
                "name": r.name,
                "unit": r.unit,
                "nominal": _fmt(r.nominal),
                "true_value": _fmt(r.true_value),
                "estimates": {k: _fmt(v) for k, v in r.estimates.items()},
                "rms_error": {k: _fmt(v) for k, v in r.rms_error.items()},
                "baseline_rms_error": _fmt(r.baseline_rms_error),
                "improvement": {k: _fmt(v) for k, v in r.improvement.items()},
            }
            for r in report.rows
        ],
    }


def report_json(report: ComparisonReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_csv(report: ComparisonReport) -> str:
    names = [s.name for s in report.plan_stats]
    header = ["parameter", "unit", "nominal", "true_value"]
    for n in names:
        header += [f"estimate_{n}", f"rms_error_{n}", f"improvement_{n}"]
    header += ["baseline_rms_error"]
    lines = [",".join(header)]
    for r in report.rows:
        cells = [r.name, r.unit, f"{r.nominal:.6f}", f"{r.true_value:.6f}"]
        for n in names:
            cells += [
                f"{r.estimates[n]:.6f}",
                f"{r.rms_error[n]:.6g}",
                "inf" if np.isinf(r.improvement[n]) else f"{r.improvement[n]:.2f}",
            ]
        cells += [f"{r.baseline_rms_error:.6g}"]
        lines.append(",".join(cells))
    avg = ["average", "", "", ""]
    for n in names:
        avg += ["", "", f"{report.improvement_averages[n]:.2f}"]
    avg += [""]
    lines.append(",".join(avg))
    return "\n".join(lines) + "\n"


def trajectories_csv(scenario: SimScenario, report: ComparisonReport) -> str:
    """Plot-ready trajectory columns from the first trial's estimates."""
    if scenario.trajectory is None:
        raise SpecFileError("scenario has no trajectory")
    seeds = _trial_seeds(scenario.seed, scenario.trials)
    trial = _run_trial(scenario, seeds[0])
    chain = scenario.chain
    pi_true = chain.params.with_deviations(trial["true_dev"])
    q = scenario.trajectory
    target = chain.tool_positions(q, pi_true)[:, 0]
    nocal = chain.tool_positions(q, chain.params)[:, 0]
    cols = {"target": target, "no_cal": nocal}
    for name, entry in trial["plans"].items():
        if not entry["failed"]:
            pi_est = chain.params.with_deviations(entry["est_dev"])
            cols[name] = chain.tool_positions(q, pi_est)[:, 0]
    header = ["index"]
    for name in cols:
        header += [f"{name}_x", f"{name}_y", f"{name}_z"]
        if name != "target":
            header.append(f"{name}_error")
    lines = [",".join(header)]
    for k in range(q.shape[0]):
        cells = [str(k)]
        for name, xyz in cols.items():
            cells += [f"{v:.6f}" for v in xyz[k]]
            if name != "target":
                cells.append(f"{np.linalg.norm(xyz[k] - target[k]):.6f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
