"""Design of calibration experiments for serial chains with revolute joints.

The stacked identification Jacobian of the planar cumulative-angle model
becomes diagonal (D-optimal) when, over the measurement plan, the sums

    sum_k cos(theta_i^k - theta_j^k)   and   sum_k sin(theta_i^k - theta_j^k)

vanish, where theta_i^k is the cumulative joint angle of configuration k
up to joint i.

Pair convention (important): the pass verdict uses pairs i > j >= 1.
Differences with j >= 1 never contain the first joint coordinate, which
is why any assignment of the first column preserves optimality and why
spatial decompositions prepend a virtual joint to subchains that do not
start at joint 1. The j = 0 pairs (cumulative sums against the fixed
frame) are always computed and reported; they become binding via
``include_fixed_frame``, which is required exactly when

* the plan is a virtual-led subchain whose virtual column has been
  dropped (the virtual coordinate ate the first-joint exemption), or
* the planar model identifies a fixed-frame base-link length.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NoSolutionError, SpecFileError, UnidentifiableParametersError

TWO_THIRDS_PI = 2.0 * np.pi / 3.0


# ---------------------------------------------------------------------------
# symbolic angles


class AngleExpr:
    """Linear expression ``sum(coeff * free_angle) + const`` in radians."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs=None, const=0.0):
        self.coeffs: dict[str, float] = dict(coeffs or {})
        self.const = float(const)

    @staticmethod
    def wrap(value) -> "AngleExpr":
        if isinstance(value, AngleExpr):
            return value
        if isinstance(value, str):
            return AngleExpr({value: 1.0})
        return AngleExpr({}, float(value))

    def __add__(self, other):
        other = AngleExpr.wrap(other)
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs.get(k, 0.0) + v
        return AngleExpr({k: v for k, v in coeffs.items() if v != 0.0},
                         self.const + other.const)

    def __sub__(self, other):
        other = AngleExpr.wrap(other)
        return self + AngleExpr({k: -v for k, v in other.coeffs.items()}, -other.const)

    def is_numeric(self) -> bool:
        return not self.coeffs

    def names(self) -> set[str]:
        return set(self.coeffs)

    def evaluate(self, assignment: dict[str, float]) -> float:
        value = self.const
        for k, c in self.coeffs.items():
            if k not in assignment:
                raise KeyError(f"free angle {k!r} has no assigned value")
            value += c * assignment[k]
        return value

    def __repr__(self):
        parts = []
        for k in sorted(self.coeffs):
            c = self.coeffs[k]
            parts.append(k if c == 1.0 else f"{c:g}*{k}")
        if self.const or not parts:
            parts.append(f"{np.degrees(self.const):g}deg")
        return " + ".join(parts).replace("+ -", "- ")


# ---------------------------------------------------------------------------
# plans


@dataclass
class PosePlan:
    """m x n matrix of joint configurations (radians) with row provenance."""

    configurations: np.ndarray
    labels: list[str] = field(default_factory=list)
    joint_names: list[str] | None = None
    limits: np.ndarray | None = None  # (n, 2) radians

    def __post_init__(self):
        self.configurations = np.atleast_2d(
            np.asarray(self.configurations, dtype=float)
        )
        if not self.labels:
            self.labels = [f"row{k}" for k in range(self.m)]
        if len(self.labels) != self.m:
            raise SpecFileError("one label per plan row required")

    @property
    def m(self) -> int:
        return self.configurations.shape[0]

    @property
    def n(self) -> int:
        return self.configurations.shape[1]

    def limit_violations(self) -> list[tuple[int, int, float]]:
        """(row, joint, excess_rad) for every entry outside the limits."""
        if self.limits is None:
            return []
        lo, hi = self.limits[:, 0], self.limits[:, 1]
        out = []
        for k, row in enumerate(self.configurations):
            for j, v in enumerate(row):
                if v < lo[j] - 1e-12 or v > hi[j] + 1e-12:
                    out.append((k, j, float(max(lo[j] - v, v - hi[j]))))
        return out

    def to_csv(self) -> str:
        names = self.joint_names or [f"joint{j + 1}" for j in range(self.n)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for row in np.degrees(self.configurations):
            w.writerow([f"{v:.10g}" for v in row])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def from_csv(text: str, limits=None) -> "PosePlan":
        lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
        rows = [r for r in csv.reader(io.StringIO("\n".join(lines))) if r]
        if not rows:
            raise SpecFileError("empty plan file")
        header = rows[0]
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise SpecFileError(f"plan file has a non-numeric entry: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != len(header):
            raise SpecFileError("plan rows do not match the header width")
        return PosePlan(np.radians(data), joint_names=header, limits=limits)

    @staticmethod
    def load(path, limits=None) -> "PosePlan":
        with open(path, "r", encoding="utf-8") as fh:
            return PosePlan.from_csv(fh.read(), limits=limits)


class SymbolicPlan:
    """Plan whose entries are linear expressions in free angles."""

    def __init__(self, entries, labels=None, joint_names=None):
        self.entries = [[AngleExpr.wrap(e) for e in row] for row in entries]
        self.labels = list(labels or [f"row{k}" for k in range(len(self.entries))])
        self.joint_names = joint_names

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def free_names(self) -> list[str]:
        names: set[str] = set()
        for row in self.entries:
            for e in row:
                names |= e.names()
        return sorted(names)

    def substitute(self, assignment: dict[str, float] | None = None,
                   limits=None) -> PosePlan:
        assignment = assignment or {}
        configs = np.array(
            [[e.evaluate(assignment) for e in row] for row in self.entries]
        )
        return PosePlan(configs, list(self.labels), self.joint_names, limits)

    def __repr__(self):
        rows = [", ".join(repr(e) for e in row) for row in self.entries]
        return "\n".join(rows)


def _maybe_numeric(entries, labels):
    rows = [[AngleExpr.wrap(e) for e in row] for row in entries]
    if all(e.is_numeric() for row in rows for e in row):
        return PosePlan(np.array([[e.const for e in row] for row in rows]), labels)
    return SymbolicPlan(rows, labels)


# ---------------------------------------------------------------------------
# optimality residual


@dataclass
class PairResidual:
    i: int
    j: int
    cos_sum: float
    sin_sum: float
    binding: bool

    @property
    def max_abs(self) -> float:
        return max(abs(self.cos_sum), abs(self.sin_sum))


@dataclass
class OptimalityReport:
    pairs: list[PairResidual]
    tolerance: float
    m: int
    n: int
    include_fixed_frame: bool

    @property
    def max_abs_residual(self) -> float:
        binding = [p.max_abs for p in self.pairs if p.binding]
        return max(binding) if binding else 0.0

    @property
    def passed(self) -> bool:
        return self.max_abs_residual <= self.tolerance

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"{verdict}: max |residual| = {self.max_abs_residual:.3e} over "
            f"{sum(p.binding for p in self.pairs)} binding pairs "
            f"(tol {self.tolerance:g}, m={self.m}, n={self.n})"
        ]
        for p in self.pairs:
            tag = "" if p.binding else "   [reported only]"
            lines.append(
                f"  ({p.i},{p.j}) cos {p.cos_sum:+.3e}  sin {p.sin_sum:+.3e}{tag}"
            )
        return "\n".join(lines)


def optimality_residual(plan: PosePlan, tolerance: float = 1e-9,
                        include_fixed_frame: bool = False) -> OptimalityReport:
    """Evaluate the trigonometric cancellation sums of a plan.

    All pairs 0 <= j < i <= n are computed; the verdict covers i > j >= 1
    unless ``include_fixed_frame`` also binds the j = 0 pairs (see the
    module docstring for when that is the right call).
    """
    q = plan.configurations
    theta = np.hstack([np.zeros((plan.m, 1)), np.cumsum(q, axis=1)])
    pairs = []
    for i in range(1, plan.n + 1):
        for j in range(0, i):
            d = theta[:, i] - theta[:, j]
            pairs.append(
                PairResidual(
                    i, j,
                    float(np.sum(np.cos(d))), float(np.sum(np.sin(d))),
                    binding=(j >= 1) or include_fixed_frame,
                )
            )
    return OptimalityReport(pairs, tolerance, plan.m, plan.n, include_fixed_frame)


# ---------------------------------------------------------------------------
# geometrical patterns


def pattern_n3m3(alpha, beta, gamma):
    """3-configuration pattern for a 3-joint planar chain.

    Column 2 and 3 take the base value and the base value +- 2pi/3; the
    first column is arbitrary. Inputs may be numbers, free-angle names,
    or expressions.
    """
    if len(alpha) != 3:
        raise SpecFileError("pattern_n3m3 needs 3 first-column angles")
    a = [AngleExpr.wrap(x) for x in alpha]
    b = AngleExpr.wrap(beta)
    g = AngleExpr.wrap(gamma)
    rows = [
        [a[0], b, g],
        [a[1], b + TWO_THIRDS_PI, g + TWO_THIRDS_PI],
        [a[2], b - TWO_THIRDS_PI, g - TWO_THIRDS_PI],
    ]
    return _maybe_numeric(rows, [f"n3m3[{k}]" for k in range(3)])


def pattern_n4m4(alpha, beta1, beta2, gamma, delta):
    """4-configuration pattern for a 4-joint planar chain.

    Columns 2..4 combine antipodal pairs of two base values; the fourth
    column of the last two rows carries delta + beta1 - beta2 (+ pi).
    """
    if len(alpha) != 4:
        raise SpecFileError("pattern_n4m4 needs 4 first-column angles")
    a = [AngleExpr.wrap(x) for x in alpha]
    b1 = AngleExpr.wrap(beta1)
    b2 = AngleExpr.wrap(beta2)
    g = AngleExpr.wrap(gamma)
    d = AngleExpr.wrap(delta)
    pi = np.pi
    rows = [
        [a[0], b1, g, d],
        [a[1], b1 + pi, g, d + pi],
        [a[2], b2, g + pi, d + b1 - b2],
        [a[3], b2 + pi, g + pi, d + b1 - b2 + pi],
    ]
    return _maybe_numeric(rows, [f"n4m4[{k}]" for k in range(4)])


def superpose(plans):
    """Concatenate plans over the same joints; residual sums add."""
    plans = list(plans)
    if not plans:
        raise SpecFileError("superpose needs at least one plan")
    widths = {p.n for p in plans if p.m > 0}
    if len(widths) > 1:
        raise SpecFileError(f"superpose: mismatched joint counts {sorted(widths)}")
    if all(isinstance(p, PosePlan) for p in plans):
        non_empty = [p for p in plans if p.m > 0]
        return PosePlan(
            np.vstack([p.configurations for p in non_empty]),
            [lb for p in non_empty for lb in p.labels],
            non_empty[0].joint_names,
            non_empty[0].limits,
        )
    entries = []
    labels = []
    for p in plans:
        if isinstance(p, PosePlan):
            entries.extend(
                [[AngleExpr.wrap(v) for v in row] for row in p.configurations]
            )
        else:
            entries.extend(p.entries)
        labels.extend(p.labels)
    return SymbolicPlan(entries, labels)


# ---------------------------------------------------------------------------
# spatial decomposition


@dataclass
class SubchainDecomposition:
    """Planar subchains covering the joints of a spatial manipulator.

    ``subchains`` lists 1-based joint indices per subchain; a True entry
    in ``virtual`` means that subchain's plans carry one extra leading
    column for a virtual joint (dropped on combination).
    """

    subchains: list[list[int]]
    virtual: list[bool]

    def __post_init__(self):
        if len(self.subchains) != len(self.virtual):
            raise SpecFileError("one virtual flag per subchain required")
        flat = [j for sub in self.subchains for j in sub]
        if sorted(flat) != sorted(set(flat)):
            raise SpecFileError("a joint appears in more than one subchain")

    @property
    def n_joints(self) -> int:
        return max(j for sub in self.subchains for j in sub)

    def covers_all(self) -> bool:
        flat = {j for sub in self.subchains for j in sub}
        return flat == set(range(1, self.n_joints + 1))


def combine_subchains(decomp: SubchainDecomposition, subplans) -> SymbolicPlan:
    """Full-chain plan as the row product of the subchain plans.

    Every row of the first subchain's plan is paired with every row of
    the second's (and so on, first subchain slowest); virtual-joint
    columns are dropped. Free angles stay symbolic.
    """
    if len(subplans) != len(decomp.subchains):
        raise SpecFileError("one subplan per subchain required")
    if not decomp.covers_all():
        missing = set(range(1, decomp.n_joints + 1)) - {
            j for sub in decomp.subchains for j in sub
        }
        raise SpecFileError(f"joints {sorted(missing)} covered by no subchain")
    plans = []
    for sub, virt, plan in zip(decomp.subchains, decomp.virtual, subplans):
        width = len(sub) + (1 if virt else 0)
        if plan.n != width:
            raise SpecFileError(
                f"subplan for joints {sub} must have {width} columns, has {plan.n}"
            )
        if isinstance(plan, PosePlan):
            entries = [[AngleExpr.wrap(v) for v in row] for row in plan.configurations]
        else:
            entries = plan.entries
        plans.append(entries)

    n = decomp.n_joints
    rows = []
    labels = []
    for combo in itertools.product(*[range(len(p)) for p in plans]):
        row = [AngleExpr.wrap(0.0)] * n
        for sub, virt, entries, k in zip(
            decomp.subchains, decomp.virtual, plans, combo
        ):
            src = entries[k][1:] if virt else entries[k]
            for joint, expr in zip(sub, src):
                row[joint - 1] = expr
        rows.append(row)
        labels.append("x".join(str(k) for k in combo))
    return SymbolicPlan(rows, labels)


def subchain_reports(plan: PosePlan, decomp: SubchainDecomposition,
                     tolerance: float = 1e-9) -> dict[str, OptimalityReport]:
    """Per-subchain residual reports of a concrete full-chain plan.

    A virtual-led subchain is checked with the fixed-frame pairs binding:
    with the virtual column gone, the differences against the fixed frame
    are exactly the pairs the virtual joint used to shield.
    """
    out = {}
    for sub, virt in zip(decomp.subchains, decomp.virtual):
        cols = [j - 1 for j in sub]
        sub_plan = PosePlan(plan.configurations[:, cols], list(plan.labels))
        key = "q" + ",".join(str(j) for j in sub)
        out[key] = optimality_residual(
            sub_plan, tolerance, include_fixed_frame=virt
        )
    return out


# ---------------------------------------------------------------------------
# free-angle assignment


def solve_free_angles(plan: SymbolicPlan, limits=None, tolerance: float = 1e-9,
                      seed: int = 0, defaults: dict[str, float] | None = None,
                      grid_step_deg: float = 10.0, restarts: int = 4,
                      max_rounds: int = 40,
                      include_fixed_frame: bool = False) -> PosePlan:
    """Assign concrete values to a symbolic plan's free angles.

    Coordinate-wise grid search (``grid_step_deg`` grid) followed by
    shrinking-step coordinate descent on the max-abs binding residual,
    with joint limits enforced as a hard constraint. Deterministic for a
    given seed: candidate order is fixed and restarts come from the
    seeded generator. Raises NoSolutionError when the budget ends above
    the tolerance, carrying the best residual found.
    """
    names = plan.free_names()
    limits = None if limits is None else np.asarray(limits, dtype=float)

    def feasible_excess(configs) -> float:
        if limits is None:
            return 0.0
        lo, hi = limits[:, 0], limits[:, 1]
        return float(
            np.sum(np.maximum(0.0, lo - configs) + np.maximum(0.0, configs - hi))
        )

    def objective(assignment) -> tuple[float, float]:
        concrete = plan.substitute(assignment)
        rep = optimality_residual(
            concrete, tolerance, include_fixed_frame=include_fixed_frame
        )
        return feasible_excess(concrete.configurations), rep.max_abs_residual

    if not names:
        concrete = plan.substitute({}, limits=limits)
        excess, resid = objective({})
        if excess > 0:
            raise NoSolutionError(
                "plan violates joint limits and has no free angles",
                best_residual=resid,
            )
        if resid > tolerance:
            raise NoSolutionError(
                f"fixed plan residual {resid:.3e} above tolerance", best_residual=resid
            )
        return concrete

    rng = np.random.default_rng(seed)
    grid = np.radians(np.arange(-180.0, 180.0, grid_step_deg))
    best: tuple[tuple[float, float], dict] | None = None

    starts = []
    if defaults:
        starts.append({k: float(defaults.get(k, 0.0)) for k in names})
    for _ in range(restarts):
        starts.append({k: float(v) for k, v in
                       zip(names, rng.uniform(-np.pi, np.pi, len(names)))})

    for start in starts:
        assign = dict(start)
        score = objective(assign)
        # grid passes
        for _ in range(max_rounds):
            improved = False
            for name in names:
                cands = [assign[name]] + list(grid)
                vals = []
                for c in cands:
                    assign[name] = c
                    vals.append(objective(assign))
                k = min(range(len(vals)), key=lambda t: vals[t])
                assign[name] = cands[k]
                if vals[k] < score:
                    score = vals[k]
                    improved = True
            if not improved or score == (0.0, 0.0):
                break
        # shrinking-step refinement
        step = np.radians(grid_step_deg) / 2.0
        while step > 1e-10:
            improved = False
            for name in names:
                base_v = assign[name]
                for c in (base_v - step, base_v + step):
                    assign[name] = c
                    v = objective(assign)
                    if v < score:
                        score = v
                        base_v = c
                        improved = True
                assign[name] = base_v
            if not improved:
                step /= 2.0
        if best is None or score < best[0]:
            best = (score, dict(assign))
        if best[0][0] == 0.0 and best[0][1] <= tolerance:
            break

    (excess, resid), assign = best
    if excess > 0.0 or resid > tolerance:
        raise NoSolutionError(
            f"free-angle search ended with residual {resid:.3e} "
            f"(limit excess {excess:.3e} rad) after {len(starts)} starts",
            best_residual=resid,
        )
    out = plan.substitute(assign, limits=limits)
    out.labels = [
        f"{lb}|{','.join(f'{k}={np.degrees(v):g}' for k, v in sorted(assign.items()))}"
        for lb in plan.labels
    ]
    return out


# ---------------------------------------------------------------------------
# identification covariance


@dataclass
class CovarianceResult:
    covariance: np.ndarray
    information: np.ndarray
    sigma: float
    log_det_information: float
    diagonality_defect: float
    condition: float
    param_ids: list[str] | None = None

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


def covariance(jacobians, sigma: float, param_ids=None,
               rank_rtol: float = 1e-10) -> CovarianceResult:
    """Parameter covariance sigma^2 * (sum_k J_k' J_k)^-1.

    Also reports the information-matrix log-determinant (the D-criterion
    on log scale) and the worst off-diagonal correlation of the
    information matrix (diagonality defect). Rank deficiency raises
    UnidentifiableParametersError naming the null-space directions.
    """
    if isinstance(jacobians, np.ndarray) and jacobians.ndim == 2:
        jacobians = [jacobians]
    stacked = np.vstack([np.atleast_2d(j) for j in jacobians])
    p = stacked.shape[1]
    _, s, vt = np.linalg.svd(stacked)  # vt is always (p, p) here
    null_rows = [
        k for k in range(p)
        if k >= len(s) or s[0] == 0.0 or s[k] / s[0] < rank_rtol
    ]
    if null_rows:
        names = param_ids or [f"p{k}" for k in range(p)]
        bad = sorted(
            {names[k] for r in null_rows for k in np.nonzero(np.abs(vt[r]) > 0.25)[0]}
        )
        ratio = 0.0 if s[0] == 0.0 else float(s[-1] / s[0])
        raise UnidentifiableParametersError(
            f"stacked Jacobian is rank deficient ({len(null_rows)} null "
            f"directions, singular-value ratio {ratio:.2e}); "
            f"null space touches: {bad}",
            null_params=bad,
        )
    info = stacked.T @ stacked
    cov = sigma ** 2 * np.linalg.inv(info)
    d = np.sqrt(np.diag(info))
    off = info / np.outer(d, d)
    np.fill_diagonal(off, 0.0)
    _, logdet = np.linalg.slogdet(info)
    return CovarianceResult(
        covariance=cov,
        information=info,
        sigma=float(sigma),
        log_det_information=float(logdet),
        diagonality_defect=float(np.max(np.abs(off))),
        condition=float((s[0] / s[-1]) ** 2),
        param_ids=list(param_ids) if param_ids else None,
    )
