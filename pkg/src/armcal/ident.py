"""Geometric parameter identification from point measurements.

Two-step scheme: the base transform and the tool vectors are estimated
first (their regressor comes from differentiating the measurement model
directly: identity for the base position, the skew of the modeled point
about the base for the base rotation, and the rotation chain for each
tool vector), then the robot deviation parameters; the steps alternate
until the update norm stalls. Each step is one Gauss-Newton update on a
column subset of the analytic position Jacobian, solved by SVD so rank
problems surface as errors instead of silent pseudo-inverses.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import doe
from .chain import Chain, ParamVector
from .errors import (
    DegenerateSetupError,
    ModelError,
    UnidentifiableParametersError,
)
from .planar import PlanarChain
from .transforms import rot_x, rot_y, rot_z


@dataclass
class MeasurementSet:
    """Cartesian point measurements tied to plan configurations."""

    config_index: np.ndarray  # (n,) int, row into the plan
    point_index: np.ndarray   # (n,) int, tool reference point
    positions: np.ndarray     # (n, 3) mm
    sigma: float = 0.0        # noise std used to generate/record them
    seed: int | None = None

    def __post_init__(self):
        self.config_index = np.asarray(self.config_index, dtype=int)
        self.point_index = np.asarray(self.point_index, dtype=int)
        self.positions = np.asarray(self.positions, dtype=float)
        n = len(self.config_index)
        if self.point_index.shape != (n,) or self.positions.shape != (n, 3):
            raise ValueError("measurement arrays have inconsistent shapes")

    def __len__(self):
        return len(self.config_index)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# sigma_mm={self.sigma:.10g}\n")
        if self.seed is not None:
            buf.write(f"# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config_index", "point_index", "x_mm", "y_mm", "z_mm"])
        for c, p, xyz in zip(self.config_index, self.point_index, self.positions):
            w.writerow([c, p] + [f"{v:.10g}" for v in xyz])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def from_csv(text: str) -> "MeasurementSet":
        sigma = 0.0
        seed = None
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                key = key.strip()
                if key == "sigma_mm":
                    sigma = float(value)
                elif key == "seed":
                    seed = int(value)
                continue
            rows.append(line)
        r = list(csv.reader(io.StringIO("\n".join(rows))))
        header, data = r[0], r[1:]
        if header[:2] != ["config_index", "point_index"]:
            raise ModelError("measurement file must start with config/point columns")
        ci = np.array([int(row[0]) for row in data])
        pi_ = np.array([int(row[1]) for row in data])
        xyz = np.array([[float(v) for v in row[2:5]] for row in data])
        return MeasurementSet(ci, pi_, xyz, sigma=sigma, seed=seed)

    @staticmethod
    def load(path) -> "MeasurementSet":
        with open(path, "r", encoding="utf-8") as fh:
            return MeasurementSet.from_csv(fh.read())


@dataclass
class BaseToolEstimate:
    p_base: np.ndarray
    r_base: np.ndarray          # 3x3 rotation
    p_tool: list[np.ndarray]    # one 3-vector per reference point
    u_tool: list[np.ndarray]    # r_base @ p_tool per point
    params: ParamVector         # chain parameters with the estimate applied
    condition: float


@dataclass
class IdentResult:
    params: ParamVector
    p_base: np.ndarray
    r_base: np.ndarray
    p_tool: list[np.ndarray]
    residual_rms: float
    residual_history: list[float]
    iterations: int
    converged: bool
    condition: float
    covariance: "doe.CovarianceResult | None" = None
    param_std: dict[str, float] = field(default_factory=dict)
    frame_absorbed: list[str] = field(default_factory=list)

    def estimate(self, pid: str) -> float:
        return self.params.entry(pid).value


def _model_positions(chain: Chain, q_set: np.ndarray, params: ParamVector,
                     measurements: MeasurementSet) -> np.ndarray:
    pos = chain.tool_positions(q_set, params)
    return pos[measurements.config_index, measurements.point_index]


def _residuals(chain, q_set, params, measurements) -> np.ndarray:
    model = _model_positions(chain, q_set, params, measurements)
    return (measurements.positions - model).ravel()


def _stacked_jacobian(chain: Chain, q_set, params, measurements,
                      ids: list[str]) -> np.ndarray:
    jac, _ = chain.batched_param_jacobian(q_set, params)
    jac = jac[measurements.config_index, measurements.point_index]
    cols = [chain.params.index(pid) for pid in ids]
    return jac[:, :, cols].reshape(-1, len(cols))


def _gn_step(chain, q_set, params, measurements, ids, rank_rtol=1e-10,
             error_cls=UnidentifiableParametersError, context=""):
    """One least-squares update of the listed parameters.

    Returns (new ParamVector, update vector, condition number).
    """
    jac = _stacked_jacobian(chain, q_set, params, measurements, ids)
    res = _residuals(chain, q_set, params, measurements)
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    if s[0] == 0.0 or s[-1] / s[0] < rank_rtol or jac.shape[0] < len(ids):
        if s[0] == 0.0:
            bad = list(ids)
        else:
            bad = sorted(
                {ids[k]
                 for r in np.nonzero(s / s[0] < rank_rtol)[0]
                 for k in np.nonzero(np.abs(vt[r]) > 0.25)[0]}
            )
        raise error_cls(
            f"{context}: regressor is rank deficient "
            f"(singular-value ratio {0.0 if s[0] == 0 else s[-1] / s[0]:.2e}); "
            f"unidentifiable directions touch {bad}"
        )
    update = vt.T @ ((u.T @ res) / s)
    dev = params.deviations().copy()
    for pid, d in zip(ids, update):
        dev[chain.params.index(pid)] += d
    return params.with_deviations(dev), update, float(s[0] / s[-1])


def identify_base_tool(measurements: MeasurementSet, chain: Chain, q_set,
                       params: ParamVector | None = None) -> BaseToolEstimate:
    """One linearized estimate of base frame and tool vectors.

    Needs either several reference points or enough configurations to
    make the frame observable; a rank-deficient regressor raises
    DegenerateSetupError.
    """
    params = chain.params if params is None else params
    q_set = np.atleast_2d(np.asarray(q_set, dtype=float))
    ids = chain.param_ids_by_segment("base") + chain.param_ids_by_segment("tool")
    if not ids:
        raise ModelError("chain has no base/tool parameters to identify")
    new_params, _, cond = _gn_step(
        chain, q_set, params, measurements, ids,
        error_cls=DegenerateSetupError, context="base/tool identification",
    )
    return _base_tool_estimate(chain, new_params, cond)


def _base_tool_estimate(chain: Chain, params: ParamVector,
                        cond: float) -> BaseToolEstimate:
    def value(pid):
        return params.entry(pid).value if pid in params else 0.0

    p_base = np.array([value(f"base_{ax}") for ax in "xyz"])
    r_base = (
        rot_x(value("base_rx")) @ rot_y(value("base_ry")) @ rot_z(value("base_rz"))
    )
    p_tool = []
    for t in range(chain.n_tools):
        p_tool.append(
            np.array([value(f"tool{t + 1}_{ax}") for ax in "xyz"])
        )
    u_tool = [r_base @ p for p in p_tool]
    return BaseToolEstimate(p_base, r_base, p_tool, u_tool, params, cond)


def identify_robot_params(measurements: MeasurementSet, chain: Chain, q_set,
                          params: ParamVector | None = None,
                          sigma: float | None = None) -> IdentResult:
    """One least-squares update of the robot deviation parameters.

    The base and tool entries of ``params`` are held fixed. On rank
    deficiency the error also names what reduce_model would eliminate,
    which is the usual cause.
    """
    params = chain.params if params is None else params
    q_set = np.atleast_2d(np.asarray(q_set, dtype=float))
    ids = chain.param_ids_by_segment("robot")
    try:
        new_params, update, cond = _gn_step(
            chain, q_set, params, measurements, ids,
            context="robot parameter identification",
        )
    except UnidentifiableParametersError as exc:
        from .reduce import reduce_model

        try:
            _, report = reduce_model(chain)
            eliminable = report.param_ids()
        except ModelError:
            eliminable = []
        if eliminable:
            raise UnidentifiableParametersError(
                f"{exc} -- the model is not irreducible; reduce_model would "
                f"eliminate {eliminable}",
                null_params=eliminable,
            ) from exc
        raise
    res = _residuals(chain, q_set, new_params, measurements)
    rms = float(np.sqrt(np.mean(res ** 2)))
    cov = None
    std = {}
    if sigma is not None:
        jac = _stacked_jacobian(chain, q_set, new_params, measurements, ids)
        cov = doe.covariance([jac], sigma, param_ids=ids)
        std = {pid: float(np.sqrt(cov.covariance[k, k]))
               for k, pid in enumerate(ids)}
    est = _base_tool_estimate(chain, new_params, cond)
    return IdentResult(
        params=new_params,
        p_base=est.p_base,
        r_base=est.r_base,
        p_tool=est.p_tool,
        residual_rms=rms,
        residual_history=[rms],
        iterations=1,
        converged=True,
        condition=cond,
        covariance=cov,
        param_std=std,
    )


@dataclass
class CalibrateOptions:
    max_iterations: int = 20
    update_tolerance: float = 1e-10
    sigma: float | None = None   # measurement noise for covariance reporting
    initial: ParamVector | None = None


def _projected_robot_step(chain, q_set, params, measurements, robot_ids,
                          base_tool_ids, rank_rtol=1e-10):
    """Robot-parameter update on frame-complement residuals.

    The unprojected robot regressor must be full rank (otherwise the
    model is not irreducible and an error names the eliminable terms);
    columns annihilated by the projection are frame-absorbed and get a
    zero (minimum-norm) update.
    """
    j_r = _stacked_jacobian(chain, q_set, params, measurements, robot_ids)
    res = _residuals(chain, q_set, params, measurements)
    s_plain = np.linalg.svd(j_r, compute_uv=False)
    if s_plain[0] == 0.0 or s_plain[-1] / s_plain[0] < rank_rtol:
        # reuse the plain step's error path (names eliminable parameters)
        identify_robot_params(measurements, chain, q_set, params)
        raise UnidentifiableParametersError("robot regressor is rank deficient")
    cond = float(s_plain[0] / s_plain[-1])
    absorbed: list[str] = []
    if base_tool_ids:
        j_bt = _stacked_jacobian(chain, q_set, params, measurements, base_tool_ids)
        q_basis, _ = np.linalg.qr(j_bt)
        j_r = j_r - q_basis @ (q_basis.T @ j_r)
        res = res - q_basis @ (q_basis.T @ res)
    u, s, vt = np.linalg.svd(j_r, full_matrices=False)
    keep = s > rank_rtol * s[0]
    if not np.all(keep):
        for row in vt[~keep]:
            absorbed.extend(robot_ids[k] for k in np.nonzero(np.abs(row) > 0.25)[0])
        absorbed = sorted(set(absorbed))
    update = vt[keep].T @ ((u[:, keep].T @ res) / s[keep])
    dev = params.deviations().copy()
    for pid, d in zip(robot_ids, update):
        dev[chain.params.index(pid)] += d
    return params.with_deviations(dev), cond, absorbed


def calibrate(measurements: MeasurementSet, chain: Chain, q_set,
              options: CalibrateOptions | None = None) -> IdentResult:
    """Alternate base/tool and robot-parameter estimation to convergence.

    The robot step solves on residuals with the frame-step column space
    projected out, which is the block-elimination form of the joint
    least-squares problem (plain alternation reaches the same fixpoint,
    only at a linear rate when the two column blocks are correlated).
    Robot directions that the frame columns absorb exactly (free tool
    vectors swallow any translation riding along the last joint axis)
    receive no update; they stay at their initial values and are listed
    in ``frame_absorbed`` of the result. Stops when the total update norm
    drops below the tolerance or after ``max_iterations`` rounds; the
    result is flagged non-converged in the latter case.
    """
    options = options or CalibrateOptions()
    q_set = np.atleast_2d(np.asarray(q_set, dtype=float))
    params = options.initial if options.initial is not None else chain.params
    params = params.copy()
    base_tool_ids = (
        chain.param_ids_by_segment("base") + chain.param_ids_by_segment("tool")
    )
    robot_ids = chain.param_ids_by_segment("robot")

    history: list[float] = []
    absorbed: list[str] = []
    converged = False
    iterations = 0
    cond = float("nan")
    for iterations in range(1, options.max_iterations + 1):
        before = params.deviations()
        if base_tool_ids:
            params, _, _ = _gn_step(
                chain, q_set, params, measurements, base_tool_ids,
                error_cls=DegenerateSetupError, context="base/tool step",
            )
        if robot_ids:
            params, cond, absorbed = _projected_robot_step(
                chain, q_set, params, measurements, robot_ids, base_tool_ids,
            )
        res = _residuals(chain, q_set, params, measurements)
        history.append(float(np.sqrt(np.mean(res ** 2))))
        update_norm = float(np.linalg.norm(params.deviations() - before))
        if update_norm < options.update_tolerance:
            converged = True
            break

    cov = None
    std = {}
    if options.sigma is not None and robot_ids:
        jac = _stacked_jacobian(chain, q_set, params, measurements, robot_ids)
        cov = doe.covariance([jac], options.sigma, param_ids=robot_ids)
        std = {pid: float(np.sqrt(cov.covariance[k, k]))
               for k, pid in enumerate(robot_ids)}
    est = _base_tool_estimate(chain, params, cond)
    return IdentResult(
        params=params,
        p_base=est.p_base,
        r_base=est.r_base,
        p_tool=est.p_tool,
        residual_rms=history[-1] if history else float("nan"),
        residual_history=history,
        iterations=iterations,
        converged=converged,
        condition=cond,
        covariance=cov,
        param_std=std,
        frame_absorbed=absorbed,
    )


# ---------------------------------------------------------------------------
# planar identification


@dataclass
class PlanarIdentResult:
    chain: PlanarChain
    deviations: np.ndarray      # [dl_1..n, dth_1..n]
    residual_rms: float
    residual_history: list[float]
    iterations: int
    converged: bool
    condition: float
    covariance: "doe.CovarianceResult | None" = None


def planar_identify(measurements: np.ndarray, model: PlanarChain, q_set,
                    iterate: bool = False, max_iterations: int = 20,
                    update_tolerance: float = 1e-12,
                    sigma: float | None = None) -> PlanarIdentResult:
    """Least-squares deviations of a planar chain from tip measurements.

    ``measurements`` is (m, 2); one Gauss-Newton step by default, or
    iterated to a fixpoint with ``iterate=True``.
    """
    q_set = np.atleast_2d(np.asarray(q_set, dtype=float))
    measurements = np.asarray(measurements, dtype=float)
    if measurements.shape != (q_set.shape[0], 2):
        raise ModelError("one (x, y) measurement per configuration required")

    current = model
    history = []
    converged = False
    rounds = max_iterations if iterate else 1
    cond = float("nan")
    it = 0
    for it in range(1, rounds + 1):
        jac = current.jacobian(q_set).reshape(-1, current.n_params)
        res = (measurements - current.tip(q_set)).ravel()
        u, s, vt = np.linalg.svd(jac, full_matrices=False)
        if s[0] == 0.0 or s[-1] / s[0] < 1e-10:
            raise UnidentifiableParametersError(
                "planar regressor is rank deficient "
                f"(singular-value ratio {0.0 if s[0] == 0 else s[-1]/s[0]:.2e})"
            )
        cond = float(s[0] / s[-1])
        update = vt.T @ ((u.T @ res) / s)
        current = current.with_deviations(current.deviations() + update)
        res_after = (measurements - current.tip(q_set)).ravel()
        history.append(float(np.sqrt(np.mean(res_after ** 2))))
        if np.linalg.norm(update) < update_tolerance:
            converged = True
            break
    cov = None
    if sigma is not None:
        jac = current.jacobian(q_set).reshape(-1, current.n_params)
        cov = doe.covariance([jac], sigma, param_ids=current.param_ids())
    return PlanarIdentResult(
        chain=current,
        deviations=current.deviations(),
        residual_rms=history[-1],
        residual_history=history,
        iterations=it,
        converged=converged or not iterate,
        condition=cond,
        covariance=cov,
    )
