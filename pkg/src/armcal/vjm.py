"""Lumped-spring (virtual-joint) Cartesian stiffness of a serial chain.

The chain is extended with a 1-dof rotational spring behind every
actuated joint and a 6-dof spring block behind every elastic link; the
end-effector stiffness follows from the spring Jacobian at the unloaded
configuration. Within a 6-dof block the coordinates are always ordered
Tx, Ty, Tz, Rx, Ry, Rz (SPRING_BLOCK_ORDER); cross-tool comparisons
depend on this order, so it is fixed here once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import Chain, ParamVector
from .errors import SingularConfigurationError
from .transforms import AXIS

SPRING_BLOCK_ORDER = ("Tx", "Ty", "Tz", "Rx", "Ry", "Rz")


@dataclass
class CartesianStiffness:
    """6x6 wrench-per-twist map at the end effector.

    Row/column order: forces x,y,z (N) then moments x,y,z (N*mm); twist
    order: translations (mm) then rotations (rad).
    """

    matrix: np.ndarray
    spring_wrench_gains: np.ndarray | None = None  # K_theta^-1 J_theta' K_C

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (6, 6):
            raise ValueError(f"stiffness must be 6x6, got {self.matrix.shape}")

    def symmetry_error(self) -> float:
        scale = max(np.max(np.abs(self.matrix)), 1e-300)
        return float(np.max(np.abs(self.matrix - self.matrix.T)) / scale)

    def is_psd(self, rtol: float = 1e-8) -> bool:
        w = np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))
        return bool(w[0] >= -rtol * max(w[-1], 1e-300))


@dataclass
class SpringSlot:
    element_index: int  # spring sits after this element of chain.elements
    kind: str           # "joint" or "link"
    axis: str | None = None
    label: str = ""


@dataclass
class VjmModel:
    chain: Chain
    slots: list[SpringSlot]
    k_theta: np.ndarray  # (n_theta, n_theta) block diagonal, PD
    theta_labels: list[str]
    tool_index: int = 0

    @property
    def n_theta(self) -> int:
        return self.k_theta.shape[0]


def link_segments(chain: Chain) -> list[list[int]]:
    """Element-index groups forming the elastic links.

    Links are the nonempty groups between consecutive joints plus the
    trailing group behind the last joint (when nonempty); anything before
    the first joint belongs to the rigid base.
    """
    jpos = [i for i, el in enumerate(chain.elements) if el.joint is not None]
    if not jpos:
        return []
    segs = []
    bounds = jpos + [len(chain.elements)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        group = list(range(a + 1, b))
        if group:
            segs.append(group)
    return segs


def build_vjm(chain: Chain, link_stiffness, joint_stiffness,
              tool_index: int = 0) -> VjmModel:
    """Extend a chain with virtual springs.

    ``joint_stiffness``: one positive scalar per actuated joint (N*mm/rad).
    ``link_stiffness``: one entry per elastic link, either a symmetric
    positive-definite 6x6 block in the chain frame at the link's end or a
    BeamProperties whose local frame coincides with that chain frame
    (beam axis along local x).
    """
    joint_stiffness = np.asarray(joint_stiffness, dtype=float)
    if joint_stiffness.shape != (chain.n_joints,):
        raise ValueError(
            f"need {chain.n_joints} joint stiffness values, got {joint_stiffness.shape}"
        )
    if np.any(joint_stiffness <= 0) or not np.all(np.isfinite(joint_stiffness)):
        raise ValueError("joint stiffness entries must be positive and finite")

    segs = link_segments(chain)
    blocks = []
    for b in link_stiffness:
        if hasattr(b, "E"):  # BeamProperties
            from .msa import beam_stiffness_local

            b = beam_stiffness_local(b)
        b = np.asarray(b, dtype=float)
        if b.shape != (6, 6):
            raise ValueError("link stiffness blocks must be 6x6")
        if np.max(np.abs(b - b.T)) > 1e-8 * max(np.max(np.abs(b)), 1e-300):
            raise ValueError("link stiffness block is not symmetric")
        if np.linalg.eigvalsh(0.5 * (b + b.T))[0] <= 0:
            raise ValueError("link stiffness block is not positive definite")
        blocks.append(0.5 * (b + b.T))
    if len(blocks) != len(segs):
        raise ValueError(
            f"chain has {len(segs)} elastic links but {len(blocks)} blocks given"
        )

    slots: list[SpringSlot] = []
    labels: list[str] = []
    diag_blocks: list[np.ndarray] = []
    seg_iter = iter(enumerate(segs))
    next_seg = next(seg_iter, None)
    for i, el in enumerate(chain.elements):
        if el.joint is not None:
            slots.append(
                SpringSlot(i, "joint", el.kind[1], f"joint{el.joint}")
            )
            labels.append(f"joint{el.joint}")
            diag_blocks.append(np.array([[joint_stiffness[el.joint - 1]]]))
        if next_seg is not None and i == next_seg[1][-1]:
            li = next_seg[0]
            slots.append(SpringSlot(i, "link", None, f"link{li + 1}"))
            labels.extend(f"link{li + 1}:{c}" for c in SPRING_BLOCK_ORDER)
            diag_blocks.append(blocks[li])
            next_seg = next(seg_iter, None)

    n_theta = sum(b.shape[0] for b in diag_blocks)
    k_theta = np.zeros((n_theta, n_theta))
    at = 0
    for b in diag_blocks:
        k_theta[at:at + b.shape[0], at:at + b.shape[0]] = b
        at += b.shape[0]
    return VjmModel(chain, slots, k_theta, labels, tool_index)


def spring_jacobians(model: VjmModel, q, pi: ParamVector | None = None):
    """(J_theta 6 x n_theta, J_q 6 x n_joints) at the unloaded state.

    At theta = 0 the extended chain coincides with the chain itself, so
    columns are unit spring twists transported to the end effector.
    """
    _, after, ee = model.chain.element_poses(q, pi, model.tool_index)
    p = ee.translation
    cols = []
    for slot in model.slots:
        frame = after[slot.element_index]
        if slot.kind == "joint":
            a = frame.rotation @ AXIS["R" + slot.axis]
            cols.append(np.concatenate([np.cross(a, p - frame.translation), a]))
        else:
            for kind in SPRING_BLOCK_ORDER:
                a = frame.rotation @ AXIS[kind]
                if kind.startswith("T"):
                    cols.append(np.concatenate([a, np.zeros(3)]))
                else:
                    cols.append(
                        np.concatenate([np.cross(a, p - frame.translation), a])
                    )
    j_theta = np.column_stack(cols) if cols else np.zeros((6, 0))
    j_q = model.chain.jacobian_joints(q, pi, model.tool_index)
    return j_theta, j_q


def cartesian_stiffness_vjm(model: VjmModel, q, pi: ParamVector | None = None,
                            actuated_locked: bool = True) -> CartesianStiffness:
    """End-effector stiffness of the spring-extended chain.

    With ``actuated_locked`` (the calibration context) this is the
    inverse of the accumulated spring compliance J K^-1 J'; otherwise the
    actuated joints are treated as free and their motions are projected
    out, which keeps the result symmetric PSD and annihilates J_q.
    """
    j_theta, j_q = spring_jacobians(model, q, pi)
    compliance = j_theta @ np.linalg.solve(model.k_theta, j_theta.T)
    compliance = 0.5 * (compliance + compliance.T)
    w, v = np.linalg.eigh(compliance)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        deficient = v[:, w <= 1e-12 * max(w[-1], 1e-300)].T
        raise SingularConfigurationError(
            "spring Jacobian is row-rank deficient at this configuration "
            f"({deficient.shape[0]} immobile twist directions)",
            directions=deficient,
        )
    k_c = (v / w) @ v.T
    if not actuated_locked:
        a = j_q.T @ k_c @ j_q
        try:
            correction = k_c @ j_q @ np.linalg.solve(a, j_q.T @ k_c)
        except np.linalg.LinAlgError as exc:
            raise SingularConfigurationError(
                "passive-joint projection is singular at this configuration"
            ) from exc
        k_c = k_c - correction
        k_c = 0.5 * (k_c + k_c.T)
    gains = np.linalg.solve(model.k_theta, j_theta.T @ k_c)
    return CartesianStiffness(k_c, spring_wrench_gains=gains)
