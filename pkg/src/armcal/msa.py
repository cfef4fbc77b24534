"""Matrix-structural-analysis stiffness: beams, joints, aggregated solve.

Conventions fixed here (they must all agree for the series-spring law to
come out right; see the tests):

* A beam element maps end displacements to the wrenches applied TO the
  beam at its ends, ``[W_i; W_j] = K (12x12) [dt_i; dt_j]``. K22 is the
  cantilever tip stiffness with the beam along local +x; the standard
  symmetric Euler-Bernoulli layout is used for the two bending planes
  (the -6*E*Iz/L^2 coupling appears at (2,6)/(6,2), +6*E*Iy/L^2 at
  (3,5)/(5,3)).
* Wrench transport uses T = [[I, 0], [Lx, I]] with L the lever from end
  1 to end 2, so K11 = T K22 T', K12 = -T K22, K21 = -K22 T'. K11 then
  equals the pi-rotated mirror of K22.
* At a joint pair the wrenches balance (W_i + W_j = 0), the rigid
  directions carry no relative displacement, and the elastic row reads
  lam_e W_i + k (lam_e dt_i - lam_e dt_j) = 0. The support's elastic row
  is k lam_e dt + lam_e W = 0 (the sign follows from the applied-to-beam
  wrench convention; the opposite sign would subtract the support
  compliance instead of adding it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, SingularConfigurationError, SpecFileError
from .transforms import Pose, axis_index, skew
from .vjm import CartesianStiffness


@dataclass
class BeamProperties:
    """Uniform-beam section data: N/mm^2 moduli, mm/mm^2/mm^4 geometry."""

    E: float
    G: float
    S: float
    L: float
    Iy: float
    Iz: float
    J: float

    def __post_init__(self):
        for name in ("E", "G", "S", "L", "Iy", "Iz", "J"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"beam property {name} must be positive, got {v}")
            setattr(self, name, v)


def beam_stiffness_local(props: BeamProperties) -> np.ndarray:
    """Cantilever tip stiffness, beam along local +x, tip dofs
    (tx, ty, tz, rx, ry, rz)."""
    E, G, S, L = props.E, props.G, props.S, props.L
    iy, iz, j = props.Iy, props.Iz, props.J
    k = np.zeros((6, 6))
    k[0, 0] = E * S / L
    k[1, 1] = 12.0 * E * iz / L**3
    k[2, 2] = 12.0 * E * iy / L**3
    k[3, 3] = G * j / L
    k[4, 4] = 4.0 * E * iy / L
    k[5, 5] = 4.0 * E * iz / L
    k[1, 5] = k[5, 1] = -6.0 * E * iz / L**2
    k[2, 4] = k[4, 2] = 6.0 * E * iy / L**2
    return k


def to_global(k_local: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Conjugate a 12x12 element matrix by blockdiag(R, R, R, R)."""
    k_local = np.asarray(k_local, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    if k_local.shape != (12, 12):
        raise ValueError(f"element matrix must be 12x12, got {k_local.shape}")
    if rotation.shape != (3, 3) or np.max(
        np.abs(rotation.T @ rotation - np.eye(3))
    ) > 1e-9:
        raise ValueError("rotation must be a 3x3 orthonormal matrix")
    big = np.kron(np.eye(4), rotation)
    return big @ k_local @ big.T


def _transport(lever: np.ndarray) -> np.ndarray:
    t = np.eye(6)
    t[3:, :3] = skew(lever)
    return t


@dataclass
class MsaNode:
    id: int
    frame: Pose


@dataclass
class MsaElement:
    node_i: int
    node_j: int
    k_global: np.ndarray  # 12x12

    @property
    def blocks(self):
        k = self.k_global
        return k[:6, :6], k[:6, 6:], k[6:, :6], k[6:, 6:]


def link_block(props: BeamProperties, frame: Pose) -> np.ndarray:
    """12x12 element matrix of a beam whose local +x runs node i -> j.

    ``frame`` carries the beam's local orientation; translation is not
    used. Returns the matrix in global coordinates.
    """
    k22 = beam_stiffness_local(props)
    t = _transport(np.array([props.L, 0.0, 0.0]))
    k11 = t @ k22 @ t.T
    k12 = -t @ k22
    k21 = -k22 @ t.T
    local = np.block([[k11, k12], [k21, k22]])
    return to_global(local, frame.rotation)


def make_element(node_i: MsaNode, node_j: MsaNode, props: BeamProperties,
                 length_rtol: float = 1e-6) -> MsaElement:
    """Beam element between two nodes; node_i's frame orients the beam."""
    d = node_j.frame.translation - node_i.frame.translation
    length = float(np.linalg.norm(d))
    if abs(length - props.L) > length_rtol * max(props.L, 1.0):
        raise ModelError(
            f"beam {node_i.id}-{node_j.id}: node distance {length:.6g} mm "
            f"does not match section length {props.L:.6g} mm"
        )
    xhat = node_i.frame.rotation[:, 0]
    if abs(float(xhat @ d) - length) > 1e-6 * max(length, 1.0):
        raise ModelError(
            f"beam {node_i.id}-{node_j.id}: node {node_i.id} frame x-axis "
            "does not point along the beam"
        )
    return MsaElement(node_i.id, node_j.id, link_block(props, node_i.frame))


@dataclass
class JointConstraint:
    """Elastic revolute joint between coincident nodes.

    The elastic degree of freedom is the rotation about ``axis`` of the
    joint frame; the five remaining twist coordinates are rigid. The
    selectors are unit rows in the joint frame (assembly rotates them);
    the frame defaults to node_i's but can be set explicitly when node
    frames are beam-oriented.
    """

    node_i: int
    node_j: int
    axis: str
    k_e: float
    frame: Pose | None = None

    def __post_init__(self):
        if float(self.k_e) <= 0:
            raise ValueError(f"joint {self.node_i}-{self.node_j}: k_e must be positive")
        self.k_e = float(self.k_e)
        axis_index(self.axis)

    def elastic_dof(self) -> int:
        return 3 + axis_index(self.axis)

    def lambda_rigid(self) -> np.ndarray:
        rows = [k for k in range(6) if k != self.elastic_dof()]
        return np.eye(6)[rows]

    def lambda_elastic(self) -> np.ndarray:
        return np.eye(6)[[self.elastic_dof()]]


@dataclass
class Support:
    """Grounding of one node: rigid, or elastic about one rotation axis."""

    node: int
    axis: str | None = None
    k_e: float | None = None
    frame: Pose | None = None

    def __post_init__(self):
        if (self.axis is None) != (self.k_e is None):
            raise ValueError("elastic support needs both axis and k_e")
        if self.k_e is not None and float(self.k_e) <= 0:
            raise ValueError("support k_e must be positive")


@dataclass
class MsaModel:
    nodes: list[MsaNode]
    elements: list[MsaElement]
    joints: list[JointConstraint]
    support: Support
    external: int

    def node(self, nid: int) -> MsaNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise ModelError(f"node {nid} not defined")


@dataclass
class AggregatedSystem:
    """Linear system [A B; C D] [mu; dt_e] = [b; W_e].

    mu stacks all nodal wrenches (node order) then all internal nodal
    displacements; dt_e is the external node's twist. b is zero; the
    external wrench enters only the last six (external balance) rows.
    """

    a: np.ndarray
    b_block: np.ndarray
    c: np.ndarray
    d: np.ndarray
    row_groups: list[tuple[str, int]]
    wrench_nodes: list[int]
    internal_nodes: list[int]
    external: int

    @property
    def b(self) -> np.ndarray:
        return np.zeros(self.a.shape[0])

    def dimension_report(self) -> str:
        lines = [
            f"aggregated system: {self.a.shape[0] + 6} equations, "
            f"{self.a.shape[1] + 6} unknowns "
            f"({6 * len(self.wrench_nodes)} wrench + "
            f"{6 * len(self.internal_nodes) + 6} displacement)"
        ]
        for name, rows in self.row_groups:
            lines.append(f"  {name:<8} {rows} rows")
        return "\n".join(lines)


def assemble(model: MsaModel) -> AggregatedSystem:
    """Stack element, kinematic, balance, elastic and external rows.

    Row order is canonical so the matrix is reproducible: element rows in
    element order, then rigid rows (support first, joints by node pair),
    then wrench-balance rows, then elastic rows (support first), then the
    external-node balance.
    """
    node_ids = sorted(n.id for n in model.nodes)
    if len(set(node_ids)) != len(node_ids):
        raise ModelError("duplicate node ids")
    end_count = {nid: 0 for nid in node_ids}
    for el in model.elements:
        for nid in (el.node_i, el.node_j):
            if nid not in end_count:
                raise ModelError(f"beam references unknown node {nid}")
            end_count[nid] += 1
    bad = [nid for nid, c in end_count.items() if c != 1]
    if bad:
        raise ModelError(
            f"every node must be exactly one beam end; offending nodes {bad}"
        )
    if model.external not in end_count:
        raise ModelError(f"external node {model.external} not defined")
    if model.support.node == model.external:
        raise ModelError("support and external node must differ")

    # connectivity: every node must reach the support through beams/joints
    adj = {nid: set() for nid in node_ids}
    for el in model.elements:
        adj[el.node_i].add(el.node_j)
        adj[el.node_j].add(el.node_i)
    for jc in model.joints:
        adj[jc.node_i].add(jc.node_j)
        adj[jc.node_j].add(jc.node_i)
    seen = {model.support.node}
    stack = [model.support.node]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    floating = sorted(set(node_ids) - seen)
    if floating:
        raise ModelError(f"floating substructure: nodes {floating} are "
                         "not connected to the support")

    wrench_nodes = node_ids
    internal_nodes = [nid for nid in node_ids if nid != model.external]
    w_at = {nid: 6 * k for k, nid in enumerate(wrench_nodes)}
    nw = 6 * len(wrench_nodes)
    d_at = {nid: nw + 6 * k for k, nid in enumerate(internal_nodes)}
    n_mu = nw + 6 * len(internal_nodes)

    def d_cols(nid):
        """Column range of a node's displacement (external -> dt_e block)."""
        if nid == model.external:
            return n_mu
        return d_at[nid]

    rows_a = []
    rows_e = []  # external-balance rows, form the C/D block
    groups: list[tuple[str, int]] = []
    total = n_mu + 6

    def new_row():
        return np.zeros(total)

    def add(row_list, row):
        row_list.append(row)

    # element rows: -W + K dt = 0
    for el in model.elements:
        k11, k12, k21, k22 = el.blocks
        blocks = [
            (el.node_i, k11, k12),
            (el.node_j, k21, k22),
        ]
        for nid, ki, kj in blocks:
            for r in range(6):
                row = new_row()
                row[w_at[nid] + r] = -1.0
                row[d_cols(el.node_i): d_cols(el.node_i) + 6] += ki[r]
                row[d_cols(el.node_j): d_cols(el.node_j) + 6] += kj[r]
                add(rows_a, row)
    groups.append(("K_links", len(rows_a)))

    def local_map(nid, frame=None) -> np.ndarray:
        rot = (frame or model.node(nid).frame).rotation
        out = np.zeros((6, 6))
        out[:3, :3] = rot.T
        out[3:, 3:] = rot.T
        return out

    # rigid kinematic rows (A_agr)
    start = len(rows_a)
    sup = model.support
    sup_map = local_map(sup.node, sup.frame)
    if sup.axis is None:
        lam_r = np.eye(6)
    else:
        jc = JointConstraint(sup.node, sup.node, sup.axis, sup.k_e)
        lam_r = jc.lambda_rigid()
    for lam in lam_r @ sup_map:
        row = new_row()
        row[d_cols(sup.node): d_cols(sup.node) + 6] = lam
        add(rows_a, row)
    for jc in sorted(model.joints, key=lambda j: (j.node_i, j.node_j)):
        jmap = local_map(jc.node_i, jc.frame)
        for lam in jc.lambda_rigid() @ jmap:
            row = new_row()
            row[d_cols(jc.node_i): d_cols(jc.node_i) + 6] = lam
            row[d_cols(jc.node_j): d_cols(jc.node_j) + 6] -= lam
            add(rows_a, row)
    groups.append(("A_agr", len(rows_a) - start))

    # wrench balance rows (B_agr)
    start = len(rows_a)
    for jc in sorted(model.joints, key=lambda j: (j.node_i, j.node_j)):
        for r in range(6):
            row = new_row()
            row[w_at[jc.node_i] + r] = 1.0
            row[w_at[jc.node_j] + r] = 1.0
            add(rows_a, row)
    groups.append(("B_agr", len(rows_a) - start))

    # elastic coupling rows (C_agr/D_agr): support first, then joints
    start = len(rows_a)
    if sup.axis is not None:
        lam_e = (JointConstraint(sup.node, sup.node, sup.axis, sup.k_e)
                 .lambda_elastic() @ sup_map)[0]
        row = new_row()
        row[d_cols(sup.node): d_cols(sup.node) + 6] = sup.k_e * lam_e
        row[w_at[sup.node]: w_at[sup.node] + 6] = lam_e
        add(rows_a, row)
    for jc in sorted(model.joints, key=lambda j: (j.node_i, j.node_j)):
        lam_e = (jc.lambda_elastic() @ local_map(jc.node_i, jc.frame))[0]
        row = new_row()
        row[w_at[jc.node_i]: w_at[jc.node_i] + 6] = lam_e
        row[d_cols(jc.node_i): d_cols(jc.node_i) + 6] += jc.k_e * lam_e
        row[d_cols(jc.node_j): d_cols(jc.node_j) + 6] -= jc.k_e * lam_e
        add(rows_a, row)
    groups.append(("CD_agr", len(rows_a) - start))

    # external balance rows (E_agr): the external end's wrench is W_e
    for r in range(6):
        row = new_row()
        row[w_at[model.external] + r] = 1.0
        add(rows_e, row)
    groups.append(("E_agr", len(rows_e)))

    big_a = np.array(rows_a)
    big_e = np.array(rows_e)
    if big_a.shape[0] != n_mu:
        raise ModelError(
            f"system is not square: {big_a.shape[0]} internal equations for "
            f"{n_mu} internal unknowns"
        )
    return AggregatedSystem(
        a=big_a[:, :n_mu],
        b_block=big_a[:, n_mu:],
        c=big_e[:, :n_mu],
        d=big_e[:, n_mu:],
        row_groups=groups,
        wrench_nodes=wrench_nodes,
        internal_nodes=internal_nodes,
        external=model.external,
    )


def cartesian_stiffness_msa(system: AggregatedSystem) -> CartesianStiffness:
    """Schur complement K_C = D - C A^-1 B of the aggregated system."""
    try:
        x = np.linalg.solve(system.a, system.b_block)
    except np.linalg.LinAlgError as exc:
        raise SingularConfigurationError(
            "aggregated matrix is singular (mechanism or ill-posed model)"
        ) from exc
    k_c = system.d - system.c @ x
    return CartesianStiffness(0.5 * (k_c + k_c.T))


def solve_system(system: AggregatedSystem, w_e) -> dict:
    """Nodal wrenches and displacements under an external wrench.

    Returns {"wrench": {node: 6-vector}, "twist": {node: 6-vector}}
    including the external node's twist.
    """
    w_e = np.asarray(w_e, dtype=float).ravel()
    full = np.block([[system.a, system.b_block], [system.c, system.d]])
    rhs = np.concatenate([np.zeros(system.a.shape[0]), w_e])
    try:
        sol = np.linalg.solve(full, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularConfigurationError("aggregated system is singular") from exc
    out = {"wrench": {}, "twist": {}}
    for k, nid in enumerate(system.wrench_nodes):
        out["wrench"][nid] = sol[6 * k: 6 * k + 6]
    nw = 6 * len(system.wrench_nodes)
    for k, nid in enumerate(system.internal_nodes):
        out["twist"][nid] = sol[nw + 6 * k: nw + 6 * k + 6]
    out["twist"][system.external] = sol[-6:]
    return out


# ---------------------------------------------------------------------------
# file format


def model_from_dict(d: dict) -> MsaModel:
    try:
        nodes = []
        for nd in d["nodes"]:
            rot = np.asarray(nd.get("rotation", np.eye(3).tolist()), dtype=float)
            nodes.append(
                MsaNode(int(nd["id"]), Pose(rot, np.asarray(nd["position"], float)))
            )
        model = MsaModel(
            nodes=nodes,
            elements=[],
            joints=[
                JointConstraint(int(j["nodes"][0]), int(j["nodes"][1]),
                                str(j["axis"]), float(j["k"]))
                for j in d.get("joints", [])
            ],
            support=Support(
                int(d["support"]["node"]),
                d["support"].get("axis"),
                d["support"].get("k"),
            ),
            external=int(d["external"]),
        )
        for b in d["beams"]:
            props = BeamProperties(
                b["E"], b["G"], b["S"], b["L"], b["Iy"], b["Iz"], b["J"]
            )
            model.elements.append(
                make_element(model.node(int(b["nodes"][0])),
                             model.node(int(b["nodes"][1])), props)
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ModelError, SpecFileError)):
            raise
        raise SpecFileError(f"malformed structural model: {exc}") from exc
    return model


def load_model(path) -> MsaModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecFileError(
                f"invalid JSON at line {exc.lineno}: {exc.msg}"
            ) from exc
    return model_from_dict(d)
