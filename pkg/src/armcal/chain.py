"""Serial-manipulator models as ordered products of elementary transforms.

A chain is ``base * elements * tool_j`` where every factor is an
elementary translation or principal-axis rotation. Each factor's
argument is either a constant, a named deviation parameter (evaluated as
nominal + deviation), or a joint coordinate with an optional offset
parameter. Position Jacobians with respect to the deviation parameters
and the end-effector twist Jacobian are computed analytically; finite
differences are used only as test oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError, SpecFileError
from .transforms import KINDS, Pose, axis_index, elementary

_AXIS_VECTORS = np.eye(3)


@dataclass
class Element:
    """One elementary transform with its argument binding.

    Exactly one binding applies: ``const`` (fixed argument), ``param``
    (argument = nominal + deviation of that entry), or ``joint``
    (argument = q[joint] plus an optional offset parameter).
    """

    kind: str
    const: float | None = None
    param: str | None = None
    joint: int | None = None
    offset: str | None = None

    def binding(self) -> str:
        if self.joint is not None:
            return "joint"
        if self.param is not None:
            return "param"
        return "const"

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.joint is not None:
            d["joint"] = self.joint
            if self.offset is not None:
                d["offset"] = self.offset
        elif self.param is not None:
            d["param"] = self.param
        else:
            d["const"] = float(self.const or 0.0)
        return d

    @staticmethod
    def from_dict(d: dict, where: str = "") -> "Element":
        kind = d.get("kind")
        if kind not in KINDS:
            raise SpecFileError(f"{where}: unknown transform kind {kind!r}")
        has = [k for k in ("const", "param", "joint") if k in d]
        if len(has) != 1:
            raise SpecFileError(
                f"{where}: element needs exactly one of const/param/joint, got {has}"
            )
        if "offset" in d and "joint" not in d:
            raise SpecFileError(f"{where}: offset is only valid on joint elements")
        return Element(
            kind=kind,
            const=d.get("const"),
            param=d.get("param"),
            joint=d.get("joint"),
            offset=d.get("offset"),
        )


@dataclass
class ParamEntry:
    id: str
    nominal: float
    deviation: float = 0.0
    unit: str = "mm"

    @property
    def value(self) -> float:
        return self.nominal + self.deviation


class ParamVector:
    """Ordered, named deviation parameters.

    Order is the canonical identification order; every Jacobian column
    index refers to it.
    """

    def __init__(self, entries):
        self.entries = [
            e if isinstance(e, ParamEntry) else ParamEntry(*e) for e in entries
        ]
        self._index = {e.id: i for i, e in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise SpecFileError("duplicate parameter ids in parameter table")

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pid):
        return pid in self._index

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def index(self, pid: str) -> int:
        return self._index[pid]

    def entry(self, pid: str) -> ParamEntry:
        return self.entries[self._index[pid]]

    def nominals(self) -> np.ndarray:
        return np.array([e.nominal for e in self.entries])

    def deviations(self) -> np.ndarray:
        return np.array([e.deviation for e in self.entries])

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    def copy(self) -> "ParamVector":
        return ParamVector([replace(e) for e in self.entries])

    def with_deviations(self, dev) -> "ParamVector":
        """New vector with deviations replaced from an array or mapping."""
        out = self.copy()
        if isinstance(dev, dict):
            for pid, v in dev.items():
                out.entries[out._index[pid]].deviation = float(v)
        else:
            dev = np.asarray(dev, dtype=float)
            if dev.shape != (len(out),):
                raise ValueError(f"expected {len(out)} deviations, got {dev.shape}")
            for e, v in zip(out.entries, dev):
                e.deviation = float(v)
        return out

    def subset(self, ids) -> "ParamVector":
        return ParamVector([replace(self.entry(pid)) for pid in ids])


class _CompiledChain:
    """Array form of base + elements + one tool block for batched math."""

    def __init__(self, chain: "Chain", tool_index: int):
        seq = list(chain.base) + list(chain.elements) + list(chain.tools[tool_index])
        n = len(seq)
        self.axis = np.zeros(n, dtype=int)
        self.is_rot = np.zeros(n, dtype=bool)
        self.const = np.zeros(n)
        self.param_idx = np.full(n, -1, dtype=int)
        self.joint_idx = np.full(n, -1, dtype=int)
        for k, el in enumerate(seq):
            self.axis[k] = axis_index(el.kind[1])
            self.is_rot[k] = el.kind.startswith("R")
            if el.joint is not None:
                self.joint_idx[k] = el.joint - 1
                if el.offset is not None:
                    self.param_idx[k] = chain.params.index(el.offset)
            elif el.param is not None:
                self.param_idx[k] = chain.params.index(el.param)
            else:
                self.const[k] = float(el.const or 0.0)
        self.n_joints = chain.n_joints
        self.n_params = len(chain.params)

    def _args(self, q: np.ndarray, values: np.ndarray) -> np.ndarray:
        """(m, n_elements) argument matrix."""
        m = q.shape[0]
        args = np.broadcast_to(self.const, (m, len(self.const))).copy()
        jm = self.joint_idx >= 0
        args[:, jm] += q[:, self.joint_idx[jm]]
        pm = self.param_idx >= 0
        args[:, pm] += values[self.param_idx[pm]]
        return args

    def forward(self, q: np.ndarray, values: np.ndarray, keep_prefixes=False):
        """Compose all elements for a batch of configurations.

        Returns (R, t) of the final frame, plus per-element prefix poses
        when requested (prefix k = pose before element k is applied).
        """
        m = q.shape[0]
        args = self._args(q, values)
        rot = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
        trans = np.zeros((m, 3))
        pre_r = pre_t = None
        if keep_prefixes:
            pre_r = np.empty((len(self.axis), m, 3, 3))
            pre_t = np.empty((len(self.axis), m, 3))
        for k in range(len(self.axis)):
            if keep_prefixes:
                pre_r[k] = rot
                pre_t[k] = trans
            a = args[:, k]
            if self.is_rot[k]:
                c, s = np.cos(a), np.sin(a)
                rk = np.zeros((m, 3, 3))
                i, j = [x for x in range(3) if x != self.axis[k]]
                rk[:, self.axis[k], self.axis[k]] = 1.0
                rk[:, i, i] = c
                rk[:, j, j] = c
                sign = -1.0 if (j - i) % 3 == 1 else 1.0
                rk[:, i, j] = sign * s
                rk[:, j, i] = -sign * s
                rot = rot @ rk
            else:
                trans = trans + rot[:, :, self.axis[k]] * a[:, None]
        return rot, trans, pre_r, pre_t

    def position_jacobian(self, q: np.ndarray, values: np.ndarray):
        """(m, 3, n_params) derivative of tip position w.r.t. deviations."""
        m = q.shape[0]
        _, tip, pre_r, pre_t = self.forward(q, values, keep_prefixes=True)
        jac = np.zeros((m, 3, self.n_params))
        for k in np.nonzero(self.param_idx >= 0)[0]:
            col = self.param_idx[k]
            a = pre_r[k][:, :, self.axis[k]]
            if self.is_rot[k]:
                jac[:, :, col] += np.cross(a, tip - pre_t[k])
            else:
                jac[:, :, col] += a
        return jac, tip

    def joint_jacobian(self, q: np.ndarray, values: np.ndarray):
        """(m, 6, n_joints) twist Jacobian (3 translational + 3 rotational)."""
        m = q.shape[0]
        _, tip, pre_r, pre_t = self.forward(q, values, keep_prefixes=True)
        jac = np.zeros((m, 6, self.n_joints))
        for k in np.nonzero(self.joint_idx >= 0)[0]:
            col = self.joint_idx[k]
            a = pre_r[k][:, :, self.axis[k]]
            if self.is_rot[k]:
                jac[:, :3, col] += np.cross(a, tip - pre_t[k])
                jac[:, 3:, col] += a
            else:
                jac[:, :3, col] += a
        return jac


@dataclass
class Chain:
    """A named manipulator model: base block, joint/link elements, tools."""

    name: str
    joints: list[tuple[int, str]]
    base: list[Element]
    elements: list[Element]
    tools: list[list[Element]]
    params: ParamVector
    limits: np.ndarray | None = None  # (n_joints, 2) radians
    _compiled: dict = field(default_factory=dict, repr=False)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_tools(self) -> int:
        return len(self.tools)

    def joint_axis(self, index: int) -> str:
        for idx, ax in self.joints:
            if idx == index:
                return ax
        raise ModelError(f"joint {index} not declared")

    # -- validation -----------------------------------------------------

    def validate(self):
        indices = [idx for idx, _ in self.joints]
        if sorted(indices) != list(range(1, len(indices) + 1)):
            raise SpecFileError(f"joint indices must be 1..n, got {indices}")
        for i, (idx, ax) in enumerate(self.joints):
            if ax not in ("x", "y", "z"):
                raise SpecFileError(f"joints[{i}]: invalid axis label {ax!r}")
        seen = {}
        for where, seq in self._named_blocks():
            for i, el in enumerate(seq):
                loc = f"{where}[{i}]"
                if el.kind not in KINDS:
                    raise SpecFileError(f"{loc}: unknown transform kind {el.kind!r}")
                if el.joint is not None:
                    if where != "elements":
                        raise SpecFileError(f"{loc}: joint bindings only in elements")
                    if not (1 <= el.joint <= self.n_joints):
                        raise SpecFileError(f"{loc}: joint index {el.joint} out of range")
                    if not el.kind.startswith("R"):
                        raise SpecFileError(f"{loc}: joint element must be a rotation")
                    if el.kind[1] != self.joint_axis(el.joint):
                        raise SpecFileError(
                            f"{loc}: kind {el.kind} does not match declared axis "
                            f"{self.joint_axis(el.joint)!r} of joint {el.joint}"
                        )
                    if el.joint in seen:
                        raise SpecFileError(f"{loc}: joint {el.joint} bound twice")
                    seen[el.joint] = loc
                for pid in (el.param, el.offset):
                    if pid is not None and pid not in self.params:
                        raise ModelError(f"{loc}: parameter {pid!r} not in table")
        missing = [i for i in range(1, self.n_joints + 1) if i not in seen]
        if missing:
            raise SpecFileError(f"joints {missing} have no driving element")

    def _named_blocks(self):
        yield "base", self.base
        yield "elements", self.elements
        for j, blk in enumerate(self.tools):
            yield f"tools[{j}]", blk

    def param_segment(self, pid: str) -> str:
        """'base', 'robot' or 'tool' depending on where the id is bound."""
        for where, seq in self._named_blocks():
            for el in seq:
                if pid in (el.param, el.offset):
                    if where == "base":
                        return "base"
                    if where == "elements":
                        return "robot"
                    return "tool"
        raise ModelError(f"parameter {pid!r} is not bound to any element")

    def param_ids_by_segment(self, segment: str) -> list[str]:
        return [
            e.id for e in self.params if self.param_segment(e.id) == segment
        ]

    # -- evaluation -----------------------------------------------------

    def compiled(self, tool_index: int) -> _CompiledChain:
        if tool_index not in self._compiled:
            self.validate()
            self._compiled[tool_index] = _CompiledChain(self, tool_index)
        return self._compiled[tool_index]

    def _check_q(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if q.shape[1] != self.n_joints:
            raise ModelError(
                f"expected {self.n_joints} joint values per configuration, "
                f"got {q.shape[1]}"
            )
        return q

    def _values(self, pi: ParamVector | None) -> np.ndarray:
        pi = self.params if pi is None else pi
        if pi.ids() != self.params.ids():
            raise ModelError("parameter vector does not match the chain's table")
        return pi.values()

    def forward_kinematics(self, q, pi: ParamVector | None = None) -> list[Pose]:
        """Pose of each reference point at configuration q (one per tool block)."""
        q = self._check_q(q)
        if q.shape[0] != 1:
            raise ValueError("forward_kinematics takes a single configuration")
        values = self._values(pi)
        out = []
        for t in range(self.n_tools):
            rot, trans, _, _ = self.compiled(t).forward(q, values)
            out.append(Pose(rot[0], trans[0]))
        return out

    def tool_positions(self, q, pi: ParamVector | None = None) -> np.ndarray:
        """(m, n_tools, 3) reference-point positions for a batch of configs."""
        q = self._check_q(q)
        values = self._values(pi)
        out = np.empty((q.shape[0], self.n_tools, 3))
        for t in range(self.n_tools):
            _, trans, _, _ = self.compiled(t).forward(q, values)
            out[:, t] = trans
        return out

    def jacobian_params(self, q, pi: ParamVector | None = None) -> np.ndarray:
        """(3*n_tools, n_params) position Jacobian at one configuration."""
        jac, _ = self.batched_param_jacobian(self._check_q(q), pi)
        return jac[0].reshape(3 * self.n_tools, len(self.params))

    def batched_param_jacobian(self, q, pi: ParamVector | None = None):
        """((m, n_tools, 3, n_params) Jacobians, (m, n_tools, 3) positions)."""
        q = self._check_q(q)
        values = self._values(pi)
        m = q.shape[0]
        jac = np.empty((m, self.n_tools, 3, len(self.params)))
        pos = np.empty((m, self.n_tools, 3))
        for t in range(self.n_tools):
            jac[:, t], pos[:, t] = self.compiled(t).position_jacobian(q, values)
        return jac, pos

    def jacobian_joints(self, q, pi: ParamVector | None = None, tool_index=0):
        """(6, n_joints) twist Jacobian of reference point ``tool_index``."""
        q = self._check_q(q)
        if q.shape[0] != 1:
            raise ValueError("jacobian_joints takes a single configuration")
        return self.compiled(tool_index).joint_jacobian(q, self._values(pi))[0]

    def element_poses(self, q, pi: ParamVector | None = None, tool_index=0):
        """(pose after the base block, poses after each element, final pose).

        The middle list has one entry per entry of ``self.elements``; the
        final pose includes the requested tool block.
        """
        self.validate()
        pi = self.params if pi is None else pi
        values = {e.id: e.value for e in pi}
        qv = np.asarray(q, dtype=float).ravel()
        if qv.shape != (self.n_joints,):
            raise ModelError(f"expected {self.n_joints} joint values")

        def arg(el: Element) -> float:
            a = float(el.const or 0.0)
            if el.joint is not None:
                a += qv[el.joint - 1]
                if el.offset is not None:
                    a += values[el.offset]
            elif el.param is not None:
                a += values[el.param]
            return a

        pose = Pose.identity()
        for el in self.base:
            pose = pose @ elementary(el.kind, arg(el))
        base_pose = pose
        after = []
        for el in self.elements:
            pose = pose @ elementary(el.kind, arg(el))
            after.append(pose)
        for el in self.tools[tool_index]:
            pose = pose @ elementary(el.kind, arg(el))
        return base_pose, after, pose

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "joints": [{"index": i, "axis": a} for i, a in self.joints],
            "params": [
                {"id": e.id, "nominal": e.nominal, "unit": e.unit}
                for e in self.params
            ],
            "base": [e.to_dict() for e in self.base],
            "elements": [e.to_dict() for e in self.elements],
            "tools": [[e.to_dict() for e in blk] for blk in self.tools],
        }
        if self.limits is not None:
            d["limits_deg"] = np.degrees(self.limits).tolist()
        return d

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(d: dict) -> "Chain":
        try:
            joints = [(int(j["index"]), str(j["axis"])) for j in d["joints"]]
            params = ParamVector(
                [
                    ParamEntry(p["id"], float(p["nominal"]), 0.0, p.get("unit", "mm"))
                    for p in d.get("params", [])
                ]
            )
            base = [Element.from_dict(e, f"base[{i}]") for i, e in enumerate(d.get("base", []))]
            elements = [
                Element.from_dict(e, f"elements[{i}]") for i, e in enumerate(d["elements"])
            ]
            tools = [
                [Element.from_dict(e, f"tools[{j}][{i}]") for i, e in enumerate(blk)]
                for j, blk in enumerate(d.get("tools", []))
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecFileError(f"malformed chain definition: {exc}") from exc
        limits = None
        if "limits_deg" in d:
            limits = np.radians(np.asarray(d["limits_deg"], dtype=float))
            if limits.shape != (len(joints), 2):
                raise SpecFileError(
                    f"limits_deg must be {len(joints)}x2, got {limits.shape}"
                )
        chain = Chain(
            name=str(d.get("name", "chain")),
            joints=joints,
            base=base,
            elements=elements,
            tools=tools,
            params=params,
            limits=limits,
        )
        chain.validate()
        return chain

    @staticmethod
    def from_json(text: str) -> "Chain":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecFileError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return Chain.from_dict(d)

    @staticmethod
    def load(path) -> "Chain":
        with open(path, "r", encoding="utf-8") as fh:
            return Chain.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def forward_kinematics(chain: Chain, q, pi: ParamVector | None = None) -> list[Pose]:
    return chain.forward_kinematics(q, pi)


def jacobian_params(chain: Chain, q, pi: ParamVector | None = None) -> np.ndarray:
    return chain.jacobian_params(q, pi)


def jacobian_joints(chain: Chain, q, pi: ParamVector | None = None, tool_index=0):
    return chain.jacobian_joints(q, pi, tool_index)
