"""Reduction of a complete chain model to an irreducible one.

Identifiability of the deviation parameters requires removing the
redundant terms a fully parameterized transform chain carries. The rules
implemented here act on consecutive revolute-joint pairs:

* perpendicular axes: the link between them loses the rotation term
  aligned with the later joint's axis (it duplicates that joint's own
  offset);
* parallel axes: the link loses the in-plane translation orthogonal to
  its nominal direction (it trades against the joint offsets); if the
  link between the joints has no such term left, earlier links are
  searched.

Two boundary removals complete the set: the first joint's offset is
absorbed by a base rotation about the same axis, and, when every
reference point is a freely identified translation triple, the last
joint's offset and every term between the last joint and the tool
blocks are absorbed by the tool vectors. Tool rotations are always
struck for point measurements (a rotation behind a measured point moves
nothing that the point's own coordinates cannot express).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .chain import Chain, Element, ParamVector
from .errors import ModelError

RULE_PERPENDICULAR = "perpendicular-pair"
RULE_PARALLEL = "parallel-pair"
RULE_BOUNDARY_FIRST = "boundary-first-joint"
RULE_BOUNDARY_LAST = "boundary-last-joint"
RULE_TOOL_ABSORBED = "tool-absorbed"
RULE_TOOL_ROTATION = "tool-rotation"


@dataclass
class Elimination:
    param_id: str
    rule: str
    detail: str


@dataclass
class EliminationReport:
    removed: list[Elimination]

    def param_ids(self) -> list[str]:
        return [e.param_id for e in self.removed]

    def by_rule(self, rule: str) -> list[Elimination]:
        return [e for e in self.removed if e.rule == rule]

    def summary(self) -> str:
        lines = [f"{len(self.removed)} parameters eliminated"]
        for e in self.removed:
            lines.append(f"  {e.param_id:<16} {e.rule:<22} {e.detail}")
        return "\n".join(lines)


def _joint_positions(chain: Chain) -> list[int]:
    """Index into chain.elements of the driving element of joints 1..n."""
    pos = {}
    for i, el in enumerate(chain.elements):
        if el.joint is not None:
            pos[el.joint] = i
    ordered = [pos[j] for j in range(1, chain.n_joints + 1)]
    if ordered != sorted(ordered):
        raise ModelError("joint elements must appear in joint order")
    return ordered


def _segment_nominal_translation(chain: Chain, segment: list[Element]) -> np.ndarray:
    """Total nominal translation of a link segment, by axis (small-angle
    rotations in the segment are ignored; nominal link shapes are
    axis-aligned)."""
    total = np.zeros(3)
    for el in segment:
        if el.kind.startswith("T"):
            v = float(el.const or 0.0)
            if el.param is not None:
                v = chain.params.entry(el.param).nominal
            total["xyz".index(el.kind[1])] += v
    return total


def reduce_model(chain: Chain) -> tuple[Chain, EliminationReport]:
    """Strip non-identifiable and semi-identifiable parameters.

    Returns the reduced chain plus a report listing every removed
    parameter with the rule responsible. Removed elements with nonzero
    nominal value are converted to constants so the geometry is
    preserved.
    """
    chain.validate()
    for idx, ax in chain.joints:
        if ax not in ("x", "y", "z"):
            raise ModelError(f"joint {idx} has unlabeled axis")

    jpos = _joint_positions(chain)
    n = chain.n_joints
    removed: list[Elimination] = []
    dead: set[str] = set()

    def segments() -> list[list[int]]:
        """Element indices strictly between consecutive joints; the last
        entry is the trailing group after the final joint."""
        segs = []
        for j in range(n - 1):
            segs.append(list(range(jpos[j] + 1, jpos[j + 1])))
        segs.append(list(range(jpos[n - 1] + 1, len(chain.elements))))
        return segs

    segs = segments()

    def strike(pid: str, rule: str, detail: str):
        if pid not in dead:
            dead.add(pid)
            removed.append(Elimination(pid, rule, detail))

    # consecutive-joint rules
    for j in range(2, n + 1):
        ax_prev = chain.joint_axis(j - 1)
        ax_cur = chain.joint_axis(j)
        link = segs[j - 2]
        if ax_cur != ax_prev:
            # perpendicular: drop the rotation aligned with the later axis
            for i in link:
                el = chain.elements[i]
                if el.kind == "R" + ax_cur and el.param and el.param not in dead:
                    strike(
                        el.param,
                        RULE_PERPENDICULAR,
                        f"link {j - 1} rotation about {ax_cur} duplicates joint {j}",
                    )
                    break
        else:
            # parallel: drop the orthogonal translation closest to joint j
            for k in range(1, j):
                if j - 1 - k < 0:
                    break
                seg = segs[j - 1 - k]
                cands = [
                    i
                    for i in seg
                    if chain.elements[i].kind.startswith("T")
                    and chain.elements[i].kind[1] != ax_cur
                    and chain.elements[i].param
                    and chain.elements[i].param not in dead
                ]
                if not cands:
                    continue
                nominal = _segment_nominal_translation(
                    chain, [chain.elements[i] for i in seg]
                )
                # redundant direction is perpendicular to the nominal link
                # vector: remove the candidate with the smaller component
                cands.sort(
                    key=lambda i: (
                        abs(nominal["xyz".index(chain.elements[i].kind[1])]),
                        -i,
                    )
                )
                el = chain.elements[cands[0]]
                strike(
                    el.param,
                    RULE_PARALLEL,
                    f"link {j - k} translation along {el.kind[1]} trades "
                    f"against offsets of parallel joints {j - 1},{j}",
                )
                break

    # boundary rule: base rotation about the first axis absorbs its offset
    first = chain.elements[jpos[0]]
    base_has_rotation = any(
        el.kind == "R" + chain.joint_axis(1) and el.param for el in chain.base
    )
    if base_has_rotation and first.offset and first.offset not in dead:
        strike(
            first.offset,
            RULE_BOUNDARY_FIRST,
            "absorbed by the base rotation about the same axis",
        )

    # tool rules: point measurements never see rotations behind them
    for t, blk in enumerate(chain.tools):
        for el in blk:
            if el.kind.startswith("R") and el.param and el.param not in dead:
                strike(
                    el.param,
                    RULE_TOOL_ROTATION,
                    f"tool {t + 1} rotation invisible to point measurements",
                )

    tools_free = chain.tools and all(
        sorted(el.kind for el in blk if el.kind.startswith("T") and el.param)
        == ["Tx", "Ty", "Tz"]
        for blk in chain.tools
    )
    if tools_free:
        last = chain.elements[jpos[-1]]
        if last.offset and last.offset not in dead:
            strike(
                last.offset,
                RULE_BOUNDARY_LAST,
                "absorbed by re-defining the free tool vectors",
            )
        for i in segs[-1]:
            el = chain.elements[i]
            if el.param and el.param not in dead:
                strike(
                    el.param,
                    RULE_TOOL_ABSORBED,
                    f"link {n} term behind joint {n} absorbed by tool vectors",
                )

    reduced = _apply(chain, dead)
    return reduced, EliminationReport(removed)


def _apply(chain: Chain, dead: set[str]) -> Chain:
    def rewrite(seq: list[Element]) -> list[Element]:
        out = []
        for el in seq:
            if el.joint is not None and el.offset in dead:
                out.append(replace(el, offset=None))
            elif el.param in dead:
                nominal = chain.params.entry(el.param).nominal
                if nominal != 0.0:
                    out.append(Element(kind=el.kind, const=nominal))
                # zero-nominal terms vanish entirely
            else:
                out.append(replace(el))
        return out

    params = ParamVector([replace(e) for e in chain.params if e.id not in dead])
    reduced = Chain(
        name=chain.name + "-reduced" if not chain.name.endswith("-reduced") else chain.name,
        joints=list(chain.joints),
        base=rewrite(chain.base),
        elements=rewrite(chain.elements),
        tools=[rewrite(blk) for blk in chain.tools],
        params=params,
        limits=None if chain.limits is None else chain.limits.copy(),
    )
    reduced.validate()
    return reduced
