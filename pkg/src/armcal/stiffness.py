"""Serial beam-and-joint stiffness models usable by both methods.

A serial model pairs a kinematic chain with one beam section per elastic
link and one torsional stiffness per joint. The same description builds
the lumped-spring (VJM) model and, at a given configuration, the nodal
structural (MSA) model; the two Cartesian stiffness results must agree,
which is the cross-validation gate of the test suite.

In the structural model the first joint's spring becomes the elastic
support (the base grounding rotates about the first axis), interior
joints become constraint pairs, and the trailing element group behind
the last joint is the beam reaching the external node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .chain import Chain, ParamVector
from .errors import ModelError, SpecFileError
from .msa import BeamProperties, JointConstraint, MsaElement, MsaModel, MsaNode, Support, link_block
from .resources import BUILTIN_CHAINS, data_path
from .transforms import AXIS, Pose
from .vjm import VjmModel, build_vjm, link_segments


def _beam_frame(direction: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal frame with local x along ``direction``."""
    length = np.linalg.norm(direction)
    if length <= 0:
        raise ModelError("a beam needs a nonzero direction")
    x = direction / length
    helper = np.array([0.0, 1.0, 0.0])
    if abs(float(x @ helper)) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    y = helper - (helper @ x) * x
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


@dataclass
class SerialStiffnessModel:
    chain: Chain
    links: list[BeamProperties]
    joint_stiffness: np.ndarray
    name: str = "serial-stiffness-model"

    def __post_init__(self):
        self.joint_stiffness = np.asarray(self.joint_stiffness, dtype=float)
        segs = link_segments(self.chain)
        if len(self.links) != len(segs):
            raise SpecFileError(
                f"{len(self.links)} beam sections for {len(segs)} elastic links"
            )
        if self.joint_stiffness.shape != (self.chain.n_joints,):
            raise SpecFileError(
                f"need {self.chain.n_joints} joint stiffness values"
            )
        for segment, props in zip(segs, self.links):
            d = self._segment_vector(segment)
            if abs(np.linalg.norm(d) - props.L) > 1e-6 * max(props.L, 1.0):
                raise SpecFileError(
                    f"link covering elements {segment}: geometric length "
                    f"{np.linalg.norm(d):.6g} mm != section L {props.L:.6g} mm"
                )

    def _segment_vector(self, segment) -> np.ndarray:
        """Translation of a link segment in the chain frame at its start
        (segments must be translation-only for the bridge to be exact)."""
        d = np.zeros(3)
        for i in segment:
            el = self.chain.elements[i]
            if not el.kind.startswith("T"):
                raise SpecFileError(
                    "stiffness-model links must contain only translations; "
                    f"element {i} is {el.kind}"
                )
            value = float(el.const or 0.0)
            if el.param is not None:
                value = self.chain.params.entry(el.param).value
            d += AXIS[el.kind] * value
        return d

    # -- lumped-spring side ------------------------------------------------

    def link_blocks(self) -> list[np.ndarray]:
        """6x6 spring blocks in the chain frame at each link's end."""
        from .msa import beam_stiffness_local

        blocks = []
        for segment, props in zip(link_segments(self.chain), self.links):
            r = _beam_frame(self._segment_vector(segment))
            big = np.kron(np.eye(2), r)
            blocks.append(big @ beam_stiffness_local(props) @ big.T)
        return blocks

    def vjm_model(self, tool_index: int = 0) -> VjmModel:
        return build_vjm(
            self.chain, self.link_blocks(), self.joint_stiffness, tool_index
        )

    # -- nodal structural side ----------------------------------------------

    def msa_model(self, q, pi: ParamVector | None = None,
                  tool_index: int = 0) -> MsaModel:
        """Structural model at configuration q.

        Node pairs straddle every interior joint; the first joint is the
        elastic support and the last beam ends at the external node.
        """
        chain = self.chain
        segs = link_segments(chain)
        jpos = [i for i, el in enumerate(chain.elements) if el.joint is not None]
        if len(segs) != len(jpos):
            raise ModelError(
                "the structural bridge needs a trailing element group behind "
                "the last joint (the beam reaching the external node)"
            )
        base_pose, after, ee = chain.element_poses(q, pi, tool_index)

        def pose_before(idx: int) -> Pose:
            return base_pose if idx == 0 else after[idx - 1]

        joint_frames = [pose_before(i) for i in jpos]
        link_starts = [after[i] for i in jpos]
        ends = [after[s[-1]] for s in segs]

        nodes: list[MsaNode] = []
        elements: list[MsaElement] = []
        joints: list[JointConstraint] = []
        support: Support | None = None
        nid = 0
        prev_end: int | None = None
        for k, jp in enumerate(jpos):
            start = link_starts[k]
            end_p = ends[k].translation
            r = start.rotation @ _beam_frame(
                start.rotation.T @ (end_p - start.translation)
            )
            nid += 1
            near = MsaNode(nid, Pose(r, start.translation))
            nid += 1
            far = MsaNode(nid, Pose(r, end_p))
            nodes.extend([near, far])
            elements.append(
                MsaElement(near.id, far.id, link_block(self.links[k], near.frame))
            )
            axis = chain.elements[jp].kind[1]
            if k == 0:
                support = Support(
                    near.id, axis, float(self.joint_stiffness[0]),
                    frame=joint_frames[0],
                )
            else:
                joints.append(
                    JointConstraint(
                        prev_end, near.id, axis, float(self.joint_stiffness[k]),
                        frame=joint_frames[k],
                    )
                )
            prev_end = far.id
        return MsaModel(nodes, elements, joints, support, external=prev_end)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": "serial",
            "name": self.name,
            "chain": self.chain.to_dict(),
            "joint_stiffness": self.joint_stiffness.tolist(),
            "links": [
                {k: getattr(p, k) for k in ("E", "G", "S", "L", "Iy", "Iz", "J")}
                for p in self.links
            ],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def from_dict(d: dict) -> "SerialStiffnessModel":
        try:
            chain_spec = d["chain"]
            if isinstance(chain_spec, str):
                chain = Chain.load(data_path(BUILTIN_CHAINS[chain_spec]))
            else:
                chain = Chain.from_dict(chain_spec)
            links = [
                BeamProperties(b["E"], b["G"], b["S"], b["L"], b["Iy"], b["Iz"], b["J"])
                for b in d["links"]
            ]
            return SerialStiffnessModel(
                chain, links, np.asarray(d["joint_stiffness"], dtype=float),
                name=str(d.get("name", "serial-stiffness-model")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (SpecFileError, ModelError)):
                raise
            raise SpecFileError(f"malformed stiffness model: {exc}") from exc

    @staticmethod
    def load(path) -> "SerialStiffnessModel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecFileError(
                    f"invalid JSON at line {exc.lineno}: {exc.msg}"
                ) from exc
        return SerialStiffnessModel.from_dict(d)
