"""Bundled robot models.

The KUKA iiwa 14 R820 is the worked case for the whole toolkit: seven
revolute joints with axes z-x-z-x-z-x-z, nominal z-offsets base 360 mm,
420 mm between joints 2 and 3, 400 mm between joints 4 and 5, and three
tool reference points 90 mm off the flange. The "full" model carries the
complete deviation parameterization (6 base + 7 joint offsets + 4 terms
per link + 3 translations per tool point); reduce_model() brings it down
to the 23 identifiable robot parameters.
"""

from __future__ import annotations

import numpy as np

from . import doe
from .chain import Chain, Element, ParamEntry, ParamVector

IIWA_AXES = ("z", "x", "z", "x", "z", "x", "z")

# degrees, symmetric, per joint 1..7
IIWA_LIMITS_DEG = (170.0, 120.0, 170.0, 120.0, 170.0, 120.0, 175.0)

IIWA_BASE_Z = 360.0
IIWA_D1 = 420.0
IIWA_D2 = 400.0
IIWA_TOOL_RADIUS = 90.0

# three markers on a 90 mm circle in the flange's y-z plane
IIWA_TOOL_NOMINALS = (
    (0.0, 0.0, 90.0),
    (0.0, -90.0 * np.sqrt(3.0) / 2.0, -45.0),
    (0.0, 90.0 * np.sqrt(3.0) / 2.0, -45.0),
)


def _orthogonal_axes(axis: str) -> tuple[str, str]:
    order = "xyz"
    return tuple(a for a in order if a != axis)  # type: ignore[return-value]


def kuka_iiwa(n_tools: int = 3) -> Chain:
    """Complete (unreduced) deviation model of the iiwa 14 R820."""
    params: list[ParamEntry] = []
    base: list[Element] = []
    for ax, nom in zip("xyz", (0.0, 0.0, IIWA_BASE_Z)):
        pid = f"base_{ax}"
        params.append(ParamEntry(pid, nom, 0.0, "mm"))
        base.append(Element(kind=f"T{ax}", param=pid))
    for ax in "xyz":
        pid = f"base_r{ax}"
        params.append(ParamEntry(pid, 0.0, 0.0, "rad"))
        base.append(Element(kind=f"R{ax}", param=pid))

    link_z_nominal = {2: IIWA_D1, 4: IIWA_D2}
    elements: list[Element] = []
    for j, axis in enumerate(IIWA_AXES, start=1):
        off = f"joint{j}_offset"
        params.append(ParamEntry(off, 0.0, 0.0, "rad"))
        elements.append(Element(kind=f"R{axis}", joint=j, offset=off))
        u, v = _orthogonal_axes(axis)
        for ax in (u, v):
            pid = f"link{j}_{ax}"
            nom = link_z_nominal.get(j, 0.0) if ax == "z" else 0.0
            params.append(ParamEntry(pid, nom, 0.0, "mm"))
            elements.append(Element(kind=f"T{ax}", param=pid))
        for ax in (u, v):
            pid = f"link{j}_r{ax}"
            params.append(ParamEntry(pid, 0.0, 0.0, "rad"))
            elements.append(Element(kind=f"R{ax}", param=pid))

    tools: list[list[Element]] = []
    for t in range(n_tools):
        blk = []
        for ax, nom in zip("xyz", IIWA_TOOL_NOMINALS[t]):
            pid = f"tool{t + 1}_{ax}"
            params.append(ParamEntry(pid, nom, 0.0, "mm"))
            blk.append(Element(kind=f"T{ax}", param=pid))
        tools.append(blk)

    limits = np.radians(
        [[-lim, lim] for lim in IIWA_LIMITS_DEG]
    )
    chain = Chain(
        name="kuka-iiwa-14",
        joints=[(j, a) for j, a in enumerate(IIWA_AXES, start=1)],
        base=base,
        elements=elements,
        tools=tools,
        params=ParamVector(params),
        limits=limits,
    )
    chain.validate()
    return chain


# ---------------------------------------------------------------------------
# measurement-pose planning for the iiwa

# The z-axed joints (1,3,5,7) form one planar subchain; the x-axed joints
# (2,4,6) form the other, led by a virtual joint because the optimality
# sums never contain the first joint of the full chain.
def iiwa_decomposition() -> doe.SubchainDecomposition:
    return doe.SubchainDecomposition(
        subchains=[[1, 3, 5, 7], [2, 4, 6]], virtual=[False, True]
    )


# hand assignment known to satisfy the optimality sums inside the limits
IIWA_ASSIGNMENT_DEG = {
    "a1": 0.0, "a2": 0.0, "a3": 0.0, "a4": 0.0,
    "e1": -90.0, "e2": -90.0,
    "b1": -90.0, "b2": -130.0,
    "chi": -110.0, "gamma": -160.0, "phi": -110.0, "delta": -170.0,
    "v1": 0.0, "v2": 0.0, "v3": 0.0, "v4": 0.0,
}

# first-joint column shipped with the reference plan (tracker visibility);
# the optimality sums are invariant to it
IIWA_FIRST_JOINT_DEG = (
    -20.0, 40.0, 135.0, -140.0, 20.0, -45.0, -140.0, -140.0,
    -165.0, 165.0, 0.0, 10.0, 165.0, -160.0, 0.0, -15.0,
)


def iiwa_symbolic_plan() -> doe.SymbolicPlan:
    """16-row symbolic plan from two 4-joint patterns."""
    sub1 = doe.pattern_n4m4(["a1", "a2", "a3", "a4"], "b1", "b2", "gamma", "delta")
    sub2 = doe.pattern_n4m4(["v1", "v2", "v3", "v4"], "e1", "e2", "chi", "phi")
    plan = doe.combine_subchains(iiwa_decomposition(), [sub1, sub2])
    plan.joint_names = [f"joint{j}" for j in range(1, 8)]
    return plan


def iiwa_optimal_plan(first_joint_deg=None) -> doe.PosePlan:
    """Concrete 16-configuration measurement plan for the iiwa.

    ``first_joint_deg`` overrides the first-joint column (16 values);
    the default is the shipped tracker-facing column.
    """
    assignment = {k: np.radians(v) for k, v in IIWA_ASSIGNMENT_DEG.items()}
    plan = iiwa_symbolic_plan().substitute(
        assignment, limits=np.radians([[-l, l] for l in IIWA_LIMITS_DEG])
    )
    col = IIWA_FIRST_JOINT_DEG if first_joint_deg is None else first_joint_deg
    col = np.radians(np.asarray(col, dtype=float))
    if col.shape != (plan.m,):
        raise ValueError(f"first-joint column needs {plan.m} values")
    plan.configurations[:, 0] = col
    return plan


def iiwa_random_plan(m: int, seed: int) -> doe.PosePlan:
    """Uniform random plan inside the joint limits."""
    rng = np.random.default_rng(seed)
    limits = np.radians([[-l, l] for l in IIWA_LIMITS_DEG])
    q = rng.uniform(limits[:, 0], limits[:, 1], size=(m, len(IIWA_AXES)))
    return doe.PosePlan(
        q,
        [f"random[{k}]" for k in range(m)],
        [f"joint{j}" for j in range(1, 8)],
        limits,
    )
