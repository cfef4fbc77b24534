"""Rigid-body transforms built from elementary translations and rotations.

All translations are in millimetres, all angles in radians. A pose is
stored as an orthonormal 3x3 rotation plus a 3-vector, which keeps the
composition chain free of homogeneous-coordinate bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRANSLATION_KINDS = ("Tx", "Ty", "Tz")
ROTATION_KINDS = ("Rx", "Ry", "Rz")
KINDS = TRANSLATION_KINDS + ROTATION_KINDS

# unit axis per kind, shared by translations and rotations
AXIS = {
    "Tx": np.array([1.0, 0.0, 0.0]),
    "Ty": np.array([0.0, 1.0, 0.0]),
    "Tz": np.array([0.0, 0.0, 1.0]),
    "Rx": np.array([1.0, 0.0, 0.0]),
    "Ry": np.array([0.0, 1.0, 0.0]),
    "Rz": np.array([0.0, 0.0, 1.0]),
}

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def principal_rotation(axis_index: int, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    r = np.eye(3)
    i, j = [k for k in range(3) if k != axis_index]
    r[i, i] = c
    r[j, j] = c
    r[i, j] = -s if (j - i) % 3 == 1 else s
    r[j, i] = -r[i, j]
    return r


def rot_x(angle: float) -> np.ndarray:
    return principal_rotation(0, angle)


def rot_y(angle: float) -> np.ndarray:
    return principal_rotation(1, angle)


def rot_z(angle: float) -> np.ndarray:
    return principal_rotation(2, angle)


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix for a rotation vector (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        return np.eye(3) + skew(rotvec)
    k = skew(rotvec / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def euler_xyz_from_matrix(r) -> np.ndarray:
    """Angles (ax, ay, az) with R = Rx(ax) @ Ry(ay) @ Rz(az)."""
    r = np.asarray(r, dtype=float)
    ay = np.arcsin(np.clip(r[0, 2], -1.0, 1.0))
    if abs(r[0, 2]) < 1.0 - 1e-10:
        ax = np.arctan2(-r[1, 2], r[2, 2])
        az = np.arctan2(-r[0, 1], r[0, 0])
    else:
        # gimbal: fold everything into ax
        ax = np.arctan2(r[2, 1], r[1, 1])
        az = 0.0
    return np.array([ax, ay, az])


@dataclass
class Pose:
    """Orientation + position of a frame: p_world = R @ p_local + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))))


def elementary(kind: str, value: float) -> Pose:
    """Pose of a single elementary transform.

    ``kind`` is one of Tx, Ty, Tz (mm) or Rx, Ry, Rz (rad).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown elementary transform kind {kind!r}")
    if not np.isfinite(value):
        raise ValueError(f"non-finite argument {value!r} for {kind}")
    if kind in TRANSLATION_KINDS:
        return Pose(np.eye(3), AXIS[kind] * float(value))
    return Pose(principal_rotation(_AXIS_INDEX[kind[1]], float(value)), np.zeros(3))


def axis_index(label: str) -> int:
    try:
        return _AXIS_INDEX[label]
    except KeyError:
        raise ValueError(f"unknown axis label {label!r} (expected x, y or z)") from None
