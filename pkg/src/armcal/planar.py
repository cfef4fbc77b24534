"""Planar serial chain with cumulative-angle kinematics.

The tip of an n-link planar arm sits at

    x = l0 + sum_i (l_i + dl_i) * cos(theta_i + dth_i)
    y =      sum_i (l_i + dl_i) * sin(theta_i + dth_i)

with theta_i the cumulative joint angle q_1 + ... + q_i. The identified
parameters are the length deviations dl_i and the cumulative offsets
dth_i (i = 1..n); the optional base offset l0 is fixed equipment
geometry and is not identified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError


@dataclass
class PlanarChain:
    lengths: np.ndarray
    base_offset: float = 0.0
    dl: np.ndarray = None
    dth: np.ndarray = None

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.dl is None:
            self.dl = np.zeros_like(self.lengths)
        if self.dth is None:
            self.dth = np.zeros_like(self.lengths)
        self.dl = np.asarray(self.dl, dtype=float)
        self.dth = np.asarray(self.dth, dtype=float)

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def n_params(self) -> int:
        return 2 * self.n

    def param_ids(self) -> list[str]:
        return [f"len{i + 1}" for i in range(self.n)] + [
            f"ang{i + 1}" for i in range(self.n)
        ]

    def deviations(self) -> np.ndarray:
        return np.concatenate([self.dl, self.dth])

    def with_deviations(self, dev) -> "PlanarChain":
        dev = np.asarray(dev, dtype=float)
        if dev.shape != (self.n_params,):
            raise ModelError(f"expected {self.n_params} deviations, got {dev.shape}")
        return PlanarChain(self.lengths, self.base_offset, dev[: self.n], dev[self.n:])

    def _check(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if q.shape[1] != self.n:
            raise ModelError(f"expected {self.n} joint values, got {q.shape[1]}")
        return q

    def tip(self, q) -> np.ndarray:
        """(m, 2) tip positions for a batch of configurations."""
        q = self._check(q)
        theta = np.cumsum(q, axis=1) + self.dth
        l = self.lengths + self.dl
        x = self.base_offset + np.sum(l * np.cos(theta), axis=1)
        y = np.sum(l * np.sin(theta), axis=1)
        return np.stack([x, y], axis=1)

    def jacobian(self, q) -> np.ndarray:
        """(m, 2, 2n) tip derivative w.r.t. [dl_1..dl_n, dth_1..dth_n]."""
        q = self._check(q)
        theta = np.cumsum(q, axis=1) + self.dth
        l = self.lengths + self.dl
        c, s = np.cos(theta), np.sin(theta)
        jac = np.empty((q.shape[0], 2, self.n_params))
        jac[:, 0, : self.n] = c
        jac[:, 1, : self.n] = s
        jac[:, 0, self.n:] = -l * s
        jac[:, 1, self.n:] = l * c
        return jac
