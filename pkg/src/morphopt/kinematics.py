"""Planar n-link serial chain: the physics-based hardware model.

Link lengths are the interpretable design parameters; the model converts
joint-space action deltas into end-effector positions via forward
kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LENGTH_MIN_DEFAULT = 0.05
LENGTH_MAX_DEFAULT = 5.0


@dataclass(frozen=True)
class DesignParams:
    """Positive link lengths in world units, the buildable output."""

    link_lengths: np.ndarray
    len_min: float = LENGTH_MIN_DEFAULT
    len_max: float = LENGTH_MAX_DEFAULT

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, dtype=np.float64)
        object.__setattr__(self, "link_lengths", lengths)
        if lengths.ndim != 1 or lengths.size < 1:
            raise ValueError("link_lengths must be a non-empty 1-D vector")
        if np.any(lengths < self.len_min - 1e-12) or np.any(lengths > self.len_max + 1e-12):
            raise ValueError(
                f"link lengths {lengths} outside bounds [{self.len_min}, {self.len_max}]")

    @property
    def n_links(self) -> int:
        return self.link_lengths.size

    @property
    def total_length(self) -> float:
        return float(np.sum(self.link_lengths))


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(angles, dtype=np.float64) + np.pi, 2.0 * np.pi)
    return -(wrapped - np.pi)


def forward_kinematics(design: DesignParams, joint_angles: np.ndarray) -> np.ndarray:
    """Points of the chain: (n+1, 2) array [base, joint 1, ..., end-effector].

    Joint angles are relative to the parent link; the base is fixed at the
    origin and link k is rotated by the cumulative angle up to joint k.
    """
    angles = np.asarray(joint_angles, dtype=np.float64)
    if angles.shape != (design.n_links,):
        raise ValueError(
            f"joint arity {angles.shape} does not match design arity {design.n_links}")
    cum = np.cumsum(angles)
    steps = design.link_lengths[:, None] * np.stack([np.cos(cum), np.sin(cum)], axis=1)
    points = np.zeros((design.n_links + 1, 2))
    np.cumsum(steps, axis=0, out=points[1:])
    return points


def end_effector(design: DesignParams, joint_angles: np.ndarray) -> np.ndarray:
    return forward_kinematics(design, joint_angles)[-1]


def fk_batch_end_effector(link_lengths: np.ndarray, joint_angles: np.ndarray) -> np.ndarray:
    """End-effector positions for a (batch, n) matrix of joint angles."""
    cum = np.cumsum(np.asarray(joint_angles, dtype=np.float64), axis=1)
    x = np.cos(cum) @ link_lengths
    y = np.sin(cum) @ link_lengths
    return np.stack([x, y], axis=1)


class PhysicalHardware:
    """Hardware-model interface backed by forward kinematics.

    apply(state, action) -> task action (end-effector position after the
    clipped joint deltas). Alternative backends (e.g. a contact simulator)
    can implement the same apply() surface.
    """

    def __init__(self, design: DesignParams, max_joint_delta: float = 0.1):
        self.design = design
        self.max_joint_delta = float(max_joint_delta)

    @property
    def n_links(self) -> int:
        return self.design.n_links

    def apply(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Task action z for (state, action); deterministic and pure."""
        n = self.design.n_links
        joints = np.asarray(state, dtype=np.float64)[:n]
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (n,):
            raise ValueError(f"action arity {action.shape} does not match design arity {n}")
        delta = np.clip(action, -self.max_joint_delta, self.max_joint_delta)
        return end_effector(self.design, joints + delta)

    def apply_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorized apply over (batch, state_dim) / (batch, n) arrays."""
        n = self.design.n_links
        joints = np.asarray(states, dtype=np.float64)[:, :n]
        delta = np.clip(np.asarray(actions, dtype=np.float64),
                        -self.max_joint_delta, self.max_joint_delta)
        return fk_batch_end_effector(self.design.link_lengths, joints + delta)
