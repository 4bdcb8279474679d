"""Zigzag tunnel geometry: corridor membership, centerline, collision checks.

The corridor is the set of points within `corridor_halfwidth` of the
piecewise-linear centerline, so membership, penetration depth and the
walls are all derived from point-to-polyline distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import DesignParams, forward_kinematics

COLLISION_SAMPLES_PER_LINK = 32


@dataclass
class TunnelGeometry:
    """Piecewise-linear corridor with a goal disk at the far end."""

    centerline: np.ndarray           # (k+1, 2) vertices, x strictly increasing
    corridor_halfwidth: float
    goal_pos: np.ndarray
    goal_radius: float
    segments: list = field(default_factory=list)   # wall segments, derived

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64)
        self.goal_pos = np.asarray(self.goal_pos, dtype=np.float64)
        if self.centerline.ndim != 2 or self.centerline.shape[0] < 2 or self.centerline.shape[1] != 2:
            raise ValueError("centerline must be a (k+1, 2) array with k >= 1")
        if np.any(np.diff(self.centerline[:, 0]) <= 0):
            raise ValueError("centerline x coordinates must be strictly increasing")
        if self.corridor_halfwidth <= 0:
            raise ValueError("corridor_halfwidth must be positive")
        if not self.segments:
            self.segments = self._wall_segments()
        if self.point_distance(self.goal_pos) > self.corridor_halfwidth:
            raise ValueError("goal must lie inside the corridor")

    def _wall_segments(self) -> list:
        walls = []
        for a, b in zip(self.centerline[:-1], self.centerline[1:]):
            d = b - a
            n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            off = self.corridor_halfwidth * n
            walls.append((tuple(a + off), tuple(b + off)))
            walls.append((tuple(a - off), tuple(b - off)))
        return walls

    @property
    def entrance(self) -> np.ndarray:
        return self.centerline[0]

    @property
    def entrance_heading(self) -> float:
        d = self.centerline[1] - self.centerline[0]
        return float(np.arctan2(d[1], d[0]))

    def centerline_y(self, x) -> np.ndarray | float:
        """Piecewise-linear centerline height; x clamped to the corridor extent."""
        return np.interp(x, self.centerline[:, 0], self.centerline[:, 1])

    def point_distance(self, points) -> np.ndarray | float:
        """Distance from point(s) to the centerline polyline."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        best = np.full(p.shape[0], np.inf)
        for a, b in zip(self.centerline[:-1], self.centerline[1:]):
            d = b - a
            t = np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0)
            closest = a + t[:, None] * d
            best = np.minimum(best, np.linalg.norm(p - closest, axis=1))
        return best if np.asarray(points).ndim == 2 else float(best[0])

    def contains(self, points) -> np.ndarray | bool:
        d = self.point_distance(points)
        return d <= self.corridor_halfwidth

    def with_halfwidth(self, halfwidth: float) -> "TunnelGeometry":
        return TunnelGeometry(self.centerline.copy(), halfwidth,
                              self.goal_pos.copy(), self.goal_radius)

    def to_dict(self) -> dict:
        return {
            "centerline": self.centerline.tolist(),
            "corridor_halfwidth": self.corridor_halfwidth,
            "goal_pos": self.goal_pos.tolist(),
            "goal_radius": self.goal_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TunnelGeometry":
        return cls(np.array(d["centerline"]), float(d["corridor_halfwidth"]),
                   np.array(d["goal_pos"]), float(d["goal_radius"]))


def build_zigzag(n_segments: int = 3, segment_length: float = 4.0,
                 slope_deg: float = 35.0, corridor_halfwidth: float = 0.75,
                 goal_radius: float = 0.25) -> TunnelGeometry:
    """Corridor of `n_segments` straight runs with alternating +/- slope.

    Starts at the origin going up; the goal sits on the centerline at the
    far end.
    """
    if n_segments < 1:
        raise ValueError("need at least one segment")
    slope = np.deg2rad(slope_deg)
    vertices = [np.zeros(2)]
    for i in range(n_segments):
        ang = slope if i % 2 == 0 else -slope
        step = segment_length * np.array([np.cos(ang), np.sin(ang)])
        vertices.append(vertices[-1] + step)
    centerline = np.array(vertices)
    return TunnelGeometry(centerline, corridor_halfwidth, centerline[-1].copy(),
                          goal_radius)


def link_sample_points(points: np.ndarray, samples_per_link: int) -> np.ndarray:
    """Evenly spaced sample points along each link, endpoints included."""
    t = np.linspace(0.0, 1.0, samples_per_link)
    a = points[:-1]
    b = points[1:]
    samples = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    return samples.reshape(-1, 2)


def collision_check(design: DesignParams, joint_angles: np.ndarray,
                    tunnel: TunnelGeometry,
                    samples_per_link: int = COLLISION_SAMPLES_PER_LINK):
    """(colliding, max_penetration) for the chain inside the corridor.

    Penetration is the largest distance outside the corridor over sampled
    link points; it is exactly 0 when nothing leaves the corridor.
    """
    pts = link_sample_points(forward_kinematics(design, joint_angles), samples_per_link)
    penetration = tunnel.point_distance(pts) - tunnel.corridor_halfwidth
    worst = float(np.max(penetration))
    if worst <= 0.0:
        return False, 0.0
    return True, worst
