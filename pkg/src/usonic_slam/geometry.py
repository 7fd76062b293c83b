"""Planar rigid-motion helpers shared by datagen, odometry and mapping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import PipelineError
from .world import Pose2, wrap_angle

log = logging.getLogger(__name__)


def rz(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(R):
    return math.atan2(R[1, 0], R[0, 0])


@dataclass
class Transform3:
    """Displacement (3,) and rotation (3, 3) between consecutive ticks."""

    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def planar(cls, dx, dy, dtheta):
        return cls(np.array([dx, dy, 0.0]), rz(dtheta))

    @property
    def yaw(self):
        return yaw_of(self.R)

    def then(self, other):
        """Apply ``other`` in the frame reached by ``self``."""
        return Transform3(self.t + self.R @ other.t, self.R @ other.R)

    def __eq__(self, other):
        return (isinstance(other, Transform3) and np.array_equal(self.t, other.t)
                and np.array_equal(self.R, other.R))


def relative(p0, p1):
    """Motion from ``p0`` to ``p1`` expressed in the frame of ``p0``."""
    c, s = math.cos(p0.theta), math.sin(p0.theta)
    dx, dy = p1.x - p0.x, p1.y - p0.y
    return Transform3.planar(c * dx + s * dy, -s * dx + c * dy, wrap_angle(p1.theta - p0.theta))


def compose(pose, rel, tol=1e-3):
    """Advance ``pose`` by the relative transform ``rel``.

    Off-plane components (t_z, roll/pitch leakage in R) are logged and
    dropped; yaw is read as atan2(R10, R00).
    """
    if not (np.isfinite(rel.t).all() and np.isfinite(rel.R).all()):
        raise PipelineError("non-finite transform")
    if abs(rel.t[2]) > tol or abs(rel.R[2, 2] - 1.0) > tol:
        log.debug("dropping off-plane motion t_z=%.4g R22=%.4g", rel.t[2], rel.R[2, 2])
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Pose2(pose.x + c * rel.t[0] - s * rel.t[1],
                 pose.y + s * rel.t[0] + c * rel.t[1],
                 pose.theta + yaw_of(rel.R))
