"""Constant-velocity motion prediction from the two most recent poses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose, compose, inverse, log_so3


@dataclass(frozen=True)
class VelocityEstimate:
    """Body-frame velocities over one sweep: linear in m/s, angular in rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.linear) or np.any(self.angular))


def predict_relative(history: Sequence[Pose]) -> Pose:
    """Relative motion expected over the next interval.

    Assumes the platform keeps moving as it did between the last two poses,
    so the prediction is the most recent pose increment. With fewer than two
    poses there is nothing to extrapolate and the identity is returned.
    """
    if len(history) < 2:
        return Pose.identity()
    return compose(inverse(history[-2]), history[-1])


def velocities(pred: Pose, dt: float) -> VelocityEstimate:
    """Linear and angular velocity implied by a relative pose over dt seconds."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return VelocityEstimate(pred.translation / dt, log_so3(pred.rotation) / dt)
