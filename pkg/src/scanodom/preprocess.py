"""Per-sweep preprocessing: motion compensation and spatial downsampling.

A sweep arrives as an (N, 3) array of sensor-frame points, optionally with a
per-point acquisition time inside the sweep. Deskewing undoes the motion of
the sensor during the sweep; the two-stage voxel downsampling produces the
coarse cloud used to grow the map and the still coarser cloud fed to the
registration. Downsampled clouds keep the original point coordinates - one
representative per voxel, the first one in input order - so no discretization
error is introduced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import exp_so3
from .motion import VelocityEstimate


@dataclass
class Frame:
    """One sweep: positions (N, 3) in meters, plus each point's time stamp.

    `stamps` holds seconds since the start of the sweep for every point
    (parallel to `points`) or None when the sensor does not report them.
    `dt` is the sweep duration.
    """

    points: np.ndarray
    stamps: np.ndarray | None = None
    dt: float = 0.1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.stamps is not None:
            self.stamps = np.asarray(self.stamps, dtype=np.float64).reshape(-1)
            if len(self.stamps) != len(self.points):
                raise ValueError(
                    f"{len(self.stamps)} stamps for {len(self.points)} points"
                )
        if self.dt <= 0.0:
            raise ValueError(f"sweep duration must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.points)


def normalize_stamps(stamps, dt: float) -> np.ndarray:
    """Rescale raw per-point stamps linearly onto [0, dt].

    Sensors report times in arbitrary units (seconds, nanoseconds, column
    index); only the relative position inside the sweep matters. Constant
    stamps map to all-zeros.
    """
    stamps = np.asarray(stamps, dtype=np.float64)
    lo, hi = stamps.min(), stamps.max()
    if hi == lo:
        return np.zeros_like(stamps)
    return (stamps - lo) * (dt / (hi - lo))


def stamps_from_azimuth(points, dt: float) -> np.ndarray:
    """Synthesize per-point stamps from the horizontal scan angle.

    Assumes one full revolution per sweep, starting at the azimuth of the
    first point. The spin direction is taken from the median of the wrapped
    azimuth increments, so interleaved beams and noise do not flip it.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return np.zeros(len(points))
    phi = np.arctan2(points[:, 1], points[:, 0])
    dphi = np.diff(phi)
    dphi = (dphi + np.pi) % (2.0 * np.pi) - np.pi
    direction = -1.0 if np.median(dphi) < 0.0 else 1.0
    progress = (direction * (phi - phi[0])) % (2.0 * np.pi)
    return progress * (dt / (2.0 * np.pi))


def deskew(frame: Frame, vel: VelocityEstimate) -> np.ndarray:
    """Undo sensor motion during the sweep under a constant-velocity model.

    Each point is advanced by the rotation and translation the sensor
    accumulated up to its stamp: p <- exp(s * angular) p + s * linear.
    Output preserves length and order. Stamps must already be normalized
    to [0, dt].
    """
    if frame.stamps is None:
        raise ValueError("frame has no per-point stamps; cannot deskew")
    if vel.is_zero or len(frame) == 0:
        return frame.points.copy()
    s = frame.stamps[:, None]
    rotations = exp_so3(s * vel.angular)
    return np.einsum("nij,nj->ni", rotations, frame.points) + s * vel.linear


def voxel_indices(points, voxel_size: float) -> np.ndarray:
    """Integer grid cell per point: floor(p / voxel_size) along each axis."""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


def voxel_downsample(points, voxel_size: float) -> np.ndarray:
    """Keep the first point (in input order) of every occupied voxel.

    The result is a subset of the input with unmodified coordinates, in
    input order.
    """
    if voxel_size <= 0.0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    cells = voxel_indices(points, voxel_size)
    # stable sort groups equal cells while preserving input order inside each
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    first = np.empty(len(points), dtype=bool)
    first[0] = True
    first[1:] = np.any(sorted_cells[1:] != sorted_cells[:-1], axis=1)
    keep = np.sort(order[first])
    return points[keep]


def double_downsample(points, voxel_size: float, alpha: float, beta: float):
    """Two-stage downsampling: a merge cloud and a registration cloud.

    The merge cloud (voxel alpha * voxel_size) later updates the map; the
    registration cloud re-downsamples it at beta * voxel_size, so each output
    is a subset of the previous stage.
    """
    merge = voxel_downsample(points, alpha * voxel_size)
    registration = voxel_downsample(merge, beta * voxel_size)
    return merge, registration


def range_filter(points, r_min: float, r_max: float) -> np.ndarray:
    """Keep points with r_min <= ||p|| <= r_max (both bounds inclusive).

    The lower bound discards returns off the platform itself; the upper
    bound drops long-range readings beyond the map horizon.
    """
    if not (0.0 <= r_min < r_max):
        raise ValueError(f"need 0 <= r_min < r_max, got r_min={r_min}, r_max={r_max}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    norms = np.sqrt(np.einsum("ij,ij->i", points, points))
    return points[(norms >= r_min) & (norms <= r_max)]
