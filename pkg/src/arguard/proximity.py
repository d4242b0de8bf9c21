"""Instrument-to-target minimum distance detection and the safety state.

Instruments are modeled as cylinders of fixed radius spanning the entry
pivot (RCM) to the end effector, sampled into surface point clouds. The
reconstructed target cloud is indexed by a kd-tree; per-frame minima drive
two gauges (clamped to the 6 cm safe range, 3 cm marks the risk zone) and a
banded warning color for the overlaid model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import FrameError, PointCloud, RigidTransform

SAFE_LIMIT_M = 0.06    # gauge full scale
RISK_LIMIT_M = 0.03    # risk-zone boundary
PINK_LIMIT_M = 0.01    # close-contact warning
RED_LIMIT_M = 0.005    # imminent-collision warning

COLOR_RED = (210, 35, 35)
COLOR_PINK = (240, 120, 170)
COLOR_AMBER = (250, 180, 40)
COLOR_NEUTRAL = (150, 170, 210)


class ProximityError(ValueError):
    pass


@dataclass
class InstrumentModel:
    """Cylinder of the instrument shaft from the RCM pivot to the tip."""

    ee: np.ndarray
    rcm: np.ndarray
    radius_m: float = 0.004

    def __post_init__(self):
        self.ee = np.asarray(self.ee, dtype=np.float64).reshape(3)
        self.rcm = np.asarray(self.rcm, dtype=np.float64).reshape(3)
        if self.radius_m <= 0:
            raise ProximityError("instrument radius must be positive")
        if np.linalg.norm(self.ee - self.rcm) <= 0:
            raise ProximityError("instrument axis is degenerate (ee == rcm)")


def _axis_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def sample_instrument_cloud(inst: InstrumentModel, axial_step_m: float = 0.002,
                            ring_count: int = 16, frame: str = "ECM") -> PointCloud:
    """Surface samples of the instrument cylinder.

    Shaft rings every axial_step from the RCM to the tip (a ring exactly at
    the tip included), plus a sampled end-cap disc at the tip: concentric
    rings stepped inward by axial_step with proportionally fewer points,
    and the tip center itself.
    """
    if axial_step_m <= 0:
        raise ProximityError("axial step must be positive")
    if ring_count < 3:
        raise ProximityError("ring count must be at least 3")
    axis = inst.ee - inst.rcm
    length = float(np.linalg.norm(axis))
    axis = axis / length
    u, v = _axis_basis(axis)
    stations = [i * axial_step_m for i in range(int(np.floor(length / axial_step_m)) + 1)]
    if stations[-1] < length:
        stations.append(length)
    angles = 2.0 * np.pi * np.arange(ring_count) / ring_count
    ring = np.outer(np.cos(angles), u) + np.outer(np.sin(angles), v)
    pts = [inst.rcm + s * axis + inst.radius_m * ring for s in stations]
    # End cap at the tip: shrink the ring inward to the center.
    rho = inst.radius_m - axial_step_m
    while rho > 0:
        count = max(3, int(round(ring_count * rho / inst.radius_m)))
        cap_angles = 2.0 * np.pi * np.arange(count) / count
        cap_ring = np.outer(np.cos(cap_angles), u) + np.outer(np.sin(cap_angles), v)
        pts.append(inst.ee + rho * cap_ring)
        rho -= axial_step_m
    pts.append(inst.ee[None, :])
    return PointCloud(points=np.concatenate(pts, axis=0), frame=frame)


class SpatialIndex:
    """Exact nearest-neighbor index over a point cloud (kd-tree, leaf 16)."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ProximityError("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points, leafsize=16)

    def nearest(self, queries: np.ndarray, k: int = 1) -> np.ndarray:
        """Indices of the k nearest stored points per query row."""
        _, idx = self._tree.query(np.asarray(queries, dtype=np.float64), k=k)
        return idx


def build_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud)


@dataclass
class MinDistanceResult:
    distance_m: float
    target_point: np.ndarray
    instrument_point: np.ndarray


def min_distance(index: SpatialIndex, instrument_cloud: PointCloud) -> MinDistanceResult:
    """Minimum distance between the indexed target cloud and the instrument
    samples, exact with respect to the two point sets."""
    if len(instrument_cloud) == 0:
        raise ProximityError("instrument cloud is empty")
    q = instrument_cloud.points
    k = min(2, len(index.cloud))
    idx = index.nearest(q, k=k)
    if idx.ndim == 1:
        idx = idx[:, None]
    # Recompute candidate distances in a fixed arithmetic order so results
    # match a brute-force scan bitwise.
    cand = index.cloud.points[idx]                    # (M, k, 3)
    diff = cand - q[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    flat = int(np.argmin(d2))
    mi, ki = divmod(flat, d2.shape[1])
    return MinDistanceResult(distance_m=float(np.sqrt(d2[mi, ki])),
                             target_point=cand[mi, ki].copy(),
                             instrument_point=q[mi].copy())


def align_psm1(points: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Map raw first-arm Cartesian data into the reference arm frame chain."""
    if (t.frame_from, t.frame_to) != ("EE1", "EE2"):
        raise FrameError(f"expected an EE1->EE2 transform, got "
                         f"{t.frame_from}->{t.frame_to}")
    return t.apply(points)


@dataclass
class ProximityReport:
    frame_index: int
    d_left_m: Optional[float]
    d_right_m: Optional[float]
    left_pair: Optional[tuple[np.ndarray, np.ndarray]] = None
    right_pair: Optional[tuple[np.ndarray, np.ndarray]] = None


def severity_band(d: float) -> int:
    """0 neutral, 1 risk (amber), 2 pink, 3 red; boundaries 0.03/0.01/0.005 m."""
    if d < RED_LIMIT_M:
        return 3
    if d < PINK_LIMIT_M:
        return 2
    if d < RISK_LIMIT_M:
        return 1
    return 0


def color_for_distance(d: float) -> tuple[int, int, int]:
    """Banded warning color; the risk band fades linearly from amber into the
    neutral model color as the distance approaches 3 cm."""
    band = severity_band(d)
    if band == 3:
        return COLOR_RED
    if band == 2:
        return COLOR_PINK
    if band == 1:
        frac = (d - PINK_LIMIT_M) / (RISK_LIMIT_M - PINK_LIMIT_M)
        return tuple(int(round(a + (n - a) * frac))
                     for a, n in zip(COLOR_AMBER, COLOR_NEUTRAL))
    return COLOR_NEUTRAL


@dataclass
class GaugeState:
    left_gauge_m: float
    right_gauge_m: float
    left_zone: str
    right_zone: str
    model_color: tuple[int, int, int]


def gauge_state(d_left: float, d_right: float) -> GaugeState:
    """Clamp per-arm distances to the gauge range and derive the zone labels
    and shared model color (driven by the smaller distance)."""
    if d_left < 0 or d_right < 0:
        raise ProximityError("distances must be non-negative")
    return GaugeState(
        left_gauge_m=min(d_left, SAFE_LIMIT_M),
        right_gauge_m=min(d_right, SAFE_LIMIT_M),
        left_zone="RISK" if d_left < RISK_LIMIT_M else "SAFE",
        right_zone="RISK" if d_right < RISK_LIMIT_M else "SAFE",
        model_color=color_for_distance(min(d_left, d_right)),
    )
