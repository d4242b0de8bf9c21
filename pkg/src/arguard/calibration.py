"""Camera, hand-hand and hand-eye calibration with their error metrics.

Camera intrinsics come from the planar-target closed form (absolute-conic
constraints over per-view homographies) followed by a damped least-squares
refinement of focal lengths, principal point and the two leading radial
coefficients. Hand-hand alignment is the closed-form quaternion solution to
the corresponding-point-sets problem. Hand-eye is a PnP solve wrapped in a
seeded RANSAC loop.

Error metrics: camera and hand-eye errors are RMS pixel distances between
reprojected and observed points; hand-hand is the RMS metric distance between
one arm's points and the other arm's points mapped through the solved
transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (CameraIntrinsics, GeometryError, RigidTransform,
                       matrix_to_rotvec, project_points, rotvec_to_matrix,
                       undistort_points)


class CalibrationError(ValueError):
    """Degenerate or insufficient calibration input."""


@dataclass
class ChessboardSpec:
    rows: int = 9   # inner corners along y
    cols: int = 6   # inner corners along x
    square_size_m: float = 0.01

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise CalibrationError("chessboard needs at least 3x3 inner corners")
        if self.square_size_m <= 0:
            raise CalibrationError("square size must be positive")


@dataclass
class PlanarView:
    """One observation of the planar target: board-plane points (z = 0) and
    the pixels they were detected at."""

    object_points: np.ndarray
    image_points: np.ndarray

    def __post_init__(self):
        self.object_points = np.asarray(self.object_points, dtype=np.float64).reshape(-1, 3)
        self.image_points = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        if len(self.object_points) != len(self.image_points):
            raise CalibrationError("object/image point counts differ")
        if len(self.object_points) < 4:
            raise CalibrationError("a planar view needs at least 4 points")


@dataclass
class PointPairSet:
    """Corresponding 3D points for hand-hand alignment.

    ``left`` holds the points in the target arm frame (EE2), ``right`` the
    same physical points read in the source arm frame (EE1); the solved
    transform maps right into left.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64).reshape(-1, 3)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(-1, 3)
        if len(self.left) != len(self.right):
            raise CalibrationError("left/right point counts differ")
        for name, pts in (("left", self.left), ("right", self.right)):
            centered = pts - pts.mean(axis=0)
            eigs = np.linalg.eigvalsh(centered.T @ centered / max(len(pts), 1))
            if eigs[0] <= 1e-12:
                raise CalibrationError(f"{name} points are degenerate (flat or collinear)")

    def __len__(self) -> int:
        return len(self.left)


@dataclass
class HandEyeSet:
    """End-effector 3D positions (reference frame, tip-compensated) and the
    pixels the tip was detected at in the left image."""

    ee_points: np.ndarray
    image_points: np.ndarray

    def __post_init__(self):
        self.ee_points = np.asarray(self.ee_points, dtype=np.float64).reshape(-1, 3)
        self.image_points = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        if len(self.ee_points) != len(self.image_points):
            raise CalibrationError("3D/2D point counts differ")
        if len(self.ee_points) < 6:
            raise CalibrationError("hand-eye needs at least 6 points")

    def __len__(self) -> int:
        return len(self.ee_points)


def chessboard_model(spec: ChessboardSpec) -> np.ndarray:
    """Inner-corner grid on the z=0 plane, row-major, x along columns."""
    s = spec.square_size_m
    pts = [(c * s, r * s, 0.0) for r in range(spec.rows) for c in range(spec.cols)]
    return np.asarray(pts, dtype=np.float64)


# ---------------------------------------------------------------------------
# Homographies and the planar-target closed form


def _normalize_2d(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-15:
        raise CalibrationError("degenerate point configuration (coincident points)")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * centroid[0]],
                  [0, s, -s * centroid[1]],
                  [0, 0, 1.0]])
    homog = np.column_stack([pts, np.ones(len(pts))])
    return (homog @ t.T)[:, :2], t


def estimate_homography(obj: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping plane coordinates to pixels."""
    obj = np.asarray(obj, dtype=np.float64)
    if obj.ndim == 2 and obj.shape[1] == 3:
        obj = obj[:, :2]
    img = np.asarray(img, dtype=np.float64).reshape(-1, 2)
    if len(obj) != len(img):
        raise CalibrationError("correspondence counts differ")
    if len(obj) < 4:
        raise CalibrationError("homography needs at least 4 correspondences")
    on, t_obj = _normalize_2d(obj)
    im, t_img = _normalize_2d(img)
    a = np.zeros((2 * len(obj), 9))
    x, y = on[:, 0], on[:, 1]
    u, v = im[:, 0], im[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10 * max(sv[0], 1.0):
        raise CalibrationError("degenerate configuration: design matrix is rank deficient")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_img) @ h @ t_obj
    return h / h[2, 2]


def _conic_row(h: np.ndarray, i: int, j: int) -> np.ndarray:
    hi, hj = h[:, i], h[:, j]
    return np.array([
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])


def zhang_intrinsics(homographies: Sequence[np.ndarray],
                     width: int = 640, height: int = 360) -> CameraIntrinsics:
    """Closed-form intrinsics from >= 3 plane-to-image homographies."""
    if len(homographies) < 3:
        raise CalibrationError("need at least 3 views with distinct orientations")
    rows = []
    for h in homographies:
        rows.append(_conic_row(h, 0, 1))
        rows.append(_conic_row(h, 0, 0) - _conic_row(h, 1, 1))
    v = np.asarray(rows)
    _, sv, vt = np.linalg.svd(v)
    b = vt[-1]
    if b[0] < 0:
        b = -b
    b11, b12, b22, b13, b23, b33 = b
    denom = b11 * b22 - b12 * b12
    if abs(denom) < 1e-18 or b11 <= 0:
        raise CalibrationError("ill-conditioned conic matrix")
    v0 = (b12 * b13 - b11 * b23) / denom
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam <= 0 or lam / b11 <= 0:
        raise CalibrationError("ill-conditioned conic matrix (negative scale)")
    alpha = np.sqrt(lam / b11)
    beta_sq = lam * b11 / denom
    if beta_sq <= 0:
        raise CalibrationError("ill-conditioned conic matrix (negative fy^2)")
    beta = np.sqrt(beta_sq)
    gamma = -b12 * alpha * alpha * beta / lam
    u0 = gamma * v0 / beta - b13 * alpha * alpha / lam
    if not (alpha > 0 and beta > 0):
        raise CalibrationError("recovered focal lengths are not positive")
    return CameraIntrinsics(fx=float(alpha), fy=float(beta),
                            cx=float(u0), cy=float(v0),
                            width=width, height=height)


def pose_from_homography(h: np.ndarray, k: CameraIntrinsics) -> RigidTransform:
    """Decompose a plane-to-pixel homography into the board pose (board frame
    to camera frame), target constrained in front of the camera."""
    kinv = np.linalg.inv(k.k_matrix)
    a = kinv @ h
    lam = 1.0 / np.linalg.norm(a[:, 0])
    if a[2, 2] * lam < 0:  # choose the sign putting the target at z > 0
        lam = -lam
    r1 = lam * a[:, 0]
    r2 = lam * a[:, 1]
    t = lam * a[:, 2]
    r3 = np.cross(r1, r2)
    r_approx = np.column_stack([r1, r2, r3])
    u, _, vt = np.linalg.svd(r_approx)
    r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(r, t, "board", "cam")


# ---------------------------------------------------------------------------
# Reprojection machinery shared by refinement, PnP and the error metrics


def _reproject(k: CameraIntrinsics, pose: RigidTransform, obj: np.ndarray) -> np.ndarray:
    uv, _ = project_points(k, pose.apply(obj))
    return uv


def _residuals(k: CameraIntrinsics, pose: RigidTransform, obj: np.ndarray,
               img: np.ndarray) -> np.ndarray:
    r = (_reproject(k, pose, obj) - img).ravel()
    # Culled (behind-camera) points yield NaN; a huge finite residual keeps
    # the solvers well-defined and makes such poses lose.
    return np.nan_to_num(r, nan=1e6)


@dataclass
class RefinementTrace:
    """Accepted-step cost history of an iterative refinement, for monotonicity
    checks."""

    costs: list[float] = field(default_factory=list)


def refine_calibration(init: CameraIntrinsics, views: Sequence[PlanarView],
                       max_iters: int = 60,
                       trace: Optional[RefinementTrace] = None) -> CameraIntrinsics:
    """Damped least-squares refinement of (fx, fy, cx, cy, k1, k2) plus the
    per-view poses. Tangential and k3 coefficients pass through unchanged."""
    if not views:
        raise CalibrationError("no views to refine on")
    p_fixed = init.distortion[2:5].copy()

    def unpack(theta):
        k = CameraIntrinsics(fx=theta[0], fy=theta[1], cx=theta[2], cy=theta[3],
                             width=init.width, height=init.height,
                             distortion=np.concatenate([theta[4:6], p_fixed]))
        poses = []
        for i in range(len(views)):
            base = 6 + 6 * i
            poses.append(RigidTransform(rotvec_to_matrix(theta[base:base + 3]),
                                        theta[base + 3:base + 6], "board", "cam"))
        return k, poses

    n_residuals = 2 * sum(len(v.object_points) for v in views)

    def residuals(theta):
        try:
            k, poses = unpack(theta)
        except GeometryError:
            # Trial step left the valid intrinsics domain; reject it.
            return np.full(n_residuals, 1e9)
        out = []
        for view, pose in zip(views, poses):
            out.append(_residuals(k, pose, view.object_points, view.image_points))
        return np.concatenate(out)

    theta = np.empty(6 + 6 * len(views))
    theta[:6] = [init.fx, init.fy, init.cx, init.cy,
                 init.distortion[0], init.distortion[1]]
    for i, view in enumerate(views):
        h = estimate_homography(view.object_points, view.image_points)
        pose = pose_from_homography(h, init)
        theta[6 + 6 * i:9 + 6 * i] = matrix_to_rotvec(pose.rotation)
        theta[9 + 6 * i:12 + 6 * i] = pose.translation

    r = residuals(theta)
    cost = float(r @ r)
    if trace is not None:
        trace.costs.append(cost)
    initial_cost = cost
    lam = 1e-3
    rejected_streak = 0
    for _ in range(max_iters):
        j = _numeric_jacobian(residuals, theta, r)
        jtj = j.T @ j
        jtr = j.T @ r
        improved = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + delta
            rt = residuals(trial)
            ct = float(rt @ rt)
            if ct < cost:
                theta, r, cost = trial, rt, ct
                lam = max(lam / 3.0, 1e-12)
                improved = True
                if trace is not None:
                    trace.costs.append(cost)
                break
            lam *= 10
        if not improved:
            rejected_streak += 1
            if rejected_streak >= 5:
                break
        else:
            rejected_streak = 0
        if len(r) and cost / len(r) < 1e-24:
            break
    if cost > initial_cost:
        raise CalibrationError("refinement diverged")
    k, _ = unpack(theta)
    return k


def _numeric_jacobian(fn, theta: np.ndarray, r0: np.ndarray,
                      eps: float = 1e-7) -> np.ndarray:
    j = np.empty((len(r0), len(theta)))
    for i in range(len(theta)):
        step = eps * max(1.0, abs(theta[i]))
        bumped = theta.copy()
        bumped[i] += step
        j[:, i] = (fn(bumped) - r0) / step
    return j


def camera_reprojection_error(views: Sequence[PlanarView], k: CameraIntrinsics,
                              poses: Optional[Sequence[RigidTransform]] = None,
                              ) -> float:
    """RMS pixel distance between reprojected and detected target corners.

    Poses are re-estimated from each view when not supplied.
    """
    if poses is None:
        poses = [solve_pnp(v.object_points, v.image_points, k) for v in views]
    sq = []
    for view, pose in zip(views, poses):
        d = _reproject(k, pose, view.object_points) - view.image_points
        sq.append(np.sum(d * d, axis=1))
    sq = np.concatenate(sq)
    return float(np.sqrt(np.mean(sq)))


# ---------------------------------------------------------------------------
# Corresponding point sets (hand-hand)


def horn_align(p: np.ndarray, q: np.ndarray,
               frame_from: str = "EE1", frame_to: str = "EE2") -> RigidTransform:
    """Closed-form quaternion solution minimizing sum ||q - (R p + t)||^2."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) != len(q):
        raise CalibrationError("correspondence counts differ")
    if len(p) < 3:
        raise CalibrationError("need at least 3 point pairs")
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    for pts in (pc, qc):
        eigs = np.linalg.eigvalsh(pts.T @ pts / len(pts))
        if eigs[1] <= 1e-12:
            raise CalibrationError("collinear points cannot fix a rotation")
    s = pc.T @ qc
    n = np.array([
        [s[0, 0] + s[1, 1] + s[2, 2], s[1, 2] - s[2, 1], s[2, 0] - s[0, 2], s[0, 1] - s[1, 0]],
        [s[1, 2] - s[2, 1], s[0, 0] - s[1, 1] - s[2, 2], s[0, 1] + s[1, 0], s[2, 0] + s[0, 2]],
        [s[2, 0] - s[0, 2], s[0, 1] + s[1, 0], -s[0, 0] + s[1, 1] - s[2, 2], s[1, 2] + s[2, 1]],
        [s[0, 1] - s[1, 0], s[2, 0] + s[0, 2], s[1, 2] + s[2, 1], -s[0, 0] - s[1, 1] + s[2, 2]],
    ])
    eigvals, eigvecs = np.linalg.eigh(n)
    w, x, y, z = eigvecs[:, np.argmax(eigvals)]
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    # Re-orthonormalize to keep the 1e-9 transform invariant under float noise.
    u, _, vt = np.linalg.svd(r)
    r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    t = q.mean(axis=0) - r @ p.mean(axis=0)
    return RigidTransform(r, t, frame_from, frame_to)


def hand_hand_error(pairs: PointPairSet, t: RigidTransform) -> float:
    """RMS metric distance between left points and transformed right points."""
    d = pairs.left - t.apply(pairs.right)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


# ---------------------------------------------------------------------------
# PnP and its RANSAC wrapper (hand-eye)


def _is_coplanar(obj: np.ndarray, rel_tol: float = 1e-2) -> bool:
    """Near-coplanar point sets must take the homography route: the 12-dof
    DLT degenerates when the plane thickness is small next to the spread,
    so the test is relative, not absolute."""
    centered = obj - obj.mean(axis=0)
    eigs = np.linalg.eigvalsh(centered.T @ centered / len(obj))
    return bool(eigs[0] <= max(rel_tol * eigs[2], 1e-12))


def _plane_basis(obj: np.ndarray) -> tuple[np.ndarray, RigidTransform]:
    """2D coordinates of coplanar points plus the plane->object transform."""
    centroid = obj.mean(axis=0)
    centered = obj - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    ex, ey = vt[0], vt[1]
    ez = np.cross(ex, ey)
    r = np.column_stack([ex, ey, ez])
    plane_to_obj = RigidTransform(r, centroid, "plane", "board")
    coords = centered @ np.column_stack([ex, ey])
    return coords, plane_to_obj


def solve_pnp(obj: np.ndarray, img: np.ndarray, k: CameraIntrinsics,
              refine: bool = True) -> RigidTransform:
    """Camera pose (object frame to camera frame) from 3D-2D correspondences.

    Coplanar targets go through homography decomposition (>= 4 points),
    general targets through a 12-parameter DLT (>= 6 points); both are
    polished by Gauss-Newton on the reprojection error with step halving.
    """
    obj = np.asarray(obj, dtype=np.float64).reshape(-1, 3)
    img = np.asarray(img, dtype=np.float64).reshape(-1, 2)
    if len(obj) != len(img):
        raise CalibrationError("correspondence counts differ")
    norm_xy, _ = undistort_points(k, img)
    if _is_coplanar(obj):
        if len(obj) < 4:
            raise CalibrationError("planar PnP needs at least 4 points")
        coords, plane_to_obj = _plane_basis(obj)
        h = estimate_homography(coords, norm_xy)
        pose_plane = pose_from_homography(h, CameraIntrinsics(
            fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2))
        pose = RigidTransform((pose_plane.rotation @ plane_to_obj.rotation.T),
                              pose_plane.translation
                              - pose_plane.rotation @ plane_to_obj.rotation.T
                              @ plane_to_obj.translation,
                              "board", "cam")
    else:
        if len(obj) < 6:
            raise CalibrationError("general PnP needs at least 6 points")
        pose = _dlt_pose(obj, norm_xy)
    if refine:
        pose = _refine_pose(pose, obj, img, k)
    return pose


def _dlt_pose(obj: np.ndarray, norm_xy: np.ndarray) -> RigidTransform:
    n = len(obj)
    a = np.zeros((2 * n, 12))
    x, y = norm_xy[:, 0], norm_xy[:, 1]
    a[0::2, 0:3] = obj
    a[0::2, 3] = 1.0
    a[0::2, 8:11] = -obj * x[:, None]
    a[0::2, 11] = -x
    a[1::2, 4:7] = obj
    a[1::2, 7] = 1.0
    a[1::2, 8:11] = -obj * y[:, None]
    a[1::2, 11] = -y
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-12 * max(sv[0], 1.0):
        raise CalibrationError("degenerate configuration for DLT pose")
    p = vt[-1].reshape(3, 4)
    r_part = p[:, :3]
    scale = np.linalg.det(r_part)
    if scale < 0:
        p = -p
        r_part = p[:, :3]
    u, s, vt2 = np.linalg.svd(r_part)
    r = u @ vt2
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt2
    t = p[:, 3] / s.mean()
    return RigidTransform(r, t, "board", "cam")


def _refine_pose(pose: RigidTransform, obj: np.ndarray, img: np.ndarray,
                 k: CameraIntrinsics, max_iters: int = 50) -> RigidTransform:
    theta = np.concatenate([matrix_to_rotvec(pose.rotation), pose.translation])

    def residuals(th):
        p = RigidTransform(rotvec_to_matrix(th[:3]), th[3:6],
                           pose.frame_from, pose.frame_to)
        return _residuals(k, p, obj, img)

    r = residuals(theta)
    cost = float(r @ r)
    for _ in range(max_iters):
        j = _numeric_jacobian(residuals, theta, r)
        try:
            delta = np.linalg.solve(j.T @ j + 1e-12 * np.eye(6), -(j.T @ r))
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(delta)):
            break
        step = 1.0
        improved = False
        for _ in range(8):  # step-halving line search
            trial = theta + step * delta
            rt = residuals(trial)
            ct = float(rt @ rt)
            if ct < cost:
                theta, r, cost = trial, rt, ct
                improved = True
                break
            step /= 2.0
        if not improved or cost < 1e-28:
            break
    return RigidTransform(rotvec_to_matrix(theta[:3]), theta[3:6],
                          pose.frame_from, pose.frame_to)


@dataclass
class RansacParams:
    iters: int = 1000
    inlier_px: float = 2.0
    min_inlier_frac: float = 0.5
    confidence: float = 0.999
    seed: int = 0


def pnp_ransac(obj: np.ndarray, img: np.ndarray, k: CameraIntrinsics,
               params: Optional[RansacParams] = None,
               ) -> tuple[RigidTransform, np.ndarray]:
    """Consensus PnP: returns the pose refined on all inliers plus the inlier
    indices (reprojection error below params.inlier_px under the final pose)."""
    params = params or RansacParams()
    obj = np.asarray(obj, dtype=np.float64).reshape(-1, 3)
    img = np.asarray(img, dtype=np.float64).reshape(-1, 2)
    n = len(obj)
    sample_size = 4 if _is_coplanar(obj) else 6
    if n < sample_size:
        raise CalibrationError(f"need at least {sample_size} points")
    min_inliers = max(sample_size, int(np.ceil(params.min_inlier_frac * n)))
    rng = np.random.default_rng(params.seed)
    best_count = 0
    best_inliers: Optional[np.ndarray] = None
    needed = params.iters
    it = 0
    while it < min(needed, params.iters):
        it += 1
        idx = rng.choice(n, size=sample_size, replace=False)
        try:
            pose = solve_pnp(obj[idx], img[idx], k, refine=True)
        except (CalibrationError, GeometryError, np.linalg.LinAlgError):
            continue
        err = _reproject(k, pose, obj) - img
        dist = np.sqrt(np.sum(err * err, axis=1))
        inliers = np.flatnonzero(np.nan_to_num(dist, nan=np.inf) < params.inlier_px)
        if len(inliers) > best_count:
            best_count = len(inliers)
            best_inliers = inliers
            w = best_count / n
            if 0 < w < 1:
                denom = np.log1p(-min(w ** sample_size, 1 - 1e-12))
                needed = int(np.ceil(np.log(1 - params.confidence) / denom))
            elif w >= 1:
                break
    if best_inliers is None or best_count < min_inliers:
        raise CalibrationError(
            f"no consensus: best support {best_count} of {n} "
            f"(minimum {min_inliers})")
    pose = solve_pnp(obj[best_inliers], img[best_inliers], k, refine=True)
    err = _reproject(k, pose, obj) - img
    dist = np.sqrt(np.sum(err * err, axis=1))
    final_inliers = np.flatnonzero(np.nan_to_num(dist, nan=np.inf) < params.inlier_px)
    return pose, final_inliers


def hand_eye_error(hset: HandEyeSet, t: RigidTransform, k: CameraIntrinsics) -> float:
    """RMS pixel distance between projected end-effector points and the
    pixels they were observed at."""
    uv, _ = project_points(k, t.apply(hset.ee_points))
    d = uv - hset.image_points
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


# ---------------------------------------------------------------------------
# Full calibration sessions


@dataclass
class CalibrationSession:
    """Everything one system calibration consumes: board views for the
    camera, shared touch points for hand-hand, pointed corners for hand-eye.
    True values ride along for synthetic sessions only."""

    views: list[PlanarView]
    hand_pairs: PointPairSet
    hand_eye: HandEyeSet
    width: int
    height: int
    true_intrinsics: Optional[CameraIntrinsics] = None
    true_t_ee1_ee2: Optional[RigidTransform] = None
    true_t_ecm_lcam: Optional[RigidTransform] = None


@dataclass
class CalibrationOutcome:
    intrinsics: CameraIntrinsics
    t_ee1_ee2: RigidTransform
    t_ecm_lcam: RigidTransform
    e_cam_px: float
    e_hand_hand_m: float
    e_hand_eye_px: float

    def error_report(self) -> dict:
        return {
            "camera_calibration": {"metric": "E_cam", "value": self.e_cam_px,
                                   "unit": "pixels"},
            "hand_hand_calibration": {"metric": "E_hand_hand",
                                      "value": self.e_hand_hand_m * 100.0,
                                      "unit": "cm"},
            "hand_eye_calibration": {"metric": "E_hand_eye",
                                     "value": self.e_hand_eye_px,
                                     "unit": "pixels"},
        }


def run_calibration(session: CalibrationSession,
                    hand_eye_inlier_px: float = 6.0) -> CalibrationOutcome:
    """Solve all three calibrations and compute their error metrics.

    The hand-eye consensus threshold defaults wider than the generic 2 px
    because kinematic noise alone produces multi-pixel residuals; the loop
    exists to shed gross outliers, not honest noise.
    """
    hs = [estimate_homography(v.object_points, v.image_points)
          for v in session.views]
    init = zhang_intrinsics(hs, width=session.width, height=session.height)
    intrinsics = refine_calibration(init, session.views)
    e_cam = camera_reprojection_error(session.views, intrinsics)

    t_hh = horn_align(session.hand_pairs.right, session.hand_pairs.left,
                      "EE1", "EE2")
    e_hh = hand_hand_error(session.hand_pairs, t_hh)

    pose, _ = pnp_ransac(session.hand_eye.ee_points,
                         session.hand_eye.image_points, intrinsics,
                         RansacParams(inlier_px=hand_eye_inlier_px))
    t_he = RigidTransform(pose.rotation, pose.translation, "ECM", "L_CAM")
    e_he = hand_eye_error(session.hand_eye, t_he, intrinsics)
    return CalibrationOutcome(intrinsics=intrinsics, t_ee1_ee2=t_hh,
                              t_ecm_lcam=t_he, e_cam_px=e_cam,
                              e_hand_hand_m=e_hh, e_hand_eye_px=e_he)
