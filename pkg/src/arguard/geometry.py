"""Rigid transforms, reference frames, camera models and raster helpers.

Conventions used across the package:

* Coordinates are right-handed, metric (meters). Pixels are float, origin at
  the top-left corner, pixel centers at integer coordinates.
* A ``RigidTransform`` labeled ``frame_from="A", frame_to="B"`` maps points
  expressed in frame A into frame B: ``p_B = R @ p_A + t``.
* Float rasters mark invalid cells with NaN; binary masks are uint8 arrays
  holding 0 or 255.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FRAME_NAMES = (
    "EE1", "EE2", "ECM", "L_CAM", "R_CAM", "Rec_L_CAM", "Rec_R_CAM", "BL",
)

ROTATION_TOL = 1e-9


class FrameError(ValueError):
    """Frame labels do not chain or a transform is missing."""


class GeometryError(ValueError):
    """Degenerate geometric input."""


def _check_rotation(r: np.ndarray) -> None:
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise GeometryError("rotation contains non-finite entries")
    if np.max(np.abs(r @ r.T - np.eye(3))) > ROTATION_TOL:
        raise GeometryError("rotation is not orthonormal within 1e-9")
    if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
        raise GeometryError("rotation determinant is not +1 within 1e-9")


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element with frame labels, mapping frame_from -> frame_to."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_from: str
    frame_to: str

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(r)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation contains non-finite entries")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(frame_from: str, frame_to: Optional[str] = None) -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3), frame_from,
                              frame_to if frame_to is not None else frame_from)

    @staticmethod
    def from_matrix(m: np.ndarray, frame_from: str, frame_to: str) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return RigidTransform(m[:3, :3], m[:3, 3], frame_from, frame_to)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one (3,) point or an (N, 3) array."""
        p = np.asarray(points, dtype=np.float64)
        if p.size == 0:
            return np.empty((0, 3))
        return p @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain a: X->Y with b: Y->Z into X->Z (b applied after a)."""
    if a.frame_to != b.frame_from:
        raise FrameError(
            f"cannot compose {a.frame_from}->{a.frame_to} with "
            f"{b.frame_from}->{b.frame_to}")
    return RigidTransform(b.rotation @ a.rotation,
                          b.rotation @ a.translation + b.translation,
                          a.frame_from, b.frame_to)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation, t.frame_to, t.frame_from)


def rotvec_to_matrix(rv: np.ndarray) -> np.ndarray:
    """Rodrigues rotation vector (axis * angle, radians) to 3x3 matrix."""
    rv = np.asarray(rv, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(rv)
    if theta < 1e-12:
        k = np.array([
            [0.0, -rv[2], rv[1]],
            [rv[2], 0.0, -rv[0]],
            [-rv[1], rv[0], 0.0],
        ])
        return np.eye(3) + k  # first-order term is exact at this scale
    axis = rv / theta
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    """Inverse of rotvec_to_matrix; returns axis * angle with angle in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover axis from R + I.
        a = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(a), 0.0))
        # Fix signs using the largest component.
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = a[:, i] / axis[i]
            axis = axis / np.linalg.norm(axis)
        return axis * theta
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return axis / (2.0 * np.sin(theta)) * theta


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle of a 3x3 rotation matrix, radians in [0, pi]."""
    return float(np.arccos(np.clip((np.trace(np.asarray(r)) - 1.0) / 2.0, -1.0, 1.0)))


class FrameGraph:
    """Store of labeled rigid transforms, queried by (from, to) with BFS chaining."""

    def __init__(self):
        self._edges: dict[tuple[str, str], RigidTransform] = {}

    def add(self, t: RigidTransform) -> None:
        self._edges[(t.frame_from, t.frame_to)] = t
        self._edges[(t.frame_to, t.frame_from)] = invert(t)

    def get(self, frame_from: str, frame_to: str) -> RigidTransform:
        if frame_from == frame_to:
            return RigidTransform.identity(frame_from)
        if (frame_from, frame_to) in self._edges:
            return self._edges[(frame_from, frame_to)]
        # BFS over frames for a composable chain.
        prev: dict[str, str] = {frame_from: ""}
        queue = [frame_from]
        while queue:
            node = queue.pop(0)
            for (a, b) in self._edges:
                if a == node and b not in prev:
                    prev[b] = a
                    if b == frame_to:
                        queue = []
                        break
                    queue.append(b)
        if frame_to not in prev:
            raise FrameError(f"no transform chain from {frame_from} to {frame_to}")
        # Walk back and compose forward.
        chain = [frame_to]
        while chain[-1] != frame_from:
            chain.append(prev[chain[-1]])
        chain.reverse()
        t = self._edges[(chain[0], chain[1])]
        for a, b in zip(chain[1:], chain[2:]):
            t = compose(t, self._edges[(a, b)])
        return t


@dataclass
class CameraIntrinsics:
    """Pinhole camera with 5-coefficient radial-tangential distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        self.distortion = np.asarray(self.distortion, dtype=np.float64).reshape(5)
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @property
    def k_matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


def distort_normalized(k: CameraIntrinsics, xy: np.ndarray) -> np.ndarray:
    """Apply the radial-tangential model to normalized coordinates (N, 2)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    k1, k2, p1, p2, k3 = k.distortion
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=1)


def project_points(k: CameraIntrinsics, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) camera-frame points to pixels.

    Returns (uv, valid): points with z <= 0 are culled (valid False, uv NaN).
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    xy = pts[:, :2] / zs[:, None]
    xyd = distort_normalized(k, xy)
    uv = np.empty_like(xyd)
    uv[:, 0] = k.fx * xyd[:, 0] + k.cx
    uv[:, 1] = k.fy * xyd[:, 1] + k.cy
    uv[~valid] = np.nan
    return uv, valid


def project_point(k: CameraIntrinsics, p: np.ndarray) -> np.ndarray:
    """Project a single 3D point; raises GeometryError behind the camera."""
    uv, valid = project_points(k, np.asarray(p).reshape(1, 3))
    if not valid[0]:
        raise GeometryError("point at or behind the camera plane")
    return uv[0]


def undistort_points(k: CameraIntrinsics, px: np.ndarray,
                     max_iters: int = 20, tol: float = 1e-12,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (N, 2) to undistorted normalized coordinates.

    Fixed-point iteration on the distortion model; returns (xy, converged).
    Non-converged points keep their last iterate and are flagged False.
    """
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(k.distortion)):
        raise GeometryError("distortion coefficients must be finite")
    xd = (px[:, 0] - k.cx) / k.fx
    yd = (px[:, 1] - k.cy) / k.fy
    x, y = xd.copy(), yd.copy()
    k1, k2, p1, p2, k3 = k.distortion
    converged = np.zeros(len(px), dtype=bool)
    for _ in range(max_iters):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        converged = (x_new - x) ** 2 + (y_new - y) ** 2 < tol * tol
        x, y = x_new, y_new
        if np.all(converged):
            break
    return np.stack([x, y], axis=1), converged


@dataclass
class RectifiedRig:
    """Rectified stereo geometry: shared intrinsics plus per-camera rotations."""

    k_rect: CameraIntrinsics
    r_left: RigidTransform   # L_CAM -> Rec_L_CAM, pure rotation
    r_right: RigidTransform  # R_CAM -> Rec_R_CAM, pure rotation
    focal_px: float
    baseline_m: float


@dataclass
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    t_right_from_left: RigidTransform  # L_CAM -> R_CAM
    baseline_m: float
    rectified: Optional[RectifiedRig] = None

    def __post_init__(self):
        b = float(np.linalg.norm(self.t_right_from_left.translation))
        if abs(b - self.baseline_m) > 1e-12:
            raise GeometryError(
                f"baseline {self.baseline_m} != |t_right_from_left| {b}")


def stereo_rectify(rig: StereoRig, focal_px: Optional[float] = None) -> StereoRig:
    """Compute rectifying rotations using the symmetric half-rotation split.

    Each camera is rotated halfway toward the other, then a common rotation
    aligns both x-axes with the baseline so corresponding points share a row.
    """
    t_rl = rig.t_right_from_left
    b = float(np.linalg.norm(t_rl.translation))
    if b < 1e-15:
        raise GeometryError("zero baseline cannot be rectified")
    om = matrix_to_rotvec(t_rl.rotation)
    r_half_l = rotvec_to_matrix(om / 2.0)    # pre-rotation of the left camera
    r_half_r = rotvec_to_matrix(-om / 2.0)   # pre-rotation of the right camera
    t_pre = r_half_r @ t_rl.translation
    e1 = -t_pre / np.linalg.norm(t_pre)      # new x axis: right camera at +x
    helper = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(helper, e1)) > 0.999:
        raise GeometryError("baseline nearly parallel to the optical axis")
    e2 = np.cross(helper, e1)
    e2 = e2 / np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    r_align = np.stack([e1, e2, e3], axis=0)
    r_l = RigidTransform(r_align @ r_half_l, np.zeros(3), "L_CAM", "Rec_L_CAM")
    r_r = RigidTransform(r_align @ r_half_r, np.zeros(3), "R_CAM", "Rec_R_CAM")
    f = float(focal_px) if focal_px is not None else (rig.left.fx + rig.left.fy) / 2.0
    k_rect = CameraIntrinsics(fx=f, fy=f, cx=rig.left.cx, cy=rig.left.cy,
                              width=rig.left.width, height=rig.left.height)
    return StereoRig(left=rig.left, right=rig.right,
                     t_right_from_left=rig.t_right_from_left,
                     baseline_m=rig.baseline_m,
                     rectified=RectifiedRig(k_rect=k_rect, r_left=r_l,
                                            r_right=r_r, focal_px=f,
                                            baseline_m=b))


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                     extrapolate: bool) -> np.ndarray:
    """Sample img at float positions. With extrapolate, border cells extend
    linearly (keeps ramps exact); otherwise callers mask out-of-range first."""
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    if not extrapolate:
        fx = np.clip(fx, 0.0, 1.0)
        fy = np.clip(fy, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def remap_image(img: np.ndarray, rig: StereoRig, side: str) -> np.ndarray:
    """Warp a raw camera image into its rectified frame (inverse mapping).

    Out-of-source pixels are NaN. Requires rectified fields on the rig.
    """
    if rig.rectified is None:
        raise GeometryError("rig has no rectified fields; call stereo_rectify")
    if side == "left":
        k_src, r_rect = rig.left, rig.rectified.r_left
    elif side == "right":
        k_src, r_rect = rig.right, rig.rectified.r_right
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    k_rect = rig.rectified.k_rect
    h, w = img.shape[:2]
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    rays = np.stack([(us - k_rect.cx) / k_rect.fx,
                     (vs - k_rect.cy) / k_rect.fy,
                     np.ones_like(us)], axis=-1)
    rays = rays.reshape(-1, 3) @ r_rect.rotation  # == R^T applied per ray
    src_uv, valid = project_points(k_src, rays)
    xs = src_uv[:, 0].reshape(h, w)
    ys = src_uv[:, 1].reshape(h, w)
    inside = (np.isfinite(xs) & np.isfinite(ys)
              & (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1))
    xs_safe = np.where(inside, xs, 0.0)
    ys_safe = np.where(inside, ys, 0.0)
    out = _bilinear_sample(img.astype(np.float64), xs_safe, ys_safe,
                           extrapolate=False)
    if out.ndim == 3:
        out[~inside] = np.nan
    else:
        out = np.where(inside, out, np.nan)
    return out


def resize_raster(img: np.ndarray, new_w: int, new_h: int,
                  kind: str = "values") -> np.ndarray:
    """Resample a raster to new dimensions.

    kind: "values" bilinear, "mask" nearest, "disparity" bilinear with values
    scaled by new_w/old_w (pixel offsets shrink with the width).
    """
    if new_w <= 0 or new_h <= 0:
        raise ValueError("new dimensions must be positive")
    h, w = img.shape[:2]
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    if kind == "mask":
        ix = np.clip(np.rint(gx).astype(np.int64), 0, w - 1)
        iy = np.clip(np.rint(gy).astype(np.int64), 0, h - 1)
        return img[iy, ix]
    out = _bilinear_sample(img.astype(np.float64), gx, gy, extrapolate=True)
    if kind == "disparity":
        out = out * (new_w / w)
    elif kind != "values":
        raise ValueError(f"unknown kind {kind!r}")
    return out


def scale_intrinsics(k: CameraIntrinsics, sx: float, sy: float) -> CameraIntrinsics:
    """Rescale intrinsics for a resized image (same fixed factor as the resize)."""
    return CameraIntrinsics(fx=k.fx * sx, fy=k.fy * sy,
                            cx=(k.cx + 0.5) * sx - 0.5,
                            cy=(k.cy + 0.5) * sy - 0.5,
                            width=int(round(k.width * sx)),
                            height=int(round(k.height * sy)),
                            distortion=k.distortion.copy())


@dataclass
class PointCloud:
    """Points (N, 3) in a labeled frame, with optional normals and the pixel
    each point was reconstructed from."""

    points: np.ndarray
    frame: str
    normals: Optional[np.ndarray] = None
    pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise GeometryError("normals count differs from point count")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels).reshape(-1, 2)
            if len(self.pixels) != len(self.points):
                raise GeometryError("pixel provenance count differs from point count")

    def __len__(self) -> int:
        return len(self.points)


def transform_points(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map a cloud through t; the cloud frame must match t.frame_from."""
    if cloud.frame != t.frame_from:
        raise FrameError(f"cloud is in {cloud.frame}, transform starts at {t.frame_from}")
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ t.rotation.T
    return PointCloud(points=t.apply(cloud.points), frame=t.frame_to,
                      normals=normals, pixels=cloud.pixels)


@dataclass
class TriangleMesh:
    """Indexed triangle mesh in a labeled frame."""

    vertices: np.ndarray
    faces: np.ndarray
    frame: str = "BL"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise GeometryError("face index out of range")

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norms = np.linalg.norm(n, axis=1)
        norms[norms == 0] = 1.0
        return n / norms[:, None]

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)


def mask_fraction_valid(raster: np.ndarray) -> float:
    return float(np.mean(np.isfinite(raster)))
