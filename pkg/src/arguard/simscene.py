"""Synthetic scene generation standing in for robot, phantom and networks.

A tubular target mesh, removable nodes and a backdrop are placed in the
reference frame and rendered with a z-buffer triangle rasterizer at the
rectified rig resolution, yielding ground-truth disparity, depth, target
mask and shaded images. Scripted instrument trajectories (fixed pivot per
arm) and seeded noise models complete the stand-in for live hardware.

Rasterization samples at integer pixel centers with a top-left fill rule
and no anti-aliasing, so mask semantics are exact; inverse depth is
interpolated linearly in screen space, which is exact for planar triangles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats
from .calibration import (CalibrationSession, ChessboardSpec, HandEyeSet,
                          PlanarView, PointPairSet, chessboard_model)
from .geometry import (CameraIntrinsics, RigidTransform, StereoRig,
                       TriangleMesh, compose, invert, project_points,
                       rotvec_to_matrix, stereo_rectify)
from .proximity import InstrumentModel
from .raster import front_face_mask, rasterize_triangles
from .reconstruction import disparity_to_depth

BACKGROUND_SHADE = 8


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Mesh construction


def _catmull_rom(control: np.ndarray, samples: int) -> np.ndarray:
    """Uniform Catmull-Rom interpolation through the control points."""
    control = np.asarray(control, dtype=np.float64)
    n = len(control)
    if n < 2:
        raise SceneError("need at least 2 control points")
    padded = np.vstack([2 * control[0] - control[1], control,
                        2 * control[-1] - control[-2]])
    ts = np.linspace(0.0, n - 1.0, samples)
    seg = np.clip(ts.astype(int), 0, n - 2)
    s = ts - seg
    p0 = padded[seg]
    p1 = padded[seg + 1]
    p2 = padded[seg + 2]
    p3 = padded[seg + 3]
    s = s[:, None]
    return 0.5 * ((2 * p1) + (-p0 + p2) * s
                  + (2 * p0 - 5 * p1 + 4 * p2 - p3) * s ** 2
                  + (-p0 + 3 * p1 - 3 * p2 + p3) * s ** 3)


def _transport_frames(centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tangents plus a twist-free normal/binormal field along a polyline."""
    tangents = np.gradient(centers, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.empty_like(tangents)
    t0 = tangents[0]
    helper = np.array([0.0, 0.0, 1.0]) if abs(t0[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n = np.cross(t0, helper)
    n /= np.linalg.norm(n)
    normals[0] = n
    for i in range(1, len(centers)):
        t = tangents[i]
        n = normals[i - 1] - np.dot(normals[i - 1], t) * t
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise SceneError("centerline turns too sharply for frame transport")
        normals[i] = n / norm
    binormals = np.cross(tangents, normals)
    return tangents, normals, binormals


def tube_mesh(centers: np.ndarray, radius: float, radial_segments: int,
              frame: str = "ECM", check_overlap: bool = True) -> TriangleMesh:
    """Closed tube around a polyline with outward normals and end caps."""
    centers = np.asarray(centers, dtype=np.float64)
    tangents, normals, binormals = _transport_frames(centers)
    if check_overlap:
        chords = np.linalg.norm(np.diff(centers, axis=0), axis=1)
        cosang = np.clip(np.einsum("ni,ni->n", tangents[:-1], tangents[1:]), -1, 1)
        angles = np.arccos(cosang)
        if np.any(chords <= radius * 2.0 * np.sin(angles / 2.0)):
            raise SceneError("self-intersecting centerline: adjacent rings overlap")
    theta = 2.0 * np.pi * np.arange(radial_segments) / radial_segments
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rings = (centers[:, None, :]
             + radius * (cos_t[None, :, None] * normals[:, None, :]
                         + sin_t[None, :, None] * binormals[:, None, :]))
    n_rings, rs = rings.shape[0], radial_segments
    verts = rings.reshape(-1, 3)
    faces = []
    for i in range(n_rings - 1):
        base0 = i * rs
        base1 = (i + 1) * rs
        for k in range(rs):
            k1 = (k + 1) % rs
            faces.append([base0 + k, base0 + k1, base1 + k])
            faces.append([base0 + k1, base1 + k1, base1 + k])
    start_center = len(verts)
    end_center = len(verts) + 1
    verts = np.vstack([verts, centers[0], centers[-1]])
    for k in range(rs):
        k1 = (k + 1) % rs
        faces.append([start_center, k1, k])
        faces.append([end_center, (n_rings - 1) * rs + k, (n_rings - 1) * rs + k1])
    return TriangleMesh(vertices=verts, faces=np.asarray(faces), frame=frame)


@dataclass
class VesselSpec:
    """Tubular target: centerline control points (reference frame, meters)."""

    control_points: np.ndarray
    radius_m: float = 0.005
    radial_segments: int = 16
    axial_segments: int = 48
    branches: list["VesselSpec"] = field(default_factory=list)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64).reshape(-1, 3)
        if len(self.control_points) < 2:
            raise SceneError("need at least 2 centerline control points")
        if self.radius_m <= 0:
            raise SceneError("tube radius must be positive")


def build_vessel_mesh(spec: VesselSpec, frame: str = "ECM") -> TriangleMesh:
    """Watertight tube along the interpolated centerline; branch tubes, when
    present, are merged into the same vertex/face arrays."""
    centers = _catmull_rom(spec.control_points, spec.axial_segments + 1)
    mesh = tube_mesh(centers, spec.radius_m, spec.radial_segments, frame=frame)
    for branch in spec.branches:
        sub = build_vessel_mesh(branch, frame=frame)
        offset = len(mesh.vertices)
        mesh = TriangleMesh(vertices=np.vstack([mesh.vertices, sub.vertices]),
                            faces=np.vstack([mesh.faces, sub.faces + offset]),
                            frame=frame)
    return mesh


def sphere_mesh(center: np.ndarray, radius: float, lat: int = 8, lon: int = 12,
                scale: Sequence[float] = (1.0, 1.0, 1.0),
                frame: str = "ECM") -> TriangleMesh:
    center = np.asarray(center, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    verts = [center + radius * scale * np.array([0.0, 0.0, 1.0])]
    for i in range(1, lat):
        phi = np.pi * i / lat
        for j in range(lon):
            th = 2 * np.pi * j / lon
            verts.append(center + radius * scale * np.array(
                [np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)]))
    verts.append(center + radius * scale * np.array([0.0, 0.0, -1.0]))
    verts = np.asarray(verts)
    faces = []
    for j in range(lon):
        faces.append([0, 1 + j, 1 + (j + 1) % lon])
    for i in range(lat - 2):
        a = 1 + i * lon
        b = 1 + (i + 1) * lon
        for j in range(lon):
            j1 = (j + 1) % lon
            faces.append([a + j, b + j, a + j1])
            faces.append([a + j1, b + j, b + j1])
    last = len(verts) - 1
    base = 1 + (lat - 2) * lon
    for j in range(lon):
        faces.append([last, base + (j + 1) % lon, base + j])
    return TriangleMesh(vertices=verts, faces=np.asarray(faces), frame=frame)


def instrument_mesh(inst: InstrumentModel, radial: int = 10, axial: int = 10,
                    frame: str = "ECM") -> TriangleMesh:
    stations = np.linspace(0.0, 1.0, axial + 1)[:, None]
    centers = inst.rcm + stations * (inst.ee - inst.rcm)
    return tube_mesh(centers, inst.radius_m, radial, frame=frame,
                     check_overlap=False)


# ---------------------------------------------------------------------------
# Scene configuration and the simulator


@dataclass
class SceneConfig:
    vessel: VesselSpec
    rig: StereoRig
    t_ecm_lcam: RigidTransform
    node_centers: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    node_radius_m: float = 0.004
    kidney: Optional[TriangleMesh] = None
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.4, 1.0]))

    def __post_init__(self):
        self.node_centers = np.asarray(self.node_centers, dtype=np.float64).reshape(-1, 3)
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        self.light_dir = self.light_dir / np.linalg.norm(self.light_dir)
        if self.rig.rectified is None:
            raise SceneError("scene rig must be rectified")


@dataclass
class RenderedViews:
    left_image: np.ndarray    # uint8 shaded grayscale
    right_image: np.ndarray
    depth_gt: np.ndarray      # meters in Rec_L_CAM, NaN invalid
    disp_gt: np.ndarray       # pixels, NaN invalid, float32-valued
    mask_gt: np.ndarray       # uint8 0/255, target pixels


class SceneSimulator:
    """Renders the configured scene plus per-frame instruments.

    The static scene (target, nodes, backdrop) is rasterized once and reused;
    only the instrument cylinders are rasterized per frame. Node removal
    invalidates the static buffers.
    """

    def __init__(self, scene: SceneConfig):
        self.scene = scene
        rect = scene.rig.rectified
        self.k = rect.k_rect
        self.width, self.height = self.k.width, self.k.height
        self.baseline_m = rect.baseline_m
        self.focal_px = rect.focal_px
        # ECM -> Rec_L_CAM for vertex transform; light into the same frame.
        self.t_ecm_recl = compose(scene.t_ecm_lcam, rect.r_left)
        self.light_recl = self.t_ecm_recl.rotation @ scene.light_dir

        self.vessel_mesh = build_vessel_mesh(scene.vessel)
        self.node_meshes = [sphere_mesh(c, scene.node_radius_m)
                            for c in scene.node_centers]
        self.node_active = [True] * len(self.node_meshes)
        self._static = None  # type: Optional[dict]

    # -- static scene -------------------------------------------------------

    def set_node_active(self, index: int, active: bool) -> None:
        if self.node_active[index] != active:
            self.node_active[index] = active
            self._static = None

    def _shade(self, mesh: TriangleMesh, base: float) -> np.ndarray:
        n = mesh.face_normals() @ self.t_ecm_recl.rotation.T
        lam = np.abs(n @ self.light_recl)
        return np.clip(base * (0.45 + 0.55 * lam), 0, 255)

    def _project(self, verts_ecm: np.ndarray, view: str,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.t_ecm_recl.apply(verts_ecm)
        if view == "right":
            p = p - np.array([self.baseline_m, 0.0, 0.0])
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_z = np.where(z > 1e-9, 1.0 / z, -1.0)
            uv = np.stack([self.k.fx * p[:, 0] * inv_z + self.k.cx,
                           self.k.fy * p[:, 1] * inv_z + self.k.cy], axis=1)
        return uv, inv_z, p

    def _static_buffers(self) -> dict:
        if self._static is not None:
            return self._static
        # Face ids cover the full static range (inactive nodes included) so
        # the vessel id window stays stable when nodes are removed.
        self.vessel_face_count = len(self.vessel_mesh.faces)
        id_cursor = 0
        shade_parts = []
        draw_verts = []
        draw_faces = []
        draw_ids = []
        vcursor = 0

        def add(mesh, base, drawn):
            nonlocal id_cursor, vcursor
            nf = len(mesh.faces)
            if drawn:
                draw_verts.append(mesh.vertices)
                draw_faces.append(mesh.faces + vcursor)
                draw_ids.append(np.arange(id_cursor, id_cursor + nf))
                shade_parts.append(self._shade(mesh, base))
                vcursor += len(mesh.vertices)
            else:
                shade_parts.append(np.zeros(nf))
            id_cursor += nf

        add(self.vessel_mesh, 90.0, True)
        for active, m in zip(self.node_active, self.node_meshes):
            add(m, 225.0, active)
        if self.scene.kidney is not None:
            add(self.scene.kidney, 140.0, True)
        self.static_face_count = id_cursor
        shade_lut = np.concatenate(shade_parts) if shade_parts else np.zeros(0)
        verts = np.vstack(draw_verts)
        faces = np.vstack(draw_faces)
        ids = np.concatenate(draw_ids)
        buffers = {}
        for view in ("left", "right"):
            uv, inv_z, cam = self._project(verts, view)
            front = front_face_mask(cam, faces)
            zb, ib = rasterize_triangles(uv, inv_z, faces[front], self.width,
                                         self.height, ids[front])
            buffers[view] = (zb, ib)
        buffers["shade_lut"] = shade_lut
        self._static = buffers
        return buffers

    # -- per-frame rendering -------------------------------------------------

    def render(self, instruments: Optional[dict[str, InstrumentModel]] = None,
               ) -> RenderedViews:
        static = self._static_buffers()
        shade_lut = static["shade_lut"]
        inst_meshes = []
        if instruments:
            for key in sorted(instruments):
                inst_meshes.append(instrument_mesh(instruments[key]))
        views = {}
        for view in ("left", "right"):
            zb0, ib0 = static[view]
            zb, ib = zb0.copy(), ib0.copy()
            cursor = self.static_face_count
            shades = [shade_lut]
            for mesh in inst_meshes:
                uv, inv_z, cam = self._project(mesh.vertices, view)
                front = front_face_mask(cam, mesh.faces)
                ids = np.arange(cursor, cursor + len(mesh.faces))
                rasterize_triangles(uv, inv_z, mesh.faces[front], self.width,
                                    self.height, ids[front], zb, ib)
                shades.append(self._shade(mesh, 205.0))
                cursor += len(mesh.faces)
            views[view] = (zb, ib, np.concatenate(shades))

        zb_l, ib_l, lut_l = views["left"]
        zb_r, ib_r, lut_r = views["right"]
        covered = ib_l >= 0
        disp = np.full(zb_l.shape, np.nan)
        disp[covered] = (self.baseline_m * self.focal_px) * zb_l[covered]
        disp = disp.astype(np.float32).astype(np.float64)  # file-exact values
        depth = disparity_to_depth(disp, self.baseline_m, self.focal_px)
        mask = np.where(covered & (ib_l < self.vessel_face_count), 255, 0).astype(np.uint8)

        def shade_image(ib, lut):
            img = np.full(ib.shape, float(BACKGROUND_SHADE))
            hit = ib >= 0
            img[hit] = lut[ib[hit]]
            return np.clip(np.rint(img), 0, 255).astype(np.uint8)

        return RenderedViews(left_image=shade_image(ib_l, lut_l),
                             right_image=shade_image(ib_r, lut_r),
                             depth_gt=depth, disp_gt=disp, mask_gt=mask)


# ---------------------------------------------------------------------------
# Noise injection


@dataclass
class NoiseSpec:
    disp_sigma_px: float = 0.0
    disp_quant_px: float = 0.0
    disp_dropout: float = 0.0
    mask_jitter_px: int = 0
    blob_rate: float = 0.0
    blob_size_px: int = 3
    pose_sigma_m: float = 0.0

    def __post_init__(self):
        for name in ("disp_sigma_px", "disp_quant_px", "disp_dropout",
                     "mask_jitter_px", "blob_rate", "blob_size_px",
                     "pose_sigma_m"):
            if getattr(self, name) < 0:
                raise SceneError(f"{name} must be >= 0")


def apply_noise(views: RenderedViews, spec: NoiseSpec, seed: int,
                frame_index: int = 0) -> RenderedViews:
    """Corrupt disparity and mask deterministically for (seed, frame_index).

    Disparity: additive noise, then quantization, then dropout. Mask: border
    jitter by locally resampling near the boundary, then spurious blobs.
    """
    rng = np.random.default_rng([seed, frame_index])
    disp = views.disp_gt.copy()
    valid = np.isfinite(disp)
    if spec.disp_sigma_px > 0:
        disp[valid] += rng.normal(scale=spec.disp_sigma_px, size=int(valid.sum()))
    if spec.disp_quant_px > 0:
        disp[valid] = np.round(disp[valid] / spec.disp_quant_px) * spec.disp_quant_px
    if spec.disp_dropout > 0:
        drop = rng.uniform(size=disp.shape) < spec.disp_dropout
        disp[drop] = np.nan
    mask = views.mask_gt.copy()
    if spec.mask_jitter_px > 0:
        r = spec.mask_jitter_px
        from scipy import ndimage
        inner = ndimage.minimum_filter(mask, size=2 * r + 1, mode="nearest")
        outer = ndimage.maximum_filter(mask, size=2 * r + 1, mode="nearest")
        border = inner != outer
        h, w = mask.shape
        dv = rng.integers(-r, r + 1, size=mask.shape)
        du = rng.integers(-r, r + 1, size=mask.shape)
        vs, us = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        sv = np.clip(vs + dv, 0, h - 1)
        su = np.clip(us + du, 0, w - 1)
        jittered = mask[sv, su]
        mask = np.where(border, jittered, mask)
    if spec.blob_rate > 0:
        n_blobs = rng.poisson(spec.blob_rate)
        h, w = mask.shape
        s = max(spec.blob_size_px, 1)
        for _ in range(n_blobs):
            cv = int(rng.integers(0, h))
            cu = int(rng.integers(0, w))
            mask[max(0, cv - s // 2):cv + (s + 1) // 2,
                 max(0, cu - s // 2):cu + (s + 1) // 2] = 255
    # depth_gt stays the clean reference; the corrupted disparity stands in
    # for an estimator's output.
    return RenderedViews(left_image=views.left_image,
                         right_image=views.right_image,
                         depth_gt=views.depth_gt, disp_gt=disp, mask_gt=mask)


def perturb_point(point: np.ndarray, sigma_total_m: float, rng) -> np.ndarray:
    """Isotropic position noise with E[|error|^2] = sigma_total^2."""
    if sigma_total_m <= 0:
        return np.asarray(point, dtype=np.float64)
    return point + rng.normal(scale=sigma_total_m / np.sqrt(3.0), size=3)


# ---------------------------------------------------------------------------
# Trajectory scripts


@dataclass
class ArmKeyframe:
    t_s: float
    position: np.ndarray
    grasp: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass
class TrajectoryScript:
    left: list[ArmKeyframe]
    right: list[ArmKeyframe]
    left_rcm: np.ndarray
    right_rcm: np.ndarray
    pickups: list[tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        self.left_rcm = np.asarray(self.left_rcm, dtype=np.float64).reshape(3)
        self.right_rcm = np.asarray(self.right_rcm, dtype=np.float64).reshape(3)
        for arm in (self.left, self.right):
            times = [k.t_s for k in arm]
            if len(times) < 2 or np.any(np.diff(times) <= 0):
                raise SceneError("keyframe times must be strictly increasing")

    def span(self) -> tuple[float, float]:
        t0 = max(self.left[0].t_s, self.right[0].t_s)
        t1 = min(self.left[-1].t_s, self.right[-1].t_s)
        return t0, t1


@dataclass
class ScriptState:
    left: InstrumentModel
    right: InstrumentModel
    left_grasp: bool
    right_grasp: bool


def _interp_arm(keys: list[ArmKeyframe], t: float) -> tuple[np.ndarray, bool]:
    times = np.array([k.t_s for k in keys])
    if t < times[0] or t > times[-1]:
        raise SceneError(f"time {t} outside script span [{times[0]}, {times[-1]}]")
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i >= len(keys) - 1:
        return keys[-1].position.copy(), keys[-1].grasp
    a, b = keys[i], keys[i + 1]
    s = (t - a.t_s) / (b.t_s - a.t_s)
    return a.position + s * (b.position - a.position), a.grasp


def evaluate_script(script: TrajectoryScript, t: float,
                    radius_m: float = 0.004) -> ScriptState:
    """Linear interpolation between bracketing keyframes; pivots fixed."""
    lp, lg = _interp_arm(script.left, t)
    rp, rg = _interp_arm(script.right, t)
    return ScriptState(
        left=InstrumentModel(ee=lp, rcm=script.left_rcm, radius_m=radius_m),
        right=InstrumentModel(ee=rp, rcm=script.right_rcm, radius_m=radius_m),
        left_grasp=lg, right_grasp=rg)


# ---------------------------------------------------------------------------
# Canonical scene and task script


def default_rig(width: int = 640, height: int = 360, focal_px: float = 700.0,
                baseline_m: float = 0.004, rel_rot_deg: float = 0.4) -> StereoRig:
    k = CameraIntrinsics(fx=focal_px, fy=focal_px, cx=width / 2 - 0.5,
                         cy=height / 2 - 0.5, width=width, height=height)
    rv = np.deg2rad(rel_rot_deg) * np.array([0.2, 0.9, 0.39])
    r = rotvec_to_matrix(rv)
    t = r @ np.array([-baseline_m, 0.0, 0.0])
    rig = StereoRig(left=k,
                    right=CameraIntrinsics(fx=focal_px, fy=focal_px,
                                           cx=width / 2 - 0.5, cy=height / 2 - 0.5,
                                           width=width, height=height),
                    t_right_from_left=RigidTransform(r, t, "L_CAM", "R_CAM"),
                    baseline_m=float(np.linalg.norm(t)))
    return stereo_rectify(rig)


def default_hand_eye() -> RigidTransform:
    return RigidTransform(rotvec_to_matrix([0.04, -0.03, 0.02]),
                          [0.015, -0.01, 0.03], "ECM", "L_CAM")


def default_hand_hand() -> RigidTransform:
    return RigidTransform(rotvec_to_matrix([0.008, -0.012, 0.01]),
                          [0.004, -0.003, 0.002], "EE1", "EE2")


def default_scene(n_nodes: int = 10, rig: Optional[StereoRig] = None,
                  t_ecm_lcam: Optional[RigidTransform] = None) -> SceneConfig:
    """Plausible endoscopic working geometry: target tube about 10 cm in
    front of the camera, removable nodes beside it, backdrop behind."""
    rig = rig or default_rig()
    t_ecm_lcam = t_ecm_lcam or default_hand_eye()
    recl_to_ecm = invert(compose(t_ecm_lcam, rig.rectified.r_left))

    def to_ecm(pts):
        return recl_to_ecm.apply(np.asarray(pts, dtype=np.float64))

    control = to_ecm([[-0.050, 0.012, 0.108],
                      [-0.018, 0.002, 0.100],
                      [0.020, 0.008, 0.094],
                      [0.052, -0.006, 0.102]])
    vessel = VesselSpec(control_points=control)
    # Nodes flank the tube: first six on the left half, four on the right.
    slots = []
    for i in range(6):
        slots.append([-0.045 + 0.014 * i, 0.030 - 0.004 * (i % 2), 0.102])
    for i in range(4):
        slots.append([0.000 + 0.014 * i, -0.026 + 0.004 * (i % 2), 0.098])
    nodes = to_ecm(slots[:n_nodes])
    kidney_recl_center = [0.0, 0.01, 0.150]
    kidney = sphere_mesh(to_ecm(kidney_recl_center), 0.085, lat=10, lon=14,
                         scale=(1.3, 0.9, 0.55))
    return SceneConfig(vessel=vessel, rig=rig, t_ecm_lcam=t_ecm_lcam,
                       node_centers=nodes, node_radius_m=0.004, kidney=kidney)


def scene_home_positions(scene: SceneConfig) -> dict[str, np.ndarray]:
    """Instrument home/pivot placement derived from the camera geometry."""
    recl_to_ecm = invert(compose(scene.t_ecm_lcam, scene.rig.rectified.r_left))

    def to_ecm(p):
        return recl_to_ecm.apply(np.asarray(p, dtype=np.float64))

    return {
        "left_rcm": to_ecm([-0.065, -0.060, 0.035]),
        "right_rcm": to_ecm([0.065, -0.060, 0.035]),
        "left_home": to_ecm([-0.040, -0.028, 0.085]),
        "right_home": to_ecm([0.040, -0.028, 0.085]),
        "drop_corner": to_ecm([-0.052, 0.035, 0.090]),
    }


def lymphadenectomy_script(scene: SceneConfig, seconds_per_pick: float = 6.0,
                           clearance_m: float = 0.012) -> TrajectoryScript:
    """Six-phase task: the left arm clears the first six nodes, the right arm
    the remaining four, then both return home."""
    home = scene_home_positions(scene)
    drop = home["drop_corner"]
    nodes = scene.node_centers
    n_left = min(6, len(nodes))
    left_keys = [ArmKeyframe(0.0, home["left_home"])]
    right_keys = [ArmKeyframe(0.0, home["right_home"])]
    pickups = []
    t = 0.0
    for i in range(n_left):
        approach = nodes[i] + [0, 0, -clearance_m]
        t += seconds_per_pick * 0.4
        left_keys.append(ArmKeyframe(t, approach))
        t += seconds_per_pick * 0.2
        left_keys.append(ArmKeyframe(t, nodes[i], grasp=True))
        pickups.append((t, i))
        t += seconds_per_pick * 0.4
        left_keys.append(ArmKeyframe(t, drop, grasp=False))
    t_left_end = t + seconds_per_pick * 0.3
    left_keys.append(ArmKeyframe(t_left_end, home["left_home"]))
    right_keys.append(ArmKeyframe(t_left_end, home["right_home"]))
    t = t_left_end
    for i in range(n_left, len(nodes)):
        approach = nodes[i] + [0, 0, -clearance_m]
        t += seconds_per_pick * 0.4
        right_keys.append(ArmKeyframe(t, approach))
        t += seconds_per_pick * 0.2
        right_keys.append(ArmKeyframe(t, nodes[i], grasp=True))
        pickups.append((t, i))
        t += seconds_per_pick * 0.4
        right_keys.append(ArmKeyframe(t, drop, grasp=False))
    t_end = t + seconds_per_pick * 0.3
    right_keys.append(ArmKeyframe(t_end, home["right_home"]))
    left_keys.append(ArmKeyframe(t_end, home["left_home"]))
    return TrajectoryScript(left=left_keys, right=right_keys,
                            left_rcm=home["left_rcm"],
                            right_rcm=home["right_rcm"],
                            pickups=pickups)


# ---------------------------------------------------------------------------
# Dataset export / import


def export_dataset(scene: SceneConfig, script: TrajectoryScript, n_frames: int,
                   out_dir, noise: Optional[NoiseSpec] = None, seed: int = 0,
                   t_ee1_ee2: Optional[RigidTransform] = None) -> None:
    """Write n_frames frame directories, each holding the six canonical files
    (left/right images, disparity, depth, mask, rig+pose json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = SceneSimulator(scene)
    t_hh = t_ee1_ee2 or default_hand_hand()
    t0, t1 = script.span()
    times = np.linspace(t0, t1, n_frames)
    rng = np.random.default_rng([seed, 9999])
    for i, t in enumerate(times):
        state = evaluate_script(script, float(t))
        views = sim.render({"left": state.left, "right": state.right})
        if noise is not None:
            views = apply_noise(views, noise, seed, i)
        d = out / f"{i:06d}"
        d.mkdir(exist_ok=True)
        formats.write_pgm(d / "left.pgm", views.left_image)
        formats.write_pgm(d / "right.pgm", views.right_image)
        formats.write_pfm(d / "disp_gt.pfm", views.disp_gt)
        formats.write_pfm(d / "depth_gt.pfm", views.depth_gt)
        formats.write_pgm(d / "mask_gt.pgm", views.mask_gt)
        sigma = noise.pose_sigma_m if noise else 0.0
        raw_left_ee = invert(t_hh).apply(perturb_point(state.left.ee, sigma, rng))
        raw_left_rcm = invert(t_hh).apply(perturb_point(state.left.rcm, sigma, rng))
        right_ee = perturb_point(state.right.ee, sigma, rng)
        right_rcm = perturb_point(state.right.rcm, sigma, rng)
        formats.save_json(d / "rig.json", {
            "rig": formats.rig_to_dict(scene.rig),
            "t_ecm_lcam": formats.transform_to_dict(scene.t_ecm_lcam),
            "t_ee1_ee2": formats.transform_to_dict(t_hh),
            "frame": {
                "t_s": float(t),
                "instruments": {
                    "left": {"ee_m": raw_left_ee.tolist(),
                             "rcm_m": raw_left_rcm.tolist(),
                             "radius_m": state.left.radius_m,
                             "frame": "EE1"},
                    "right": {"ee_m": right_ee.tolist(),
                              "rcm_m": right_rcm.tolist(),
                              "radius_m": state.right.radius_m,
                              "frame": "EE2"},
                },
            },
        })


@dataclass
class DatasetFrame:
    index: int
    path: Path
    t_s: float
    rig: StereoRig
    t_ecm_lcam: RigidTransform
    t_ee1_ee2: RigidTransform
    instruments: dict


def import_dataset(dataset_dir) -> list[DatasetFrame]:
    root = Path(dataset_dir)
    frames = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = formats.load_json(d / "rig.json")
        frames.append(DatasetFrame(
            index=int(d.name),
            path=d,
            t_s=meta["frame"]["t_s"],
            rig=formats.rig_from_dict(meta["rig"]),
            t_ecm_lcam=formats.transform_from_dict(meta["t_ecm_lcam"]),
            t_ee1_ee2=formats.transform_from_dict(meta["t_ee1_ee2"]),
            instruments=meta["frame"]["instruments"]))
    if not frames:
        raise formats.FormatError(f"{root}: no frame directories found")
    return frames


# ---------------------------------------------------------------------------
# Synthetic calibration sessions


@dataclass
class CalibrationNoise:
    pixel_sigma_px: float = 0.5
    ee_sigma_m: float = 0.001  # total positional error, not per-axis


def synthesize_calibration_session(seed: int = 0,
                                   noise: Optional[CalibrationNoise] = None,
                                   rig: Optional[StereoRig] = None,
                                   t_ecm_lcam: Optional[RigidTransform] = None,
                                   t_ee1_ee2: Optional[RigidTransform] = None,
                                   n_views: int = 5,
                                   board: Optional[ChessboardSpec] = None,
                                   ) -> CalibrationSession:
    """Generate board views, hand-hand point pairs and a hand-eye set from a
    known rig, with the configured detection and kinematics noise."""
    noise = noise or CalibrationNoise()
    rig = rig or default_rig()
    board = board or ChessboardSpec()
    t_he = t_ecm_lcam or default_hand_eye()
    t_hh = t_ee1_ee2 or default_hand_hand()
    rng = np.random.default_rng(seed)
    k = rig.left
    grid = chessboard_model(board)
    bw = board.square_size_m * (board.cols - 1)
    bh = board.square_size_m * (board.rows - 1)
    views = []
    tilts = np.linspace(-0.35, 0.35, n_views)
    for i in range(n_views):
        pose = RigidTransform(
            rotvec_to_matrix([tilts[i], tilts[n_views - 1 - i] * 0.8,
                              rng.uniform(-0.2, 0.2)]),
            [-bw / 2 + rng.uniform(-0.01, 0.01),
             -bh / 2 + rng.uniform(-0.01, 0.01),
             0.25 + 0.02 * i],
            "board", "cam")
        uv, valid = project_points(k, pose.apply(grid))
        if not valid.all():
            continue
        uv = uv + rng.normal(scale=noise.pixel_sigma_px, size=uv.shape)
        views.append(PlanarView(object_points=grid, image_points=uv))

    # Hand-hand: both arms touch 40 shared points; each reading carries
    # kinematic noise. Points span a convincing working volume.
    shared = rng.uniform([-0.05, -0.05, 0.06], [0.05, 0.05, 0.16], size=(40, 3))
    left_read = np.array([perturb_point(p, noise.ee_sigma_m, rng) for p in shared])
    right_read = np.array([perturb_point(invert(t_hh).apply(p), noise.ee_sigma_m, rng)
                           for p in shared])
    pairs = PointPairSet(left=left_read, right=right_read)

    # Hand-eye: the arm points at the 54 board corners; the camera observes
    # them. Board placed far enough that position noise stays sub-pixel-ish.
    board_pose = RigidTransform(rotvec_to_matrix([0.15, -0.1, 0.05]),
                                [-bw / 2, -bh / 2, 0.30], "board", "cam")
    corners_cam = board_pose.apply(grid)
    corners_ecm = invert(t_he).apply(corners_cam)
    uv, valid = project_points(k, corners_cam)
    ee_read = np.array([perturb_point(p, noise.ee_sigma_m, rng)
                        for p in corners_ecm])
    uv = uv + rng.normal(scale=noise.pixel_sigma_px, size=uv.shape)
    hand_eye = HandEyeSet(ee_points=ee_read, image_points=uv)
    return CalibrationSession(views=views, hand_pairs=pairs, hand_eye=hand_eye,
                              width=k.width, height=k.height,
                              true_intrinsics=k, true_t_ee1_ee2=t_hh,
                              true_t_ecm_lcam=t_he)
