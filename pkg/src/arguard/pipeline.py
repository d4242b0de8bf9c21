"""Per-frame orchestration of the full reconstruction-to-overlay flow.

One processed frame runs: image acquisition, disparity lookup, mask lookup
with post-processing, masked reprojection and transfer to the reference
frame, registration refresh (global alignment exactly once per session,
iterative refinement every frame), per-arm distance detection, and the
overlay/gauge drawing. Every stage is timed; a report aggregates mean and
sample deviation per stage over a window of frames.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .calibration import CalibrationOutcome, run_calibration
from .formats import read_pgm
from .geometry import (FrameGraph, PointCloud, RigidTransform, StereoRig,
                       TriangleMesh, compose, invert, rotvec_to_matrix)
from .geometry import project_points
from .overlay import (OverlayStyle, project_model_rectified, render_gauges,
                      render_overlay, to_rgb)
from .proximity import (GaugeState, InstrumentModel, ProximityReport,
                        align_psm1, build_index, gauge_state, min_distance,
                        sample_instrument_cloud)
from .reconstruction import (DepthProvider, MaskProvider, cloud_to_ecm,
                             erode_mask, extract_masked_cloud,
                             remove_small_objects)
from .registration import (IcpParams, RegistrationParams, RegistrationResult,
                           compute_descriptors, estimate_normals,
                           icp_register, ransac_global_register,
                           registration_error, sample_mesh_points,
                           voxel_downsample)
from .session import FrameRecord, SessionLog
from .simscene import (CalibrationNoise, NoiseSpec, SceneConfig,
                       SceneSimulator, TrajectoryScript, apply_noise,
                       default_hand_hand, default_scene, evaluate_script,
                       import_dataset, lymphadenectomy_script, perturb_point,
                       synthesize_calibration_session)

STAGE_NAMES = ("preprocessing", "disparity", "mask_with_post",
               "cloud_gen_align", "distance", "registration", "visualization")

STAGE_LABELS = {
    "preprocessing": "Stereo image preprocessing",
    "disparity": "Disparity map estimation",
    "mask_with_post": "Binary mask estimation with postprocessing",
    "cloud_gen_align": "Point cloud generation and alignment",
    "distance": "Distance calculation",
    "registration": "Registration between pre-op and intra-op targets",
    "visualization": "Augmented reality visualization",
    "whole": "Whole pipeline",
}


class PipelineError(RuntimeError):
    pass


class ProviderFailure(RuntimeError):
    """A frame source failed to deliver; the frame is skipped and logged."""


@dataclass
class PostProcessParams:
    erode_radius_px: int = 2
    min_area_px: int = 64


@dataclass
class PipelineConfig:
    provider: str = "ground_truth"          # ground_truth | noisy | files
    dataset_dir: Optional[str] = None
    seed: int = 0
    modality: str = "experiment"            # experiment | control
    calibration: str = "exact"              # exact | estimate
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    calibration_noise: CalibrationNoise = field(default_factory=CalibrationNoise)
    post: PostProcessParams = field(default_factory=PostProcessParams)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    overlay: OverlayStyle = field(default_factory=OverlayStyle)
    distance_voxel_m: float = 0.001
    min_cloud_points: int = 50
    pre_op_samples: int = 3000
    instrument_axial_step_m: float = 0.002
    instrument_ring_count: int = 16
    icp_refresh_iters: int = 8
    tick_hz: float = 30.0
    service_port: int = 8765

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        cfg = PipelineConfig()
        for key in ("provider", "dataset_dir", "seed", "modality",
                    "calibration", "distance_voxel_m", "min_cloud_points",
                    "pre_op_samples", "instrument_axial_step_m",
                    "instrument_ring_count", "tick_hz", "service_port"):
            if key in d:
                setattr(cfg, key, d[key])
        if "noise" in d:
            cfg.noise = NoiseSpec(**d["noise"])
        if "post" in d:
            cfg.post = PostProcessParams(**d["post"])
        if "overlay" in d:
            cfg.overlay = OverlayStyle(**d["overlay"])
        return cfg


@dataclass
class TimingBreakdown:
    preprocessing: float = 0.0
    disparity: float = 0.0
    mask_with_post: float = 0.0
    cloud_gen_align: float = 0.0
    distance: float = 0.0
    registration: float = 0.0
    visualization: float = 0.0
    whole: float = 0.0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in STAGE_NAMES + ("whole",)}


@dataclass
class FrameResult:
    index: int
    t_s: float
    left_overlay: np.ndarray
    right_overlay: np.ndarray
    proximity: ProximityReport
    gauge: Optional[GaugeState]
    registration: Optional[RegistrationResult]
    timing: TimingBreakdown
    events: list


@dataclass
class CalibratedTransforms:
    rig: StereoRig                 # rectified
    t_ecm_lcam: RigidTransform
    t_ee1_ee2: RigidTransform


# ---------------------------------------------------------------------------
# Frame sources


class SimFrameSource(DepthProvider, MaskProvider):
    """Per-frame rasters and kinematic readings from the scene simulator.

    The left arm's readings are expressed in its own (miscalibrated) frame,
    as live kinematics would be; the right arm reads in the reference frame.
    Scripted node pickups mutate the scene at their scheduled times.
    """

    def __init__(self, scene: SceneConfig, script: TrajectoryScript,
                 noise: Optional[NoiseSpec] = None, seed: int = 0,
                 tick_hz: float = 30.0,
                 t_ee1_ee2_true: Optional[RigidTransform] = None):
        self.sim = SceneSimulator(scene)
        self.script = script
        self.noise = noise
        self.seed = seed
        self.tick_hz = tick_hz
        self.t_hh_true = t_ee1_ee2_true or default_hand_hand()
        t0, t1 = script.span()
        self._t0 = t0
        self._n = int(np.floor((t1 - t0) * tick_hz)) + 1
        self._picked: set[int] = set()
        self._cache: dict = {}

    def n_frames(self) -> int:
        return self._n

    def time_of(self, i: int) -> float:
        return self._t0 + i / self.tick_hz

    def _frame(self, i: int) -> dict:
        if i in self._cache:
            return self._cache[i]
        t = self.time_of(i)
        events = []
        for pt, node in self.script.pickups:
            if pt <= t and node not in self._picked:
                self._picked.add(node)
                self.sim.set_node_active(node, False)
                events.append({"event": "node_pickup", "node": int(node)})
        state = evaluate_script(self.script, t)
        views = self.sim.render({"left": state.left, "right": state.right})
        if self.noise is not None:
            views = apply_noise(views, self.noise, self.seed, i)
        sigma = self.noise.pose_sigma_m if self.noise else 0.0
        rng = np.random.default_rng([self.seed, i, 17])
        inv_hh = invert(self.t_hh_true)
        frame = {
            "views": views,
            "events": events,
            "left_raw": InstrumentModel(
                ee=inv_hh.apply(perturb_point(state.left.ee, sigma, rng)),
                rcm=inv_hh.apply(perturb_point(state.left.rcm, sigma, rng)),
                radius_m=state.left.radius_m),
            "right": InstrumentModel(
                ee=perturb_point(state.right.ee, sigma, rng),
                rcm=perturb_point(state.right.rcm, sigma, rng),
                radius_m=state.right.radius_m),
        }
        self._cache = {i: frame}  # keep only the newest frame
        return frame

    def images(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        f = self._frame(i)
        return f["views"].left_image, f["views"].right_image

    def disparity(self, i: int) -> np.ndarray:
        return self._frame(i)["views"].disp_gt

    def mask(self, i: int) -> np.ndarray:
        return self._frame(i)["views"].mask_gt

    def instruments(self, i: int) -> dict:
        f = self._frame(i)
        return {"left_raw": f["left_raw"], "right": f["right"]}

    def frame_events(self, i: int) -> list:
        return list(self._frame(i)["events"])


class DatasetFrameSource(DepthProvider, MaskProvider):
    """Frames read back from an exported dataset directory."""

    def __init__(self, dataset_dir):
        self.frames = import_dataset(dataset_dir)

    def n_frames(self) -> int:
        return len(self.frames)

    def time_of(self, i: int) -> float:
        return self.frames[i].t_s

    def images(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.frames[i].path
        return read_pgm(d / "left.pgm"), read_pgm(d / "right.pgm")

    def disparity(self, i: int) -> np.ndarray:
        from .formats import read_pfm
        return read_pfm(self.frames[i].path / "disp_gt.pfm")

    def mask(self, i: int) -> np.ndarray:
        return read_pgm(self.frames[i].path / "mask_gt.pgm")

    def instruments(self, i: int) -> dict:
        inst = self.frames[i].instruments
        return {
            "left_raw": InstrumentModel(ee=np.asarray(inst["left"]["ee_m"]),
                                        rcm=np.asarray(inst["left"]["rcm_m"]),
                                        radius_m=inst["left"]["radius_m"]),
            "right": InstrumentModel(ee=np.asarray(inst["right"]["ee_m"]),
                                     rcm=np.asarray(inst["right"]["rcm_m"]),
                                     radius_m=inst["right"]["radius_m"]),
        }

    def frame_events(self, i: int) -> list:
        return []


# ---------------------------------------------------------------------------
# Pre-operative model


def make_pre_op_model(scene: SceneConfig, seed: int = 0,
                      ) -> tuple[TriangleMesh, RigidTransform]:
    """Express the target mesh in its own model frame.

    Returns (mesh in the model frame, true model-to-reference transform);
    the pipeline must recover the transform by registration and never sees
    the returned truth.
    """
    from .simscene import build_vessel_mesh
    rng = np.random.default_rng([seed, 41])
    t_true = RigidTransform(
        rotvec_to_matrix([0.35, -0.25, 0.5] + rng.normal(scale=0.02, size=3)),
        np.array([0.04, -0.03, 0.05]) + rng.normal(scale=0.002, size=3),
        "BL", "ECM")
    mesh_ecm = build_vessel_mesh(scene.vessel)
    mesh_bl = TriangleMesh(vertices=invert(t_true).apply(mesh_ecm.vertices),
                           faces=mesh_ecm.faces, frame="BL")
    return mesh_bl, t_true


def exact_transforms(scene: SceneConfig,
                     t_ee1_ee2: Optional[RigidTransform] = None,
                     ) -> CalibratedTransforms:
    return CalibratedTransforms(rig=scene.rig, t_ecm_lcam=scene.t_ecm_lcam,
                                t_ee1_ee2=t_ee1_ee2 or default_hand_hand())


def estimated_transforms(scene: SceneConfig, noise: CalibrationNoise,
                         seed: int = 0,
                         t_ee1_ee2_true: Optional[RigidTransform] = None,
                         ) -> tuple[CalibratedTransforms, CalibrationOutcome]:
    """Calibrate from a synthetic noisy session; the stereo extrinsics and
    rectification stay at their reference values (only the three system
    calibrations are re-estimated, mirroring the calibration scope)."""
    session = synthesize_calibration_session(
        seed=seed, noise=noise, rig=scene.rig,
        t_ecm_lcam=scene.t_ecm_lcam,
        t_ee1_ee2=t_ee1_ee2_true or default_hand_hand())
    outcome = run_calibration(session)
    return CalibratedTransforms(rig=scene.rig,
                                t_ecm_lcam=outcome.t_ecm_lcam,
                                t_ee1_ee2=outcome.t_ee1_ee2), outcome


# ---------------------------------------------------------------------------
# The pipeline


class Pipeline:
    """Holds the per-session state: calibrated transforms, the sampled
    pre-operative model, the current registration and the session log."""

    def __init__(self, config: PipelineConfig, source, calibrated: CalibratedTransforms,
                 pre_op_mesh: TriangleMesh):
        if calibrated.rig.rectified is None:
            raise PipelineError("pipeline needs a rectified rig")
        self.config = config
        self.source = source
        self.calibrated = calibrated
        self.pre_op_mesh = pre_op_mesh
        self.graph = FrameGraph()
        self.graph.add(calibrated.t_ecm_lcam)
        self.graph.add(calibrated.rig.rectified.r_left)
        self.graph.add(calibrated.rig.rectified.r_right)
        self.graph.add(calibrated.rig.t_right_from_left)
        self.pre_op_cloud = sample_mesh_points(pre_op_mesh, config.pre_op_samples,
                                               seed=config.seed)
        self.t_bl_ecm: Optional[RigidTransform] = None
        self.last_color = (150, 170, 210)
        self.global_registrations = 0
        self.icp_runs = 0
        self.log = SessionLog(modality=config.modality, seed=config.seed)
        self.last_recon_cloud: Optional[PointCloud] = None
        self.last_icp_src: Optional[PointCloud] = None
        # Camera center in the reference frame orients reconstruction normals.
        self._viewpoint = invert(calibrated.t_ecm_lcam).translation

    # -- registration ------------------------------------------------------

    def _global_register(self, cloud_ecm: PointCloud) -> RegistrationResult:
        params = self.config.registration
        src = voxel_downsample(self.pre_op_cloud, params.coarse_voxel_m)
        dst = voxel_downsample(cloud_ecm, params.coarse_voxel_m)
        dst = estimate_normals(dst, k=min(10, max(3, len(dst) - 1)),
                               viewpoint=self._viewpoint)
        src_desc, _ = compute_descriptors(src, params.ransac.descriptor_radius_m)
        dst_desc, _ = compute_descriptors(dst, params.ransac.descriptor_radius_m)
        coarse = ransac_global_register(src, dst, src_desc, dst_desc,
                                        params.ransac)
        self.global_registrations += 1
        return coarse

    def _visible_subset(self, t_bl_ecm: RigidTransform,
                        mask: Optional[np.ndarray] = None) -> PointCloud:
        """Model points the reconstruction can actually cover under a pose.

        The reconstruction only holds the camera-facing side of the target,
        within the post-processed mask and away from occlusions; matching the
        full closed model against it would drag the pose toward the camera
        and its boundary, so registration and its error metric use the
        subset that faces the camera and projects into the observed mask.
        """
        cloud = self.pre_op_cloud
        p_ecm = t_bl_ecm.apply(cloud.points)
        n_ecm = cloud.normals @ t_bl_ecm.rotation.T
        view = p_ecm - self._viewpoint
        keep = np.einsum("ni,ni->n", n_ecm, view) < 0.0
        if mask is not None:
            rect = self.calibrated.rig.rectified
            t_ecm_recl = compose(self.calibrated.t_ecm_lcam, rect.r_left)
            p_recl = t_ecm_recl.apply(p_ecm)
            uv, valid = project_points(rect.k_rect, p_recl)
            h, w = mask.shape
            u = np.rint(uv[:, 0]).astype(np.int64)
            v = np.rint(uv[:, 1]).astype(np.int64)
            inside = valid & (u >= 0) & (u < w) & (v >= 0) & (v < h)
            covered = np.zeros(len(cloud), dtype=bool)
            covered[inside] = mask[v[inside], u[inside]] > 0
            keep &= covered
        if keep.sum() < 100:
            return cloud
        return PointCloud(points=cloud.points[keep], frame=cloud.frame,
                          normals=cloud.normals[keep])

    def _normal_polish(self, src: PointCloud, dst: PointCloud,
                       t: RigidTransform, corr_dist_m: float,
                       iters: int = 3) -> RigidTransform:
        """Least-squares pose polish along the model normals.

        Point-to-point ICP stalls in a flat valley the width of the cloud
        spacing because tangential mismatch dominates its objective; scoring
        residuals along the surface normal removes that sampling noise and
        pins the pose at the sub-voxel level.
        """
        tree = cKDTree(dst.points)
        r, tr = t.rotation, t.translation
        for _ in range(iters):
            p = src.points @ r.T + tr
            n = src.normals @ r.T
            d, idx = tree.query(p, distance_upper_bound=corr_dist_m)
            ok = np.isfinite(d)
            if ok.sum() < 20:
                break
            q = dst.points[idx[ok]]
            pm, nm = p[ok], n[ok]
            b = np.einsum("ni,ni->n", nm, q - pm)
            a = np.hstack([np.cross(pm, nm), nm])      # d/d(omega), d/d(t)
            try:
                xi, *_ = np.linalg.lstsq(a, b, rcond=None)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(xi)):
                break
            dr = rotvec_to_matrix(xi[:3])
            r = dr @ r
            tr = dr @ tr + xi[3:]
            if np.linalg.norm(xi) < 1e-9:
                break
        return RigidTransform(r, tr, t.frame_from, t.frame_to)

    def _refresh_registration(self, cloud_ecm: PointCloud,
                              mask: Optional[np.ndarray] = None,
                              ) -> RegistrationResult:
        params = self.config.registration
        if self.t_bl_ecm is None:
            coarse = self._global_register(cloud_ecm)
            init = coarse.transform
            # Settle the pose once before coverage filtering relies on it.
            init = icp_register(self._visible_subset(init), cloud_ecm, init,
                                params.icp).transform
        else:
            init = self.t_bl_ecm
        src = self._visible_subset(init, mask)
        first_frame = self.icp_runs == 0
        budget = params.icp.max_iters if first_frame else self.config.icp_refresh_iters
        head = IcpParams(max_iters=budget,
                         corr_dist_m=params.icp.corr_dist_m,
                         convergence_eps_m=params.icp.convergence_eps_m,
                         max_point_count=params.icp.max_point_count)
        result = icp_register(src, cloud_ecm, init, head)
        polished = self._normal_polish(src, cloud_ecm, result.transform,
                                       params.icp.corr_dist_m * 0.4)
        result = RegistrationResult(transform=polished, fitness=result.fitness,
                                    rmse_m=result.rmse_m,
                                    iterations=result.iterations,
                                    rmse_history=result.rmse_history)
        self.icp_runs += 1
        self.t_bl_ecm = result.transform
        self.last_icp_src = src
        self.graph.add(result.transform)
        return result

    # -- one frame -----------------------------------------------------------

    def process_frame(self, i: int) -> FrameResult:
        cfg = self.config
        rect = self.calibrated.rig.rectified
        events: list = []
        t_whole = time.perf_counter()
        timing = TimingBreakdown()

        t0 = time.perf_counter()
        try:
            left_img, right_img = self.source.images(i)
        except Exception as e:
            raise ProviderFailure(f"image source failed on frame {i}: {e}") from e
        events.extend(self.source.frame_events(i))
        left_rgb = to_rgb(left_img)
        right_rgb = to_rgb(right_img)
        timing.preprocessing = time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            disp = self.source.disparity(i)
        except Exception as e:
            raise ProviderFailure(f"disparity source failed on frame {i}: {e}") from e
        timing.disparity = time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            mask = self.source.mask(i)
        except Exception as e:
            raise ProviderFailure(f"mask source failed on frame {i}: {e}") from e
        mask = erode_mask(mask, cfg.post.erode_radius_px)
        mask = remove_small_objects(mask, cfg.post.min_area_px)
        timing.mask_with_post = time.perf_counter() - t0

        t0 = time.perf_counter()
        cloud_rect = extract_masked_cloud(disp, mask, self.calibrated.rig)
        cloud_rect = voxel_downsample(cloud_rect, cfg.distance_voxel_m,
                                      method="centroid")
        cloud_ecm = cloud_to_ecm(cloud_rect, self.graph)
        timing.cloud_gen_align = time.perf_counter() - t0

        t0 = time.perf_counter()
        reg_result: Optional[RegistrationResult] = None
        usable_cloud = len(cloud_ecm) >= cfg.min_cloud_points
        if usable_cloud:
            reg_result = self._refresh_registration(cloud_ecm, mask)
            self.last_recon_cloud = cloud_ecm
        else:
            events.append({"event": "empty_mask",
                           "points": int(len(cloud_ecm))})
        timing.registration = time.perf_counter() - t0

        t0 = time.perf_counter()
        instruments = self.source.instruments(i)
        left_ee = align_psm1(instruments["left_raw"].ee, self.calibrated.t_ee1_ee2)
        left_rcm = align_psm1(instruments["left_raw"].rcm, self.calibrated.t_ee1_ee2)
        left_inst = InstrumentModel(ee=left_ee, rcm=left_rcm,
                                    radius_m=instruments["left_raw"].radius_m)
        right_inst = instruments["right"]
        gauge: Optional[GaugeState] = None
        prox = ProximityReport(frame_index=i, d_left_m=None, d_right_m=None)
        if usable_cloud:
            index = build_index(cloud_ecm)
            left_cloud = sample_instrument_cloud(left_inst,
                                                 cfg.instrument_axial_step_m,
                                                 cfg.instrument_ring_count)
            right_cloud = sample_instrument_cloud(right_inst,
                                                  cfg.instrument_axial_step_m,
                                                  cfg.instrument_ring_count)
            dl = min_distance(index, left_cloud)
            dr = min_distance(index, right_cloud)
            prox = ProximityReport(frame_index=i, d_left_m=dl.distance_m,
                                   d_right_m=dr.distance_m,
                                   left_pair=(dl.target_point, dl.instrument_point),
                                   right_pair=(dr.target_point, dr.instrument_point))
            gauge = gauge_state(dl.distance_m, dr.distance_m)
            self.last_color = gauge.model_color
        else:
            events.append({"event": "distances_unavailable"})
        timing.distance = time.perf_counter() - t0

        t0 = time.perf_counter()
        if cfg.modality == "experiment" and self.t_bl_ecm is not None:
            color = gauge.model_color if gauge else self.last_color
            k_rect = rect.k_rect
            prims_l = project_model_rectified(self.pre_op_mesh, self.graph,
                                              k_rect, "left")
            prims_r = project_model_rectified(self.pre_op_mesh, self.graph,
                                              k_rect, "right")
            left_rgb = render_overlay(left_rgb, prims_l, color, cfg.overlay)
            right_rgb = render_overlay(right_rgb, prims_r, color, cfg.overlay)
            if gauge is not None:
                left_rgb = render_gauges(left_rgb, gauge, cfg.overlay)
                right_rgb = render_gauges(right_rgb, gauge, cfg.overlay)
        timing.visualization = time.perf_counter() - t0
        timing.whole = time.perf_counter() - t_whole

        t_s = self.source.time_of(i)
        zone = "SAFE"
        if gauge is not None:
            zone = "RISK" if "RISK" in (gauge.left_zone, gauge.right_zone) else "SAFE"
        self.log.append(FrameRecord(
            m=i, t_s=t_s,
            c_l_m=[float(x) for x in left_ee],
            c_r_m=[float(x) for x in right_inst.ee],
            d_ml_m=prox.d_left_m, d_mr_m=prox.d_right_m,
            zone=zone,
            color=list(gauge.model_color) if gauge else list(self.last_color),
            events=events))
        return FrameResult(index=i, t_s=t_s, left_overlay=left_rgb,
                           right_overlay=right_rgb, proximity=prox,
                           gauge=gauge, registration=reg_result,
                           timing=timing, events=events)

    def run(self, n_frames: Optional[int] = None, mark_trial: bool = True,
            ) -> list[FrameResult]:
        total = self.source.n_frames()
        n = total if n_frames is None else min(n_frames, total)
        results = []
        for i in range(n):
            try:
                result = self.process_frame(i)
            except ProviderFailure as e:
                # Skip the frame but keep the session log aware of it.
                self.log.append(FrameRecord(
                    m=i, t_s=self.source.time_of(i),
                    events=[{"event": "frame_skipped", "reason": str(e)}]))
                continue
            if mark_trial and i == 0:
                result.events.append({"event": "trial_start"})
                self.log.records[-1].events.append({"event": "trial_start"})
            if mark_trial and i == n - 1:
                result.events.append({"event": "trial_end"})
                self.log.records[-1].events.append({"event": "trial_end"})
            results.append(result)
        return results

    def current_registration_error(self) -> float:
        """Model-to-reconstruction RMS distance under the current pose,
        over the registration point set (the visible model subset)."""
        if self.t_bl_ecm is None or self.last_recon_cloud is None:
            raise PipelineError("no registration available yet")
        src = self.last_icp_src if self.last_icp_src is not None else self.pre_op_cloud
        return registration_error(src, self.last_recon_cloud, self.t_bl_ecm)


def build_pipeline(config: PipelineConfig,
                   scene: Optional[SceneConfig] = None,
                   script: Optional[TrajectoryScript] = None,
                   ) -> Pipeline:
    """Wire a pipeline from the config: frame source, calibration flavor and
    the pre-operative model."""
    if config.provider == "files":
        if not config.dataset_dir:
            raise PipelineError("files provider needs dataset_dir")
        source = DatasetFrameSource(config.dataset_dir)
        frame0 = source.frames[0]
        scene = scene or default_scene()
        calibrated = CalibratedTransforms(rig=frame0.rig,
                                          t_ecm_lcam=frame0.t_ecm_lcam,
                                          t_ee1_ee2=frame0.t_ee1_ee2)
        pre_op, _ = make_pre_op_model(scene, seed=config.seed)
        return Pipeline(config, source, calibrated, pre_op)

    scene = scene or default_scene()
    script = script or lymphadenectomy_script(scene)
    t_hh_true = default_hand_hand()
    noise = config.noise if config.provider == "noisy" else None
    source = SimFrameSource(scene, script, noise=noise, seed=config.seed,
                            tick_hz=config.tick_hz, t_ee1_ee2_true=t_hh_true)
    if config.calibration == "estimate":
        calibrated, _ = estimated_transforms(scene, config.calibration_noise,
                                             seed=config.seed,
                                             t_ee1_ee2_true=t_hh_true)
    else:
        calibrated = exact_transforms(scene, t_hh_true)
    pre_op, _ = make_pre_op_model(scene, seed=config.seed)
    return Pipeline(config, source, calibrated, pre_op)


# ---------------------------------------------------------------------------
# Timing report


@dataclass
class TimingReport:
    rows: list[tuple[str, float, float]]  # label, mean_s, std_s

    def as_dict(self) -> dict:
        return {label: {"mean_s": m, "std_s": s} for label, m, s in self.rows}

    def to_text(self) -> str:
        width = max(len(label) for label, _, _ in self.rows) + 2
        lines = [f"{'Phase':<{width}}Time (s)", "-" * (width + 20)]
        for label, m, s in self.rows:
            lines.append(f"{label:<{width}}{m:.4f}+/-{s:.4f}")
        return "\n".join(lines)


def timing_report(results: list[FrameResult]) -> TimingReport:
    """Mean and sample standard deviation per stage over the frame window."""
    if len(results) < 2:
        raise PipelineError("timing report needs at least 2 frames")
    rows = []
    for name in STAGE_NAMES + ("whole",):
        values = np.array([getattr(r.timing, name) for r in results])
        rows.append((STAGE_LABELS[name], float(values.mean()),
                     float(values.std(ddof=1))))
    return TimingReport(rows=rows)
