"""Rigid registration of the pre-operative model to the reconstructed target.

The pre-operative mesh is sampled into an oriented point cloud; a coarse
global alignment comes from descriptor correspondences scored by a seeded
RANSAC loop (run once per session), and point-to-point ICP refines the pose
every frame after that. The registration error is the RMS distance from
transformed model points to their nearest reconstructed neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (FrameError, PointCloud, RigidTransform, TriangleMesh,
                       rotation_angle)
from .calibration import horn_align


class RegistrationError(ValueError):
    """Degenerate input or no usable alignment found."""


@dataclass
class RansacRegParams:
    iters: int = 100_000
    confidence: float = 0.999
    descriptor_radius_m: float = 0.008
    max_corr_dist_m: float = 0.003
    edge_length_ratio: float = 0.9
    min_inliers: int = 10
    normal_angle_max_deg: float = 30.0
    seed: int = 0


@dataclass
class IcpParams:
    max_iters: int = 50
    corr_dist_m: float = 0.005
    convergence_eps_m: float = 1e-6
    max_point_count: int = 5000


@dataclass
class RegistrationParams:
    ransac: RansacRegParams = field(default_factory=RansacRegParams)
    icp: IcpParams = field(default_factory=IcpParams)
    coarse_voxel_m: float = 0.0025

    def __post_init__(self):
        if self.icp.convergence_eps_m >= self.icp.corr_dist_m:
            raise RegistrationError("convergence eps must be below corr dist")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    fitness: float
    rmse_m: float
    iterations: int
    rmse_history: list[float] = field(default_factory=list)


def sample_mesh_points(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-proportional surface sampling with uniform barycentric placement;
    each sample carries its face normal."""
    areas = mesh.face_areas()
    total = areas.sum()
    if len(mesh.faces) == 0 or total <= 0:
        raise RegistrationError("mesh has no triangles with positive area")
    if n == 0:
        return PointCloud(points=np.empty((0, 3)), frame=mesh.frame,
                          normals=np.empty((0, 3)))
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(mesh.faces), size=n, p=areas / total)
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[face_idx]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) \
        + v[:, None] * (tri[:, 2] - tri[:, 0])
    normals = mesh.face_normals()[face_idx]
    return PointCloud(points=pts, frame=mesh.frame, normals=normals)


def estimate_normals(cloud: PointCloud, k: int = 12,
                     viewpoint: Optional[np.ndarray] = None) -> PointCloud:
    """Per-point normals from the smallest covariance eigenvector over the k
    nearest neighbors, oriented toward the viewpoint (default: origin)."""
    n = len(cloud)
    if k < 3:
        raise RegistrationError("k must be at least 3")
    if n <= k:
        raise RegistrationError(f"cloud of {n} points cannot support k={k}")
    vp = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k + 1)
    neighbors = cloud.points[idx]                       # (n, k+1, 3)
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]                             # smallest eigenvector
    to_vp = vp - cloud.points
    flip = np.einsum("ni,ni->n", normals, to_vp) < 0
    normals[flip] = -normals[flip]
    return PointCloud(points=cloud.points, frame=cloud.frame,
                      normals=normals, pixels=cloud.pixels)


N_ANGLE_BINS = 11  # per feature; 3 features -> 33-bin descriptor


def compute_descriptors(cloud: PointCloud, radius_m: float,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Rotation-invariant 33-bin angle-histogram descriptors.

    For each neighbor pair inside the radius, three Darboux-frame angles are
    binned into 11 bins each; each point's histogram is then blended with its
    neighbors' (inverse-distance weighted) and per-feature normalized.
    Returns (descriptors, has_neighbors); isolated points get a zero
    histogram and a False flag.
    """
    if radius_m <= 0:
        raise RegistrationError("descriptor radius must be positive")
    if cloud.normals is None:
        raise RegistrationError("descriptors need normals")
    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    spfh = np.zeros((n, 3 * N_ANGLE_BINS))
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius_m, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        d = pts[j] - pts[i]
        dist = np.linalg.norm(d, axis=1)
        ok = dist > 1e-12
        i, j, d, dist = i[ok], j[ok], d[ok], dist[ok]
        d = d / dist[:, None]
        # Source = endpoint whose normal is better aligned with the pair axis.
        # The margin keeps exact ties (coplanar samples with equal normals)
        # resolving the same way after a rigid motion.
        swap = (np.abs(np.einsum("ni,ni->n", nrm[j], d))
                - np.abs(np.einsum("ni,ni->n", nrm[i], d))) > 1e-9
        src = np.where(swap, j, i)
        tgt = np.where(swap, i, j)
        d_st = np.where(swap[:, None], -d, d)
        u = nrm[src]
        v = np.cross(d_st, u)
        vn = np.linalg.norm(v, axis=1)
        good = vn > 1e-12
        src, tgt, d_st, u, v = src[good], tgt[good], d_st[good], u[good], v[good]
        i, j, dist = i[good], j[good], dist[good]
        v = v / vn[good][:, None]
        w = np.cross(u, v)
        nt = nrm[tgt]
        alpha = np.einsum("ni,ni->n", v, nt)
        phi = np.einsum("ni,ni->n", u, d_st)
        theta = np.arctan2(np.einsum("ni,ni->n", w, nt),
                           np.einsum("ni,ni->n", u, nt))
        b_alpha = np.clip(((alpha + 1.0) / 2.0 * N_ANGLE_BINS).astype(int),
                          0, N_ANGLE_BINS - 1)
        b_phi = np.clip(((phi + 1.0) / 2.0 * N_ANGLE_BINS).astype(int),
                        0, N_ANGLE_BINS - 1)
        b_theta = np.clip(((theta + np.pi) / (2 * np.pi) * N_ANGLE_BINS).astype(int),
                          0, N_ANGLE_BINS - 1)
        for endpoint in (i, j):
            np.add.at(spfh, (endpoint, b_alpha), 1.0)
            np.add.at(spfh, (endpoint, N_ANGLE_BINS + b_phi), 1.0)
            np.add.at(spfh, (endpoint, 2 * N_ANGLE_BINS + b_theta), 1.0)
    neighbor_counts = np.zeros(n, dtype=np.int64)
    fpfh = spfh.copy()
    if len(pairs):
        wgt = 1.0 / np.maximum(dist, 1e-9)
        np.add.at(neighbor_counts, i, 1)
        np.add.at(neighbor_counts, j, 1)
        contrib = np.zeros_like(spfh)
        np.add.at(contrib, i, spfh[j] * wgt[:, None])
        np.add.at(contrib, j, spfh[i] * wgt[:, None])
        has = neighbor_counts > 0
        fpfh[has] += contrib[has] / neighbor_counts[has][:, None]
    # Per-feature normalization so the descriptor is sampling-density invariant.
    for f in range(3):
        block = fpfh[:, f * N_ANGLE_BINS:(f + 1) * N_ANGLE_BINS]
        sums = block.sum(axis=1, keepdims=True)
        np.divide(block, sums, out=block, where=sums > 0)
    has_neighbors = neighbor_counts > 0
    fpfh[~has_neighbors] = 0.0
    return fpfh, has_neighbors


def _voxel_first_indices(pts: np.ndarray, voxel_m: float) -> np.ndarray:
    keys = np.floor(pts / voxel_m).astype(np.int64)
    keys -= keys.min(axis=0)
    spans = keys.max(axis=0) + 1
    if int(spans[0]) * int(spans[1]) * int(spans[2]) < 2 ** 62:
        flat = (keys[:, 0] * spans[1] + keys[:, 1]) * spans[2] + keys[:, 2]
        _, first = np.unique(flat, return_index=True)
    else:
        _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def voxel_downsample(cloud: PointCloud, voxel_m: float,
                     method: str = "first") -> PointCloud:
    """Thin a cloud to one point per occupied voxel.

    method "first" keeps the lowest-index original point (preserves exact
    surface samples and provenance); "centroid" averages the voxel's points,
    which is unbiased with respect to scan order and is what the per-frame
    pipeline uses for its reconstruction cloud.
    """
    if voxel_m <= 0 or len(cloud) == 0:
        return cloud
    if method == "first":
        first = _voxel_first_indices(cloud.points, voxel_m)
        return PointCloud(points=cloud.points[first], frame=cloud.frame,
                          normals=None if cloud.normals is None else cloud.normals[first],
                          pixels=None if cloud.pixels is None else cloud.pixels[first])
    if method != "centroid":
        raise ValueError(f"unknown downsample method {method!r}")
    keys = np.floor(cloud.points / voxel_m).astype(np.int64)
    keys -= keys.min(axis=0)
    spans = keys.max(axis=0) + 1
    flat = (keys[:, 0] * spans[1] + keys[:, 1]) * spans[2] + keys[:, 2]
    _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    pts = sums / counts[:, None]
    normals = None
    if cloud.normals is not None:
        nsum = np.zeros((len(counts), 3))
        np.add.at(nsum, inverse, cloud.normals)
        norm = np.linalg.norm(nsum, axis=1)
        norm[norm == 0] = 1.0
        normals = nsum / norm[:, None]
    return PointCloud(points=pts, frame=cloud.frame, normals=normals)


def _mutual_matches(src_desc: np.ndarray, dst_desc: np.ndarray) -> np.ndarray:
    """Mutual nearest-neighbor correspondences in descriptor space, (M, 2)."""
    t_dst = cKDTree(dst_desc)
    _, fwd = t_dst.query(src_desc)
    t_src = cKDTree(src_desc)
    _, bwd = t_src.query(dst_desc)
    src_idx = np.arange(len(src_desc))
    mutual = bwd[fwd] == src_idx
    return np.stack([src_idx[mutual], fwd[mutual]], axis=1)


def _pca_fallback(src: PointCloud, dst: PointCloud,
                  max_corr_dist: float) -> RigidTransform:
    """Centroid plus principal-axes alignment, sign ambiguity resolved by
    inlier count. Used when descriptor matching is degenerate."""
    def frame_of(pts):
        c = pts.mean(axis=0)
        _, vecs = np.linalg.eigh(np.cov((pts - c).T))
        r = vecs[:, ::-1]  # columns: major, mid, minor axis
        if np.linalg.det(r) < 0:
            r[:, 2] = -r[:, 2]
        return c, r

    c_s, r_s = frame_of(src.points)
    c_d, r_d = frame_of(dst.points)
    tree = cKDTree(dst.points)
    best = None
    best_count = -1
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        signs = np.diag([sx, sy, sx * sy])  # keeps det = +1
        r = r_d @ signs @ r_s.T
        t = c_d - r @ c_s
        moved = src.points @ r.T + t
        d, _ = tree.query(moved, distance_upper_bound=max_corr_dist)
        count = int(np.isfinite(d).sum())
        if count > best_count:
            best_count = count
            best = RigidTransform(r, t, src.frame, dst.frame)
    return best


def ransac_global_register(src: PointCloud, dst: PointCloud,
                           src_desc: np.ndarray, dst_desc: np.ndarray,
                           params: Optional[RansacRegParams] = None,
                           ) -> RegistrationResult:
    """Coarse alignment from 3-correspondence hypotheses over mutual
    descriptor matches, pruned by edge-length ratio and normal agreement,
    scored by correspondence support within max_corr_dist."""
    params = params or RansacRegParams()
    if len(src) < 3 or len(dst) < 3:
        raise RegistrationError("global registration needs at least 3 points per cloud")
    corr = _mutual_matches(src_desc, dst_desc)
    rng = np.random.default_rng(params.seed)
    cos_max = np.cos(np.deg2rad(params.normal_angle_max_deg))
    s_pts = src.points
    d_pts = dst.points

    if len(corr) < max(3, params.min_inliers):
        t = _pca_fallback(src, dst, params.max_corr_dist_m)
        return _score_and_refine(src, dst, t, params)

    s_c = s_pts[corr[:, 0]]
    d_c = d_pts[corr[:, 1]]
    best_inliers: Optional[np.ndarray] = None
    best_count = 0
    needed = params.iters
    it = 0
    while it < min(needed, params.iters):
        it += 1
        pick = rng.choice(len(corr), size=3, replace=False)
        a = s_c[pick]
        b = d_c[pick]
        ratio_ok = True
        for e0, e1 in ((0, 1), (1, 2), (0, 2)):
            ls = np.linalg.norm(a[e0] - a[e1])
            ld = np.linalg.norm(b[e0] - b[e1])
            if ls < 1e-12 or ld < 1e-12 \
                    or min(ls, ld) / max(ls, ld) < params.edge_length_ratio:
                ratio_ok = False
                break
        if not ratio_ok:
            continue
        try:
            t = horn_align(a, b, src.frame, dst.frame)
        except Exception:
            continue
        if src.normals is not None and dst.normals is not None:
            ns = src.normals[corr[pick, 0]] @ t.rotation.T
            nd = dst.normals[corr[pick, 1]]
            if np.any(np.einsum("ni,ni->n", ns, nd) < cos_max):
                continue
        resid = np.linalg.norm(s_c @ t.rotation.T + t.translation - d_c, axis=1)
        inliers = np.flatnonzero(resid < params.max_corr_dist_m)
        if len(inliers) > best_count:
            best_count = len(inliers)
            best_inliers = inliers
            frac = best_count / len(corr)
            if frac >= 1.0:
                break
            denom = np.log1p(-min(frac ** 3, 1 - 1e-12))
            needed = int(np.ceil(np.log(1 - params.confidence) / denom))
    if best_inliers is None or best_count < max(3, params.min_inliers):
        t = _pca_fallback(src, dst, params.max_corr_dist_m)
        return _score_and_refine(src, dst, t, params)
    t = horn_align(s_c[best_inliers], d_c[best_inliers], src.frame, dst.frame)
    return _score_and_refine(src, dst, t, params)


def _score_and_refine(src: PointCloud, dst: PointCloud, t: RigidTransform,
                      params: RansacRegParams) -> RegistrationResult:
    tree = cKDTree(dst.points)
    moved = src.points @ t.rotation.T + t.translation
    d, _ = tree.query(moved, distance_upper_bound=params.max_corr_dist_m)
    matched = np.isfinite(d)
    count = int(matched.sum())
    if count < max(3, params.min_inliers):
        raise RegistrationError(
            f"global registration support too small: {count} matches")
    rmse = float(np.sqrt(np.mean(d[matched] ** 2)))
    return RegistrationResult(transform=t, fitness=count / len(src),
                              rmse_m=rmse, iterations=1)


def icp_register(src: PointCloud, dst: PointCloud, init: RigidTransform,
                 params: Optional[IcpParams] = None) -> RegistrationResult:
    """Point-to-point ICP: nearest-neighbor pairs within corr_dist, closed-form
    rigid update, until the pose change drops below convergence_eps."""
    params = params or IcpParams()
    if len(src) == 0 or len(dst) == 0:
        raise RegistrationError("ICP needs nonempty clouds")
    if init.frame_from != src.frame or init.frame_to != dst.frame:
        raise FrameError(
            f"init maps {init.frame_from}->{init.frame_to}, clouds are "
            f"{src.frame}->{dst.frame}")
    src_pts = _cap_points(src.points, params.max_point_count)
    dst_pts = _cap_points(dst.points, params.max_point_count)
    tree = cKDTree(dst_pts)
    t = init
    history: list[float] = []
    iterations = 0
    for _ in range(params.max_iters):
        iterations += 1
        moved = src_pts @ t.rotation.T + t.translation
        d, idx = tree.query(moved, distance_upper_bound=params.corr_dist_m)
        matched = np.flatnonzero(np.isfinite(d))
        if len(matched) < 3:
            if not history:
                raise RegistrationError("no correspondences at the initial pose")
            break
        pairs_src = src_pts[matched]
        pairs_dst = dst_pts[idx[matched]]
        t_new = horn_align(pairs_src, pairs_dst, src.frame, dst.frame)
        resid = pairs_src @ t_new.rotation.T + t_new.translation - pairs_dst
        rmse = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
        history.append(rmse)
        change = rotation_angle(t_new.rotation.T @ t.rotation) \
            + float(np.linalg.norm(t_new.translation - t.translation))
        t = t_new
        if change < params.convergence_eps_m:
            break
    moved = src_pts @ t.rotation.T + t.translation
    d, _ = tree.query(moved, distance_upper_bound=params.corr_dist_m)
    matched = np.isfinite(d)
    fitness = float(matched.mean())
    rmse = float(np.sqrt(np.mean(d[matched] ** 2))) if matched.any() else float("inf")
    return RegistrationResult(transform=t, fitness=fitness, rmse_m=rmse,
                              iterations=iterations, rmse_history=history)


def _cap_points(pts: np.ndarray, max_count: int) -> np.ndarray:
    if len(pts) <= max_count:
        return pts
    voxel = 0.001
    capped = pts
    while len(capped) > max_count:
        capped = capped[_voxel_first_indices(capped, voxel)]
        voxel *= 1.5
    return capped


def registration_error(pre_op: PointCloud, recon: PointCloud,
                       t: RigidTransform) -> float:
    """RMS distance from transformed model points to their nearest
    reconstructed point (nearest-neighbor pairing)."""
    if len(pre_op) == 0 or len(recon) == 0:
        raise RegistrationError("registration error needs nonempty clouds")
    moved = pre_op.points @ t.rotation.T + t.translation
    tree = cKDTree(recon.points)
    _, idx = tree.query(moved)
    diff = moved - recon.points[idx]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
