import numpy as np
import pytest

from arguard.geometry import (PointCloud, RigidTransform, TriangleMesh,
                              invert, rotation_angle, rotvec_to_matrix)
from arguard.registration import (IcpParams, RansacRegParams,
                                  RegistrationError, compute_descriptors,
                                  estimate_normals, icp_register,
                                  ransac_global_register, registration_error,
                                  sample_mesh_points, voxel_downsample)
from arguard.simscene import VesselSpec, build_vessel_mesh


def vessel_cloud(n=2000, seed=0):
    spec = VesselSpec(control_points=[[-0.05, 0.01, 0.0], [-0.015, 0.0, 0.004],
                                      [0.02, 0.008, -0.006], [0.05, -0.005, 0.0]])
    mesh = build_vessel_mesh(spec)
    return sample_mesh_points(mesh, n, seed=seed)


class TestMeshSampling:
    def test_single_triangle_on_plane(self):
        mesh = TriangleMesh(vertices=[[0, 0, 0.01], [0.1, 0, 0.01], [0, 0.1, 0.01]],
                            faces=[[0, 1, 2]])
        cloud = sample_mesh_points(mesh, 500, seed=1)
        assert np.max(np.abs(cloud.points[:, 2] - 0.01)) < 1e-12
        # Barycentric containment.
        assert (cloud.points[:, 0] >= -1e-12).all()
        assert (cloud.points[:, 1] >= -1e-12).all()
        assert (cloud.points[:, 0] + cloud.points[:, 1] <= 0.1 + 1e-12).all()

    def test_area_proportional_allocation(self):
        mesh = TriangleMesh(
            vertices=[[0, 0, 0], [3, 0, 0], [0, 3, 0],      # area 4.5
                      [10, 0, 0], [11, 0, 0], [10, 1, 0]],  # area 0.5
            faces=[[0, 1, 2], [3, 4, 5]])
        n = 10000
        cloud = sample_mesh_points(mesh, n, seed=2)
        big = np.sum(cloud.points[:, 0] < 5)
        sigma = np.sqrt(n * 0.9 * 0.1)
        assert abs(big - 9000) < 3 * sigma

    def test_zero_samples(self):
        mesh = TriangleMesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]],
                            faces=[[0, 1, 2]])
        assert len(sample_mesh_points(mesh, 0)) == 0

    def test_degenerate_mesh_rejected(self):
        mesh = TriangleMesh(vertices=[[0, 0, 0], [1, 0, 0], [2, 0, 0]],
                            faces=[[0, 1, 2]])
        with pytest.raises(RegistrationError):
            sample_mesh_points(mesh, 10)


class TestNormals:
    def test_plane_normals_oriented_to_viewpoint(self):
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(-0.05, 0.05, 200),
                               rng.uniform(-0.05, 0.05, 200),
                               np.full(200, 0.1)])
        cloud = estimate_normals(PointCloud(points=pts, frame="ECM"), k=8)
        # Plane at z=0.1 seen from the origin: normals point back at -z.
        assert np.max(np.abs(np.abs(cloud.normals[:, 2]) - 1.0)) < 1e-6
        assert (cloud.normals[:, 2] < 0).all()

    def test_cylinder_normals_radial(self):
        theta = np.linspace(0, 2 * np.pi, 120, endpoint=False)
        zs = np.linspace(-0.02, 0.02, 30)
        pts = []
        for z in zs:
            for t in theta:
                pts.append([0.01 * np.cos(t), 0.01 * np.sin(t), 0.2 + z])
        pts = np.asarray(pts)
        cloud = estimate_normals(PointCloud(points=pts, frame="ECM"), k=8)
        radial = pts.copy()
        radial[:, 2] = 0.0
        radial[:, :2] = pts[:, :2] / np.linalg.norm(pts[:, :2], axis=1, keepdims=True)
        cosang = np.abs(np.einsum("ni,ni->n", cloud.normals, radial))
        assert np.all(cosang > np.cos(np.deg2rad(5.0)))

    def test_k_too_large_rejected(self):
        cloud = PointCloud(points=np.random.default_rng(0).normal(size=(5, 3)),
                           frame="ECM")
        with pytest.raises(RegistrationError):
            estimate_normals(cloud, k=5)


class TestDescriptors:
    def test_deterministic(self):
        cloud = estimate_normals(vessel_cloud(800, seed=4), k=10)
        d1, v1 = compute_descriptors(cloud, 0.008)
        d2, v2 = compute_descriptors(cloud, 0.008)
        assert np.array_equal(d1, d2)
        assert np.array_equal(v1, v2)

    def test_rotation_invariance(self):
        cloud = estimate_normals(vessel_cloud(800, seed=5), k=10)
        d1, _ = compute_descriptors(cloud, 0.008)
        t = RigidTransform(rotvec_to_matrix([0.4, -1.1, 0.7]),
                           [0.02, -0.05, 0.08], "ECM", "ECM")
        moved = PointCloud(points=t.apply(cloud.points), frame="ECM",
                           normals=cloud.normals @ t.rotation.T)
        d2, _ = compute_descriptors(moved, 0.008)
        assert np.max(np.abs(d1 - d2)) < 1e-6

    def test_isolated_point_flagged(self):
        pts = np.vstack([vessel_cloud(300, seed=6).points, [[10.0, 10.0, 10.0]]])
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        cloud = PointCloud(points=pts, frame="ECM", normals=normals)
        desc, valid = compute_descriptors(cloud, 0.008)
        assert not valid[-1]
        assert np.all(desc[-1] == 0)

    def test_bad_radius_rejected(self):
        cloud = estimate_normals(vessel_cloud(300, seed=7), k=8)
        with pytest.raises(RegistrationError):
            compute_descriptors(cloud, 0.0)


class TestVoxelDownsample:
    def test_reduces_and_preserves_points(self):
        cloud = vessel_cloud(3000, seed=8)
        down = voxel_downsample(cloud, 0.002)
        assert 0 < len(down) < len(cloud)
        original = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in original for p in down.points)


def prepared(cloud):
    with_normals = estimate_normals(cloud, k=10)
    desc, _ = compute_descriptors(with_normals, 0.008)
    return with_normals, desc


class TestGlobalRegistration:
    def test_identity_when_src_equals_dst(self):
        cloud, desc = prepared(vessel_cloud(1200, seed=9))
        result = ransac_global_register(cloud, cloud, desc, desc,
                                        RansacRegParams(seed=0))
        assert result.fitness > 0.99
        assert rotation_angle(result.transform.rotation) < 0.05
        assert np.linalg.norm(result.transform.translation) < 0.003

    def test_ninety_degree_five_cm_displacement(self):
        src, src_desc = prepared(vessel_cloud(1500, seed=10))
        t_true = RigidTransform(rotvec_to_matrix([0.0, 0.0, np.pi / 2]),
                                [0.03, -0.03, 0.02], "ECM", "ECM")
        dst = PointCloud(points=t_true.apply(src.points), frame="ECM",
                         normals=src.normals @ t_true.rotation.T)
        dst_desc, _ = compute_descriptors(dst, 0.008)
        coarse = ransac_global_register(src, dst, src_desc, dst_desc,
                                        RansacRegParams(seed=1))
        fine = icp_register(src, dst, coarse.transform, IcpParams())
        assert fine.rmse_m < 1e-4
        assert rotation_angle(fine.transform.rotation.T @ t_true.rotation) < 1e-4

    def test_two_points_rejected(self):
        cloud = PointCloud(points=[[0, 0, 0], [1, 0, 0]], frame="ECM")
        with pytest.raises(RegistrationError):
            ransac_global_register(cloud, cloud, np.zeros((2, 33)),
                                   np.zeros((2, 33)))


class TestIcp:
    def test_identity_fixed_point(self):
        cloud = vessel_cloud(1000, seed=11)
        result = icp_register(cloud, cloud, RigidTransform.identity("ECM"))
        assert result.rmse_m < 1e-12
        assert rotation_angle(result.transform.rotation) < 1e-9

    def test_recovers_small_planted_transform(self):
        src = vessel_cloud(1500, seed=12)
        t_true = RigidTransform(rotvec_to_matrix([0.05, -0.04, 0.06]),  # ~5 deg
                                [0.003, -0.004, 0.002], "ECM", "ECM")
        dst = PointCloud(points=t_true.apply(src.points), frame="ECM")
        result = icp_register(src, dst, RigidTransform.identity("ECM"))
        assert result.rmse_m < 1e-6
        assert rotation_angle(result.transform.rotation.T @ t_true.rotation) < 1e-6
        assert np.max(np.abs(result.transform.translation - t_true.translation)) < 1e-6

    def test_rmse_history_monotone(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            src = vessel_cloud(800, seed=20 + trial)
            t_true = RigidTransform(rotvec_to_matrix(rng.normal(size=3) * 0.03),
                                    rng.normal(size=3) * 0.002, "ECM", "ECM")
            dst = PointCloud(points=t_true.apply(src.points), frame="ECM")
            result = icp_register(src, dst, RigidTransform.identity("ECM"))
            diffs = np.diff(result.rmse_history)
            assert np.all(diffs <= 1e-12)

    def test_out_of_range_init_rejected(self):
        src = vessel_cloud(200, seed=14)
        dst = PointCloud(points=src.points + [1.0, 0, 0], frame="ECM")
        with pytest.raises(RegistrationError):
            icp_register(src, dst, RigidTransform.identity("ECM"))

    def test_empty_cloud_rejected(self):
        empty = PointCloud(points=np.empty((0, 3)), frame="ECM")
        src = vessel_cloud(100, seed=15)
        with pytest.raises(RegistrationError):
            icp_register(src, empty, RigidTransform.identity("ECM"))

    def test_deterministic_result(self):
        src = vessel_cloud(600, seed=16)
        t_true = RigidTransform(rotvec_to_matrix([0.02, 0.03, -0.01]),
                                [0.002, 0.001, -0.003], "ECM", "ECM")
        dst = PointCloud(points=t_true.apply(src.points), frame="ECM")
        r1 = icp_register(src, dst, RigidTransform.identity("ECM"))
        r2 = icp_register(src, dst, RigidTransform.identity("ECM"))
        assert np.array_equal(r1.transform.rotation, r2.transform.rotation)
        assert np.array_equal(r1.transform.translation, r2.transform.translation)
        assert r1.rmse_history == r2.rmse_history


class TestRegistrationErrorMetric:
    def test_exact_alignment_is_zero(self):
        pre = vessel_cloud(800, seed=17)
        t = RigidTransform(rotvec_to_matrix([0.1, 0.2, 0.3]),
                           [0.01, 0.02, 0.03], "BL", "ECM")
        pre_bl = PointCloud(points=pre.points, frame="BL")
        recon = PointCloud(points=t.apply(pre.points), frame="ECM")
        assert registration_error(pre_bl, recon, t) < 1e-12

    def test_uniform_normal_offset(self):
        # Exact sphere samples: a uniform outward offset then leaves every
        # nearest-neighbor pairing at precisely the offset distance.
        rng = np.random.default_rng(18)
        dirs = rng.normal(size=(400, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = 0.02 * dirs
        t = RigidTransform(rotvec_to_matrix([0.2, -0.1, 0.4]),
                           [0.05, 0.01, -0.02], "BL", "ECM")
        moved = t.apply(pts)
        outward = moved - t.translation
        outward /= np.linalg.norm(outward, axis=1, keepdims=True)
        recon = PointCloud(points=moved + 0.001 * outward, frame="ECM")
        pre_bl = PointCloud(points=pts, frame="BL")
        err = registration_error(pre_bl, recon, t)
        assert abs(err - 0.001) < 1e-9

    def test_empty_rejected(self):
        empty = PointCloud(points=np.empty((0, 3)), frame="ECM")
        cloud = vessel_cloud(50, seed=19)
        with pytest.raises(RegistrationError):
            registration_error(cloud, empty, RigidTransform.identity("ECM"))
