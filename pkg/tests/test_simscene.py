import numpy as np
import pytest

from arguard.formats import FormatError, read_pfm, read_pgm
from arguard.geometry import invert, compose
from arguard.raster import rasterize_triangles
from arguard.reconstruction import disparity_to_depth, reproject_to_cloud
from arguard.registration import sample_mesh_points
from arguard.simscene import (ArmKeyframe, NoiseSpec, SceneError,
                              SceneSimulator, TrajectoryScript, VesselSpec,
                              apply_noise, build_vessel_mesh, default_scene,
                              evaluate_script, export_dataset, import_dataset,
                              lymphadenectomy_script, tube_mesh)
from scipy.spatial import cKDTree


class TestVesselMesh:
    def test_straight_centerline_is_cylinder(self):
        spec = VesselSpec(control_points=[[0, 0, 0], [0, 0, 0.1]],
                          radius_m=0.004, radial_segments=12, axial_segments=10)
        mesh = build_vessel_mesh(spec)
        ring_verts = mesh.vertices[:-2]  # cap centers appended last
        rad = np.linalg.norm(ring_verts[:, :2], axis=1)
        assert np.max(np.abs(rad - 0.004)) < 1e-9

    def test_triangle_count(self):
        spec = VesselSpec(control_points=[[0, 0, 0], [0, 0, 0.1]],
                          radial_segments=12, axial_segments=10)
        mesh = build_vessel_mesh(spec)
        assert len(mesh.faces) == 2 * 12 * 10 + 2 * 12  # tube + two cap fans

    def test_curved_centerline_vertices_near_tube(self):
        spec = VesselSpec(control_points=[[-0.05, 0.01, 0.1], [-0.02, 0, 0.11],
                                          [0.02, 0.01, 0.09], [0.05, 0, 0.1]],
                          radius_m=0.005)
        mesh = build_vessel_mesh(spec)
        from arguard.simscene import _catmull_rom
        dense = _catmull_rom(spec.control_points, 4000)
        tree = cKDTree(dense)
        ring_verts = mesh.vertices[:-2]
        d, _ = tree.query(ring_verts)
        assert np.all(d > 0.999 * 0.005)
        assert np.all(d < 1.001 * 0.005)

    def test_outward_normals(self):
        spec = VesselSpec(control_points=[[0, 0, 0], [0, 0, 0.1]],
                          radial_segments=12, axial_segments=6)
        mesh = build_vessel_mesh(spec)
        normals = mesh.face_normals()
        centroids = mesh.vertices[mesh.faces].mean(axis=1)
        n_tube = 2 * 12 * 6
        # Tube faces point away from the axis.
        outward = centroids[:n_tube].copy()
        outward[:, 2] = 0.0
        outward /= np.linalg.norm(outward, axis=1, keepdims=True)
        dots = np.einsum("ni,ni->n", normals[:n_tube], outward)
        assert np.all(dots > 0.3)
        # Cap fans (interleaved start/end) point along -z and +z.
        caps = normals[n_tube:]
        assert np.all(caps[0::2, 2] < -0.99)
        assert np.all(caps[1::2, 2] > 0.99)

    def test_self_intersection_rejected(self):
        spec = VesselSpec(control_points=[[0, 0, 0], [0.004, 0, 0],
                                          [0, 0.0015, 0], [-0.004, 0, 0]],
                          radius_m=0.004)
        with pytest.raises(SceneError):
            build_vessel_mesh(spec)


class TestRasterizer:
    def test_flat_plane_depth_exact(self):
        # Two triangles covering a known pixel block at z = 0.1.
        z = 0.1
        uv = np.array([[10.0, 10.0], [40.0, 10.0], [40.0, 30.0], [10.0, 30.0]])
        inv_z = np.full(4, 1.0 / z)
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        zb, ib = rasterize_triangles(uv, inv_z, faces, 64, 48, np.array([0, 1]))
        covered = ib >= 0
        assert covered[15, 20]
        assert np.allclose(1.0 / zb[covered], z)
        # Exactly the half-open pixel block [10, 40) x [10, 30).
        ys, xs = np.nonzero(covered)
        assert xs.min() == 10 and xs.max() == 39
        assert ys.min() == 10 and ys.max() == 29
        assert covered.sum() == 30 * 20

    def test_shared_edge_no_double_coverage(self):
        uv = np.array([[5.0, 5.0], [25.0, 7.0], [22.0, 28.0], [3.0, 24.0]])
        inv_z = np.array([5.0, 6.0, 7.0, 8.0])
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        zb, ib = rasterize_triangles(uv, inv_z, faces, 40, 40, np.array([0, 1]))
        both = rasterize_triangles(uv, inv_z, faces[:1], 40, 40, np.array([0]))[1]
        other = rasterize_triangles(uv, inv_z, faces[1:], 40, 40, np.array([1]))[1]
        overlap = (both >= 0) & (other >= 0)
        assert not overlap.any()
        union = (both >= 0) | (other >= 0)
        assert np.array_equal(ib >= 0, union)

    def test_tilted_plane_matches_analytic_depth(self):
        # Plane z = 0.1 + 0.0004 x + 0.0002 y in camera coords; vertices on
        # the plane projected with f=100, c=(32, 24).
        f, cx, cy = 100.0, 32.0, 24.0

        def on_plane(u, v):
            # Solve for depth where the pixel ray meets the plane.
            xn, yn = (u - cx) / f, (v - cy) / f
            z = 0.1 / (1.0 - 0.0004 * 100 * xn - 0.0002 * 100 * yn)
            return np.array([xn * z, yn * z, z])

        corners_uv = [(10.0, 8.0), (52.0, 10.0), (48.0, 40.0)]
        pts = np.array([on_plane(u, v) for u, v in corners_uv])
        uv = np.stack([f * pts[:, 0] / pts[:, 2] + cx,
                       f * pts[:, 1] / pts[:, 2] + cy], axis=1)
        zb, ib = rasterize_triangles(uv, 1.0 / pts[:, 2], np.array([[0, 1, 2]]),
                                     64, 48, np.array([0]))
        ys, xs = np.nonzero(ib >= 0)
        for x, y in zip(xs, ys):
            expect = on_plane(float(x), float(y))[2]
            assert abs(1.0 / zb[y, x] - expect) < 1e-9

    def test_nearer_triangle_wins(self):
        uv = np.array([[5.0, 5.0], [30.0, 5.0], [5.0, 30.0],
                       [6.0, 6.0], [31.0, 6.0], [6.0, 31.0]])
        inv_z = np.array([10.0, 10.0, 10.0, 20.0, 20.0, 20.0])
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        zb, ib = rasterize_triangles(uv, inv_z, faces, 40, 40, np.array([0, 1]))
        # Wherever both cover, the nearer (higher inv z) id 1 wins.
        only_far = rasterize_triangles(uv, inv_z, faces[:1], 40, 40,
                                       np.array([0]))[1] >= 0
        near = rasterize_triangles(uv, inv_z, faces[1:], 40, 40,
                                   np.array([1]))[1] >= 0
        assert np.all(ib[only_far & near] == 1)

    def test_behind_camera_culled(self):
        uv = np.array([[5.0, 5.0], [30.0, 5.0], [5.0, 30.0]])
        inv_z = np.array([10.0, -1.0, 10.0])
        zb, ib = rasterize_triangles(uv, inv_z, np.array([[0, 1, 2]]), 40, 40,
                                     np.array([0]))
        assert not (ib >= 0).any()


class TestSimulator:
    def setup_method(self):
        self.scene = default_scene()
        self.sim = SceneSimulator(self.scene)
        self.script = lymphadenectomy_script(self.scene)

    def instruments(self, t=10.0):
        state = evaluate_script(self.script, t)
        return {"left": state.left, "right": state.right}

    def test_ground_truth_eq1_consistency(self):
        views = self.sim.render(self.instruments())
        rect = self.scene.rig.rectified
        depth = disparity_to_depth(views.disp_gt, rect.baseline_m, rect.focal_px)
        valid = np.isfinite(views.depth_gt)
        assert np.array_equal(np.isfinite(depth), valid)
        assert np.array_equal(depth[valid], views.depth_gt[valid])

    def test_determinism(self):
        v1 = self.sim.render(self.instruments())
        v2 = self.sim.render(self.instruments())
        assert np.array_equal(v1.left_image, v2.left_image)
        assert np.array_equal(v1.disp_gt[np.isfinite(v1.disp_gt)],
                              v2.disp_gt[np.isfinite(v2.disp_gt)])
        assert np.array_equal(v1.mask_gt, v2.mask_gt)

    def test_mask_matches_raycast_oracle(self):
        views = self.sim.render(self.instruments())
        rng = np.random.default_rng(0)
        # Gather all scene triangles in the rectified-left frame.
        tris = []
        is_vessel = []
        meshes = [(self.sim.vessel_mesh, True)]
        for active, m in zip(self.sim.node_active, self.sim.node_meshes):
            if active:
                meshes.append((m, False))
        if self.scene.kidney is not None:
            meshes.append((self.scene.kidney, False))
        for key, inst in sorted(self.instruments().items()):
            from arguard.simscene import instrument_mesh
            meshes.append((instrument_mesh(inst), False))
        for mesh, flag in meshes:
            v = self.sim.t_ecm_recl.apply(mesh.vertices)
            tris.append(v[mesh.faces])
            is_vessel.extend([flag] * len(mesh.faces))
        tris = np.concatenate(tris)
        is_vessel = np.asarray(is_vessel)
        k = self.scene.rig.rectified.k_rect
        h, w = views.mask_gt.shape
        for _ in range(120):
            u = int(rng.integers(0, w))
            v_ = int(rng.integers(0, h))
            ray = np.array([(u - k.cx) / k.fx, (v_ - k.cy) / k.fy, 1.0])
            # Moller-Trumbore over all triangles.
            e1 = tris[:, 1] - tris[:, 0]
            e2 = tris[:, 2] - tris[:, 0]
            pvec = np.cross(ray, e2)
            det = np.einsum("ni,ni->n", e1, pvec)
            ok = np.abs(det) > 1e-14
            tvec = -tris[:, 0]
            uu = np.einsum("ni,ni->n", tvec, pvec) / np.where(ok, det, 1.0)
            qvec = np.cross(tvec, e1)
            vv = np.dot(qvec, ray) / np.where(ok, det, 1.0)
            tt = np.einsum("ni,ni->n", e2, qvec) / np.where(ok, det, 1.0)
            hit = ok & (uu >= -1e-9) & (vv >= -1e-9) & (uu + vv <= 1 + 1e-9) & (tt > 0)
            if not hit.any():
                assert views.mask_gt[v_, u] == 0
                continue
            nearest = np.argmin(np.where(hit, tt, np.inf))
            expect_vessel = bool(is_vessel[nearest])
            got_vessel = views.mask_gt[v_, u] > 0
            # Skip pixels razor-close to a silhouette boundary where the
            # ray-cast and rasterizer legitimately disagree by half a pixel.
            margin = np.sort(np.where(hit, tt, np.inf))[:2]
            if np.isfinite(margin[1]) and abs(margin[1] - margin[0]) < 1e-6:
                continue
            assert got_vessel == expect_vessel

    def test_reconstructed_points_on_surfaces(self):
        views = self.sim.render(self.instruments())
        rect = self.scene.rig.rectified
        cloud = reproject_to_cloud(views.depth_gt, rect.k_rect,
                                   select=views.mask_gt > 0)
        surface = sample_mesh_points(self.sim.vessel_mesh, 200_000, seed=1)
        surface_recl = self.sim.t_ecm_recl.apply(surface.points)
        tree = cKDTree(surface_recl)
        d, _ = tree.query(cloud.points[::7])
        # Half-pixel footprint at 10 cm with f=700 is ~0.07 mm; allow the
        # surface-sampling gap on top.
        assert np.percentile(d, 99) < 5e-4
        assert d.max() < 1.5e-3

    def test_empty_scene_renders_nothing(self):
        scene = default_scene(n_nodes=0)
        behind = VesselSpec(control_points=(
            invert(compose(scene.t_ecm_lcam, scene.rig.rectified.r_left))
            .apply(np.array([[0.0, 0.0, -0.5], [0.0, 0.0, -0.4]]))))
        empty = default_scene(n_nodes=0)
        empty.vessel = behind
        empty.kidney = None
        sim = SceneSimulator(empty)
        views = sim.render()
        assert not np.isfinite(views.depth_gt).any()
        assert not views.mask_gt.any()

    def test_node_removal_changes_render(self):
        v1 = self.sim.render(self.instruments())
        self.sim.set_node_active(0, False)
        v2 = self.sim.render(self.instruments())
        assert not np.array_equal(v1.left_image, v2.left_image)
        self.sim.set_node_active(0, True)


class TestNoise:
    def setup_method(self):
        scene = default_scene()
        self.sim = SceneSimulator(scene)
        self.views = self.sim.render()

    def test_zero_spec_is_identity(self):
        out = apply_noise(self.views, NoiseSpec(), seed=1)
        v = np.isfinite(self.views.disp_gt)
        assert np.array_equal(out.disp_gt[v], self.views.disp_gt[v])
        assert np.array_equal(out.mask_gt, self.views.mask_gt)

    def test_gaussian_noise_mean(self):
        spec = NoiseSpec(disp_sigma_px=0.5)
        out = apply_noise(self.views, spec, seed=2)
        v = np.isfinite(self.views.disp_gt) & np.isfinite(out.disp_gt)
        delta = out.disp_gt[v] - self.views.disp_gt[v]
        n = delta.size
        assert abs(delta.mean()) < 3 * 0.5 / np.sqrt(n)
        assert abs(delta.std() - 0.5) < 0.02

    def test_dropout_fraction(self):
        spec = NoiseSpec(disp_dropout=0.1)
        out = apply_noise(self.views, spec, seed=3)
        v_before = np.isfinite(self.views.disp_gt)
        dropped = v_before & ~np.isfinite(out.disp_gt)
        n = int(v_before.sum())
        frac = dropped.sum() / n
        sigma = np.sqrt(0.1 * 0.9 / n)
        assert abs(frac - 0.1) < 3 * sigma

    def test_deterministic_per_seed_and_frame(self):
        spec = NoiseSpec(disp_sigma_px=0.3, disp_dropout=0.05,
                         mask_jitter_px=2, blob_rate=1.0)
        a = apply_noise(self.views, spec, seed=4, frame_index=7)
        b = apply_noise(self.views, spec, seed=4, frame_index=7)
        c = apply_noise(self.views, spec, seed=4, frame_index=8)
        va = np.isfinite(a.disp_gt)
        assert np.array_equal(va, np.isfinite(b.disp_gt))
        assert np.array_equal(a.disp_gt[va], b.disp_gt[va])
        assert np.array_equal(a.mask_gt, b.mask_gt)
        assert not np.array_equal(a.mask_gt, c.mask_gt) or not np.array_equal(
            np.isfinite(a.disp_gt), np.isfinite(c.disp_gt))

    def test_quantization(self):
        spec = NoiseSpec(disp_quant_px=0.25)
        out = apply_noise(self.views, spec, seed=5)
        v = np.isfinite(out.disp_gt)
        q = out.disp_gt[v] / 0.25
        assert np.max(np.abs(q - np.round(q))) < 1e-9


class TestScript:
    def make_script(self):
        return TrajectoryScript(
            left=[ArmKeyframe(0.0, [0, 0, 0.1]), ArmKeyframe(2.0, [0.02, 0, 0.1]),
                  ArmKeyframe(5.0, [0.02, 0.03, 0.08])],
            right=[ArmKeyframe(0.0, [0.05, 0, 0.1]), ArmKeyframe(5.0, [0.05, 0.01, 0.1])],
            left_rcm=[0, -0.05, 0.02], right_rcm=[0.05, -0.05, 0.02])

    def test_keyframe_exact(self):
        s = evaluate_script(self.make_script(), 2.0)
        assert np.allclose(s.left.ee, [0.02, 0, 0.1])

    def test_midpoint_mean(self):
        s = evaluate_script(self.make_script(), 1.0)
        assert np.allclose(s.left.ee, [0.01, 0, 0.1])

    def test_rcm_fixed(self):
        script = self.make_script()
        for t in (0.0, 1.3, 4.9):
            s = evaluate_script(script, t)
            assert np.array_equal(s.left.rcm, script.left_rcm)

    def test_path_length_consistency(self):
        script = self.make_script()
        ts = np.linspace(0, 5, 5001)
        pts = np.array([evaluate_script(script, float(t)).left.ee for t in ts])
        dense_len = np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
        keys = np.array([[0, 0, 0.1], [0.02, 0, 0.1], [0.02, 0.03, 0.08]])
        seg_len = np.sum(np.linalg.norm(np.diff(keys, axis=0), axis=1))
        assert abs(dense_len - seg_len) < 1e-9

    def test_out_of_range_rejected(self):
        with pytest.raises(SceneError):
            evaluate_script(self.make_script(), 5.1)

    def test_non_increasing_times_rejected(self):
        with pytest.raises(SceneError):
            TrajectoryScript(left=[ArmKeyframe(0.0, [0, 0, 0]),
                                   ArmKeyframe(0.0, [1, 0, 0])],
                             right=[ArmKeyframe(0.0, [0, 0, 0]),
                                    ArmKeyframe(1.0, [0, 0, 0])],
                             left_rcm=[0, 0, 0], right_rcm=[0, 0, 0])

    def test_lymphadenectomy_script_shape(self):
        scene = default_scene()
        script = lymphadenectomy_script(scene)
        assert len(script.pickups) == 10
        t0, t1 = script.span()
        s_start = evaluate_script(script, t0)
        s_end = evaluate_script(script, t1)
        assert np.allclose(s_start.left.ee, s_end.left.ee)


class TestDataset:
    def test_export_import_round_trip(self, tmp_path):
        scene = default_scene(n_nodes=4)
        script = lymphadenectomy_script(scene, seconds_per_pick=2.0)
        export_dataset(scene, script, 16, tmp_path, seed=0)
        dirs = sorted(p for p in tmp_path.iterdir() if p.is_dir())
        assert len(dirs) == 16
        for d in dirs:
            names = sorted(p.name for p in d.iterdir())
            assert names == ["depth_gt.pfm", "disp_gt.pfm", "left.pgm",
                             "mask_gt.pgm", "rig.json", "right.pgm"]
        frames = import_dataset(tmp_path)
        assert len(frames) == 16
        # Raster round trip is bitwise against a re-render.
        sim = SceneSimulator(scene)
        t0, t1 = script.span()
        times = np.linspace(t0, t1, 16)
        state = evaluate_script(script, float(times[3]))
        views = sim.render({"left": state.left, "right": state.right})
        disp_file = read_pfm(dirs[3] / "disp_gt.pfm")
        v = np.isfinite(views.disp_gt)
        assert np.array_equal(np.isfinite(disp_file), v)
        assert np.array_equal(disp_file[v], views.disp_gt[v])
        assert np.array_equal(read_pgm(dirs[3] / "mask_gt.pgm"), views.mask_gt)
        # Poses survive within 1e-12 through JSON.
        f3 = frames[3]
        raw_left = np.asarray(f3.instruments["left"]["ee_m"])
        recovered = f3.t_ee1_ee2.apply(raw_left)
        assert np.max(np.abs(recovered - state.left.ee)) < 1e-12

    def test_truncated_pfm_reports_file(self, tmp_path):
        scene = default_scene(n_nodes=2)
        script = lymphadenectomy_script(scene, seconds_per_pick=1.0)
        export_dataset(scene, script, 2, tmp_path, seed=0)
        target = tmp_path / "000001" / "disp_gt.pfm"
        data = target.read_bytes()
        target.write_bytes(data[:-100])
        with pytest.raises(FormatError, match="disp_gt.pfm"):
            read_pfm(target)


class TestRasterizerBackends:
    def test_numba_and_numpy_paths_bit_identical(self):
        import arguard.raster as raster_mod
        if not raster_mod.HAVE_NUMBA:
            pytest.skip("numba unavailable")
        rng = np.random.default_rng(42)
        for trial in range(5):
            uv = rng.uniform(-15, 80, size=(200, 2))
            inv_z = rng.uniform(4.0, 25.0, size=200)
            faces = rng.integers(0, 200, size=(150, 3))
            ids = rng.permutation(150)
            args = (uv, inv_z, faces, 72, 52, ids)
            zb1, ib1 = rasterize_triangles(*args)
            raster_mod.HAVE_NUMBA = False
            try:
                zb2, ib2 = rasterize_triangles(*args)
            finally:
                raster_mod.HAVE_NUMBA = True
            assert np.array_equal(zb1, zb2)
            assert np.array_equal(ib1, ib2)
