"""Unit tests for projection, triangulation, P3P, RANSAC and pose metrics."""

from __future__ import annotations

import numpy as np
import pytest

from screloc.geometry import (
    CameraIntrinsics,
    Correspondence2D3D,
    DegenerateGeometry,
    LocalizationFailure,
    RansacConfig,
    RigidPose,
    matrix_to_quaternion,
    pnp_minimal,
    pose_error,
    project,
    project_many,
    quaternion_to_matrix,
    ransac_pnp,
    refine_pose,
    reprojection_error,
    triangulate_dlt,
    unproject,
)

K100 = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
K640 = CameraIntrinsics(fx=554.256, fy=554.256, cx=320.0, cy=240.0)


def random_pose(rng: np.random.Generator, center_radius: float = 4.0) -> RigidPose:
    """A camera a few meters from the origin, looking roughly at it."""
    q = rng.standard_normal(4)
    R_jitter = quaternion_to_matrix(q * 0.05 + np.array([1.0, 0, 0, 0]))
    center = rng.uniform(-1, 1, 3)
    center = center / np.linalg.norm(center) * center_radius
    # Look-at: camera z axis toward the origin.
    z = -center / np.linalg.norm(center)
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = R_jitter @ np.stack([x, y, z])
    return RigidPose(R, -R @ center)


class TestProject:
    def test_optical_axis_point_hits_principal_point(self):
        px = project(K100, RigidPose.identity(), np.array([0.0, 0.0, 2.0]))
        np.testing.assert_allclose(px, [50.0, 50.0])

    def test_offset_point(self):
        px = project(K100, RigidPose.identity(), np.array([1.0, 0.0, 2.0]))
        np.testing.assert_allclose(px, [100.0, 50.0])

    def test_behind_camera_returns_none(self):
        assert project(K100, RigidPose.identity(), np.array([0.0, 0.0, -1.0])) is None

    def test_zero_depth_returns_none(self):
        assert project(K100, RigidPose.identity(), np.array([1.0, 1.0, 0.0])) is None

    def test_project_many_matches_scalar(self):
        rng = np.random.default_rng(7)
        pose = random_pose(rng)
        pts = rng.uniform(-1, 1, (20, 3))
        px, z = project_many(K640, pose, pts)
        for i, p in enumerate(pts):
            single = project(K640, pose, p)
            if single is None:
                assert z[i] <= 0
            else:
                np.testing.assert_allclose(px[i], single, atol=1e-12)


class TestReprojectionError:
    def test_exact_projection_is_zero(self):
        y = np.array([0.3, -0.2, 3.0])
        x = project(K100, RigidPose.identity(), y)
        assert reprojection_error(x, y, RigidPose.identity(), K100) == pytest.approx(0.0, abs=1e-12)

    def test_l1_norm_of_offset(self):
        y = np.array([0.0, 0.0, 2.0])
        x = project(K100, RigidPose.identity(), y) + np.array([3.0, -4.0])
        assert reprojection_error(x, y, RigidPose.identity(), K100) == pytest.approx(7.0)

    def test_matches_componentwise_recomputation(self):
        # Independent oracle: recompute the projection scalar by scalar.
        rng = np.random.default_rng(11)
        for _ in range(50):
            pose = random_pose(rng)
            y = rng.uniform(-1, 1, 3)
            q = pose.rotation @ y + pose.translation
            if q[2] <= 0:
                continue
            x = rng.uniform(0, 640, 2)
            u = K640.fx * q[0] / q[2] + K640.cx
            v = K640.fy * q[1] / q[2] + K640.cy
            expected = abs(x[0] - u) + abs(x[1] - v)
            assert reprojection_error(x, y, pose, K640) == pytest.approx(expected, abs=1e-12)

    def test_zero_for_all_projectable_points(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            pose = random_pose(rng)
            y = rng.uniform(-1.5, 1.5, 3)
            px = project(K640, pose, y)
            if px is None:
                continue
            assert reprojection_error(px, y, pose, K640) < 1e-10


class TestUnproject:
    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        pose = random_pose(rng)
        y = rng.uniform(-1, 1, 3)
        q = pose.transform(y)
        px = project(K640, pose, y)
        back = unproject(K640, pose, px, float(q[2]))
        np.testing.assert_allclose(back, y, atol=1e-10)


class TestRigidPose:
    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(2)
        p = random_pose(rng)
        ident = p.compose(p.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ident.translation, 0.0, atol=1e-12)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidPose(np.eye(3) * 1.001, np.zeros(3))

    def test_quaternion_roundtrip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            R = quaternion_to_matrix(q)
            q2 = matrix_to_quaternion(R)
            np.testing.assert_allclose(quaternion_to_matrix(q2), R, atol=1e-12)


class TestTriangulateDlt:
    def test_exact_two_view(self):
        rng = np.random.default_rng(21)
        y = np.array([0.4, -0.3, 0.6])
        obs = []
        while len(obs) < 2:
            pose = random_pose(rng)
            px = project(K640, pose, y)
            if px is not None:
                obs.append((px, K640, pose))
        est = triangulate_dlt(obs)
        np.testing.assert_allclose(est, y, atol=1e-8)

    def test_noisy_five_view_within_monte_carlo_bound(self):
        # Oracle: repeat the triangulation over 100 independent noise draws
        # and require each estimate to stay within 6 sigma of the truth,
        # with sigma estimated from the run itself.
        rng = np.random.default_rng(22)
        y = np.array([0.2, 0.5, -0.1])
        poses = []
        while len(poses) < 5:
            pose = random_pose(rng)
            if project(K640, pose, y) is not None:
                poses.append(pose)
        estimates = []
        for _ in range(100):
            obs = []
            for pose in poses:
                px = project(K640, pose, y) + rng.normal(0, 0.5, 2)
                obs.append((px, K640, pose))
            estimates.append(triangulate_dlt(obs))
        estimates = np.array(estimates)
        spread = np.linalg.norm(estimates - y, axis=1)
        sigma = np.sqrt(np.mean(spread**2))
        assert sigma < 0.05  # 0.5 px noise at ~4 m with 5 views stays sub-5cm
        assert spread.max() < 6 * sigma + 1e-9

    def test_same_center_raises(self):
        pose = RigidPose.identity()
        obs = [
            (np.array([320.0, 240.0]), K640, pose),
            (np.array([400.0, 240.0]), K640, pose),
        ]
        with pytest.raises(DegenerateGeometry):
            triangulate_dlt(obs)

    def test_single_observation_raises(self):
        with pytest.raises(DegenerateGeometry):
            triangulate_dlt([(np.array([1.0, 1.0]), K640, RigidPose.identity())])


def synthesize_correspondences(
    rng: np.random.Generator, pose: RigidPose, n: int, K: CameraIntrinsics
) -> list[Correspondence2D3D]:
    corrs = []
    while len(corrs) < n:
        y = rng.uniform(-1.5, 1.5, 3)
        px = project(K, pose, y)
        if px is None:
            continue
        if not (0 <= px[0] < 2 * K.cx and 0 <= px[1] < 2 * K.cy):
            continue
        corrs.append(Correspondence2D3D(px, y))
    return corrs


def pose_gap(a: RigidPose, b: RigidPose) -> float:
    """Elementwise distance between poses; well conditioned near zero, unlike
    the arccos-based angle."""
    return max(
        float(np.abs(a.rotation - b.rotation).max()),
        float(np.abs(a.translation - b.translation).max()),
    )


class TestPnpMinimal:
    def test_recovers_synthesizing_pose(self):
        rng = np.random.default_rng(31)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 4, K640)
        candidates = pnp_minimal(corrs, K640)
        assert min(pose_gap(c, pose) for c in candidates) < 1e-6

    def test_identity_pose_unit_square(self):
        square = [
            np.array([-0.5, -0.5, 5.0]),
            np.array([0.5, -0.5, 5.0]),
            np.array([0.5, 0.5, 5.0]),
            np.array([-0.4, 0.5, 5.0]),  # break the symmetry slightly
        ]
        pose = RigidPose.identity()
        corrs = [Correspondence2D3D(project(K640, pose, p), p) for p in square]
        candidates = pnp_minimal(corrs, K640)
        assert min(pose_gap(c, pose) for c in candidates) < 1e-6

    def test_collinear_points_raise(self):
        pts = [np.array([i * 0.3, 0.0, 4.0]) for i in range(3)]
        pose = RigidPose.identity()
        corrs = [Correspondence2D3D(project(K640, pose, p), p) for p in pts]
        with pytest.raises(DegenerateGeometry):
            pnp_minimal(corrs, K640)

    def test_candidates_reproject_minimal_set(self):
        rng = np.random.default_rng(33)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 3, K640)
        for cand in pnp_minimal(corrs, K640):
            for c in corrs:
                px = project(K640, cand, c.point)
                assert px is not None
                assert np.linalg.norm(px - c.pixel) < 1e-6

    def test_noiseless_recovery_over_many_configurations(self):
        # Quantified over 1000 seeded non-degenerate configurations.
        rng = np.random.default_rng(1234)
        failures = 0
        for _ in range(1000):
            pose = random_pose(rng)
            corrs = synthesize_correspondences(rng, pose, 4, K640)
            try:
                candidates = pnp_minimal(corrs, K640)
            except Exception:
                failures += 1
                continue
            if min(pose_gap(c, pose) for c in candidates) > 1e-6:
                failures += 1
        assert failures == 0


class TestRefinePose:
    def test_perturbed_pose_recovers(self):
        rng = np.random.default_rng(41)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 50, K640)
        # 1 degree / 5 cm perturbation
        dq = np.array([np.cos(np.radians(0.5)), 0.0, 0.0, np.sin(np.radians(0.5))])
        R_pert = quaternion_to_matrix(dq) @ pose.rotation
        t_pert = pose.translation + np.array([0.03, -0.03, 0.02])
        start = RigidPose(R_pert, t_pert)
        refined = refine_pose(start, corrs, K640, iterations=50)
        t_err, r_err = pose_error(refined, pose)
        assert t_err < 1e-6
        assert r_err < 1e-6

    def test_optimal_pose_unchanged(self):
        rng = np.random.default_rng(42)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 30, K640)
        refined = refine_pose(pose, corrs, K640, iterations=20)
        t_err, r_err = pose_error(refined, pose)
        assert t_err < 1e-9
        assert r_err < 1e-9

    def test_zero_iterations_returns_input(self):
        rng = np.random.default_rng(43)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 10, K640)
        out = refine_pose(pose, corrs, K640, iterations=0)
        assert out is pose

    def test_mse_never_increases(self):
        rng = np.random.default_rng(44)
        for _ in range(10):
            pose = random_pose(rng)
            corrs = synthesize_correspondences(rng, pose, 20, K640)
            noisy = [
                Correspondence2D3D(c.pixel + rng.normal(0, 2.0, 2), c.point) for c in corrs
            ]
            start = random_pose(rng)

            def mse(p):
                errs = []
                for c in noisy:
                    px, z = project_many(K640, p, c.point[None])
                    errs.append(1e12 if z[0] <= 0 else np.sum((px[0] - c.pixel) ** 2))
                return np.mean(errs)

            refined = refine_pose(start, noisy, K640, iterations=15)
            assert mse(refined) <= mse(start) + 1e-9


class TestRansacPnp:
    def test_noiseless_all_inliers(self):
        rng = np.random.default_rng(51)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 100, K640)
        est, mask = ransac_pnp(corrs, K640, RansacConfig(rng_seed=9))
        t_err, r_err = pose_error(est, pose)
        assert t_err < 1e-6
        assert r_err < 1e-6
        assert mask.sum() == 100

    def test_half_outliers(self):
        rng = np.random.default_rng(52)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 50, K640)
        for _ in range(50):
            px = rng.uniform(0, [640, 480])
            pt = rng.uniform(-2, 2, 3)
            corrs.append(Correspondence2D3D(px, pt))
        est, mask = ransac_pnp(corrs, K640, RansacConfig(rng_seed=3))
        t_err, r_err = pose_error(est, pose)
        assert t_err < 1e-3
        assert r_err < 0.05
        assert mask[:50].sum() >= 48

    def test_below_minimal_sample_raises(self):
        rng = np.random.default_rng(53)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 3, K640)
        with pytest.raises(LocalizationFailure):
            ransac_pnp(corrs, K640, RansacConfig())

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(54)
        pose = random_pose(rng)
        corrs = synthesize_correspondences(rng, pose, 40, K640)
        for _ in range(20):
            corrs.append(
                Correspondence2D3D(rng.uniform(0, [640, 480]), rng.uniform(-2, 2, 3))
            )
        a_pose, a_mask = ransac_pnp(corrs, K640, RansacConfig(rng_seed=77))
        b_pose, b_mask = ransac_pnp(corrs, K640, RansacConfig(rng_seed=77))
        np.testing.assert_array_equal(a_pose.rotation, b_pose.rotation)
        np.testing.assert_array_equal(a_pose.translation, b_pose.translation)
        np.testing.assert_array_equal(a_mask, b_mask)


class TestPoseError:
    def test_identical_poses(self):
        rng = np.random.default_rng(61)
        pose = random_pose(rng)
        assert pose_error(pose, pose) == (0.0, 0.0)

    def test_pure_rotation_about_center(self):
        rng = np.random.default_rng(62)
        gt = random_pose(rng)
        center = gt.camera_center()
        angle = np.radians(10.0)
        Rz = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0.0],
                [np.sin(angle), np.cos(angle), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        R_new = Rz @ gt.rotation
        est = RigidPose(R_new, -R_new @ center)
        t_err, r_err = pose_error(est, gt)
        assert t_err == pytest.approx(0.0, abs=1e-12)
        assert r_err == pytest.approx(10.0, abs=1e-9)

    def test_pure_translation(self):
        rng = np.random.default_rng(63)
        gt = random_pose(rng)
        center = gt.camera_center() + np.array([0.05, 0.0, 0.0])
        est = RigidPose(gt.rotation, -gt.rotation @ center)
        t_err, r_err = pose_error(est, gt)
        assert t_err == pytest.approx(0.05, abs=1e-12)
        assert r_err == pytest.approx(0.0, abs=1e-9)

    def test_rotation_error_symmetric(self):
        rng = np.random.default_rng(64)
        a, b = random_pose(rng), random_pose(rng)
        assert pose_error(a, b)[1] == pytest.approx(pose_error(b, a)[1], abs=1e-9)
