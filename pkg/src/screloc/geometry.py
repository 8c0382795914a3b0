"""Camera geometry: projection, triangulation, P3P, RANSAC, pose refinement.

Conventions: poses map world coordinates to camera coordinates (x_cam =
R @ x_world + t); pixel coordinates follow the usual u-right / v-down image
frame; the reprojection error exposed as `reprojection_error` is the L1 norm
of the pixel residual, while RANSAC inlier tests and the Levenberg-Marquardt
refinement use the Euclidean norm internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateGeometry(Exception):
    """Input geometry does not constrain the solution (zero baseline, collinear points)."""


class NoSolution(Exception):
    """The minimal solver polynomial has no valid root."""


class LocalizationFailure(Exception):
    """RANSAC could not find a pose supported by at least 4 inliers."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not np.isfinite([self.fx, self.fy, self.cx, self.cy]).all():
            raise ValueError("intrinsics must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    @staticmethod
    def from_array(a: np.ndarray) -> "CameraIntrinsics":
        return CameraIntrinsics(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(q: np.ndarray, t: np.ndarray) -> "RigidPose":
        """Build from a (w, x, y, z) quaternion; q is normalized internally."""
        return RigidPose(quaternion_to_matrix(q), np.asarray(t, dtype=float))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into camera coordinates."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return self ∘ other (apply ``other`` first)."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Correspondence2D3D:
    """A 2D pixel paired with a hypothesized 3D world point."""

    pixel: np.ndarray  # (2,)
    point: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixel, dtype=float).reshape(2)
        pt = np.asarray(self.point, dtype=float).reshape(3)
        object.__setattr__(self, "pixel", px)
        object.__setattr__(self, "point", pt)
        if not (np.isfinite(px).all() and np.isfinite(pt).all()):
            raise ValueError("correspondence entries must be finite")


@dataclass(frozen=True)
class RansacConfig:
    hypothesis_count: int = 64
    inlier_threshold_px: float = 10.0
    refinement_iterations: int = 20
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.hypothesis_count < 1:
            raise ValueError("hypothesis_count must be >= 1")
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier_threshold_px must be positive")
        if self.refinement_iterations < 0:
            raise ValueError("refinement_iterations must be non-negative")


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def project(K: CameraIntrinsics, h: RigidPose, y: np.ndarray) -> np.ndarray | None:
    """Project a world point to pixels; returns None when the camera depth is <= 0."""
    q = h.transform(np.asarray(y, dtype=float).reshape(3))
    if q[2] <= 0:
        return None
    return np.array([K.fx * q[0] / q[2] + K.cx, K.fy * q[1] / q[2] + K.cy])


def project_many(
    K: CameraIntrinsics, h: RigidPose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) world points; returns (pixels (N, 2), depths (N,)).

    Pixels of points with depth <= 0 are NaN; callers mask with the depth array.
    """
    q = np.asarray(points, dtype=float) @ h.rotation.T + h.translation
    z = q[:, 2]
    safe = np.where(z > 0, z, np.nan)
    px = np.stack([K.fx * q[:, 0] / safe + K.cx, K.fy * q[:, 1] / safe + K.cy], axis=1)
    return px, z


def reprojection_error(
    x: np.ndarray, y: np.ndarray, h: RigidPose, K: CameraIntrinsics
) -> float:
    """L1 pixel distance between observation ``x`` and the projection of ``y``.

    Precondition: ``y`` projects in front of the camera (callers screen
    behind-camera points first).
    """
    px = project(K, h, y)
    if px is None:
        raise ValueError("point is behind the camera; screen before calling")
    return float(np.abs(np.asarray(x, dtype=float).reshape(2) - px).sum())


def unproject(K: CameraIntrinsics, h: RigidPose, pixel: np.ndarray, depth: float) -> np.ndarray:
    """World point whose camera-frame depth is ``depth`` projecting to ``pixel``."""
    u, v = np.asarray(pixel, dtype=float).reshape(2)
    q = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    return h.rotation.T @ (q - h.translation)


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------


def triangulate_dlt(
    observations: list[tuple[np.ndarray, CameraIntrinsics, RigidPose]],
    refine_iterations: int = 10,
) -> np.ndarray:
    """Triangulate a 3D point from >= 2 (pixel, intrinsics, pose) observations.

    Homogeneous linear least squares seeds a Gauss-Newton refinement of the
    squared reprojection error, so the result is a local minimum of the mean
    reprojection error. Raises DegenerateGeometry for (near-)zero baselines.
    """
    if len(observations) < 2:
        raise DegenerateGeometry("need at least 2 observations")

    centers = np.array([h.camera_center() for _, _, h in observations])
    spread = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
    if spread < 1e-9 * (1.0 + np.abs(centers).max()):
        raise DegenerateGeometry("camera centers coincide (zero baseline)")

    rows = []
    for pixel, K, h in observations:
        P = K.matrix @ np.hstack([h.rotation, h.translation[:, None]])
        u, v = np.asarray(pixel, dtype=float).reshape(2)
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.array(rows)
    _, s, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X[:3]):
        raise DegenerateGeometry("triangulated point at infinity")
    y = X[:3] / X[3]

    # Gauss-Newton on the stacked pixel residuals, with step halving.
    def residuals(pt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        res = np.zeros(2 * len(observations))
        J = np.zeros((2 * len(observations), 3))
        for i, (pixel, K, h) in enumerate(observations):
            q = h.transform(pt)
            z = q[2]
            if z <= 1e-12:
                res[2 * i : 2 * i + 2] = 1e6
                continue
            u = K.fx * q[0] / z + K.cx
            v = K.fy * q[1] / z + K.cy
            res[2 * i] = pixel[0] - u
            res[2 * i + 1] = pixel[1] - v
            du_dq = np.array([K.fx / z, 0.0, -K.fx * q[0] / z**2])
            dv_dq = np.array([0.0, K.fy / z, -K.fy * q[1] / z**2])
            J[2 * i] = -du_dq @ h.rotation
            J[2 * i + 1] = -dv_dq @ h.rotation
        return res, J

    res, J = residuals(y)
    err = res @ res
    for _ in range(refine_iterations):
        step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        scale = 1.0
        for _ in range(8):
            cand = y + scale * step
            cand_res, cand_J = residuals(cand)
            cand_err = cand_res @ cand_res
            if cand_err < err:
                y, res, J, err = cand, cand_res, cand_J, cand_err
                break
            scale *= 0.5
        else:
            break
        if err < 1e-24:
            break
    return y


# ---------------------------------------------------------------------------
# P3P minimal solver
# ---------------------------------------------------------------------------


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (R, t) with dst ≈ R @ src + t, det(R) = +1."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    H = (src - c_src).T @ (dst - c_dst)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, c_dst - R @ c_src


def pnp_minimal(
    corrs: list[Correspondence2D3D], K: CameraIntrinsics
) -> list[RigidPose]:
    """Candidate poses from 3 correspondences (Grunert's P3P).

    Accepts 3 or 4 correspondences; with 4, the extra point sorts candidates
    by its reprojection error (best first) to disambiguate the up-to-4 roots.
    Raises DegenerateGeometry for collinear points and NoSolution when the
    quartic has no geometrically valid root.
    """
    if len(corrs) not in (3, 4):
        raise ValueError("pnp_minimal takes 3 or 4 correspondences")
    pts = np.array([c.point for c in corrs[:3]])
    pix = np.array([c.pixel for c in corrs[:3]])

    scale = max(1.0, np.abs(pts).max())
    area2 = np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    if area2 < 1e-9 * scale**2:
        raise DegenerateGeometry("3D points are collinear")

    Kinv = np.linalg.inv(K.matrix)
    rays = (Kinv @ np.hstack([pix, np.ones((3, 1))]).T).T
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    a2 = float(np.sum((pts[1] - pts[2]) ** 2))
    b2 = float(np.sum((pts[0] - pts[2]) ** 2))
    c2 = float(np.sum((pts[0] - pts[1]) ** 2))
    cos_a = float(rays[1] @ rays[2])
    cos_b = float(rays[0] @ rays[2])
    cos_g = float(rays[0] @ rays[1])

    P = np.polynomial.polynomial
    # With s2 = u*s1, s3 = v*s1, eliminating s1 and u leaves a quartic in v:
    #   b2*T(v)^2 - 2*b2*cos_a*v*T(v)*D(v) + G(v)*D(v)^2 = 0,
    # where u = T(v)/D(v).
    T = np.array([c2 - a2 - b2, 2.0 * cos_b * (a2 - c2), b2 - a2 + c2])
    D = np.array([-2.0 * b2 * cos_g, 2.0 * b2 * cos_a])
    G = np.array([-a2, 2.0 * a2 * cos_b, b2 - a2])
    quartic = P.polyadd(
        P.polyadd(
            b2 * P.polymul(T, T),
            -2.0 * b2 * cos_a * P.polymul(np.array([0.0, 1.0]), P.polymul(T, D)),
        ),
        P.polymul(G, P.polymul(D, D)),
    )

    nz = np.nonzero(np.abs(quartic) > 1e-14 * max(1.0, np.abs(quartic).max()))[0]
    if len(nz) == 0 or nz.max() < 1:
        raise NoSolution("degenerate P3P polynomial")
    roots = np.roots(quartic[nz.max() :: -1])

    def polish_depths(depths: np.ndarray) -> np.ndarray | None:
        # Newton iterations on the three law-of-cosines equations; the
        # quartic roots only seed this, which keeps clustered (near-double)
        # roots accurate.
        s = depths.copy()
        for _ in range(20):
            s1, s2, s3 = s
            F = np.array(
                [
                    s2 * s2 + s3 * s3 - 2 * s2 * s3 * cos_a - a2,
                    s1 * s1 + s3 * s3 - 2 * s1 * s3 * cos_b - b2,
                    s1 * s1 + s2 * s2 - 2 * s1 * s2 * cos_g - c2,
                ]
            )
            if np.abs(F).max() < 1e-14 * max(a2, b2, c2):
                break
            J = np.array(
                [
                    [0.0, 2 * s2 - 2 * s3 * cos_a, 2 * s3 - 2 * s2 * cos_a],
                    [2 * s1 - 2 * s3 * cos_b, 0.0, 2 * s3 - 2 * s1 * cos_b],
                    [2 * s1 - 2 * s2 * cos_g, 2 * s2 - 2 * s1 * cos_g, 0.0],
                ]
            )
            try:
                step = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                return None
            s = s + step
        if (s <= 0).any() or not np.isfinite(s).all():
            return None
        return s

    candidates: list[RigidPose] = []
    for r in roots:
        if abs(r.imag) > 1e-4 * (1.0 + abs(r.real)):
            continue
        v = float(r.real)
        if v <= 0:
            continue
        # Seed u from the rational expression when well conditioned, plus the
        # two roots of the quadratic in u (third Grunert equation); near
        # symmetric configurations only the latter are reliable.
        u_seeds = []
        denom = np.polynomial.polynomial.polyval(v, D)
        numer = np.polynomial.polynomial.polyval(v, T)
        if abs(denom) > 1e-7 * (1.0 + abs(numer)):
            u_seeds.append(numer / denom)
        disc = cos_g * cos_g - (b2 - c2 - c2 * v * v + 2.0 * c2 * cos_b * v) / b2
        if disc >= 0:
            sq = np.sqrt(disc)
            u_seeds.extend([cos_g + sq, cos_g - sq])
        s1_den = 1.0 + v * v - 2.0 * v * cos_b
        if s1_den <= 0:
            continue
        s1 = np.sqrt(b2 / s1_den)
        for u in u_seeds:
            if u <= 0:
                continue
            depths = polish_depths(np.array([s1, u * s1, v * s1]))
            if depths is None:
                continue
            cam_pts = depths[:, None] * rays
            R, t = _kabsch(pts, cam_pts)
            pose = RigidPose(R, t)
            # The minimal problem is exact: discard spurious seeds that fail
            # to reproject the sample.
            px, z = project_many(K, pose, pts)
            if (z <= 0).any():
                continue
            if np.linalg.norm(px - pix, axis=1).max() >= 1e-6:
                continue
            duplicate = any(
                np.abs(pose.rotation - c.rotation).max() < 1e-6
                and np.abs(pose.translation - c.translation).max() < 1e-6
                for c in candidates
            )
            if not duplicate:
                candidates.append(pose)

    if not candidates:
        raise NoSolution("no valid P3P root")

    if len(corrs) == 4:
        extra = corrs[3]
        errs = []
        for pose in candidates:
            px, z = project_many(K, pose, extra.point[None, :])
            if z[0] <= 0:
                errs.append(np.inf)
            else:
                errs.append(float(np.linalg.norm(px[0] - extra.pixel)))
        order = np.argsort(errs, kind="stable")
        candidates = [candidates[i] for i in order]
    return candidates


# ---------------------------------------------------------------------------
# pose refinement (Levenberg-Marquardt)
# ---------------------------------------------------------------------------


def _pose_residuals(
    params: np.ndarray, pixels: np.ndarray, points: np.ndarray, K: CameraIntrinsics
) -> np.ndarray:
    q = params[:4]
    n = np.linalg.norm(q)
    if n < 1e-12:
        return np.full(2 * len(points), 1e9)
    R = quaternion_to_matrix(q)
    cam = points @ R.T + params[4:7]
    z = cam[:, 2]
    res = np.empty(2 * len(points))
    bad = z <= 1e-9
    zs = np.where(bad, 1.0, z)
    res[0::2] = pixels[:, 0] - (K.fx * cam[:, 0] / zs + K.cx)
    res[1::2] = pixels[:, 1] - (K.fy * cam[:, 1] / zs + K.cy)
    res[0::2][bad] = 1e6
    res[1::2][bad] = 1e6
    return res


def refine_pose(
    pose: RigidPose,
    inliers: list[Correspondence2D3D],
    K: CameraIntrinsics,
    iterations: int = 20,
) -> RigidPose:
    """Levenberg-Marquardt refinement of squared reprojection error.

    The pose is parameterized as a unit quaternion plus translation; the
    quaternion is renormalized after every accepted step. Only improving
    steps are accepted, so the mean squared reprojection error on the inlier
    set never increases. ``iterations = 0`` returns the input unchanged.
    """
    if len(inliers) < 4:
        raise ValueError("refine_pose needs at least 4 inliers")
    if iterations == 0:
        return pose

    pixels = np.array([c.pixel for c in inliers])
    points = np.array([c.point for c in inliers])
    params = np.concatenate([matrix_to_quaternion(pose.rotation), pose.translation])

    res = _pose_residuals(params, pixels, points, K)
    err = res @ res
    lam = 1e-3
    eps = 1e-7

    for _ in range(iterations):
        J = np.zeros((len(res), 7))
        for k in range(7):
            dp = np.zeros(7)
            dp[k] = eps * max(1.0, abs(params[k]))
            rp = _pose_residuals(params + dp, pixels, points, K)
            rm = _pose_residuals(params - dp, pixels, points, K)
            J[:, k] = (rp - rm) / (2 * dp[k])
        g = J.T @ res
        H = J.T @ J
        stepped = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = params + delta
            cand[:4] /= np.linalg.norm(cand[:4])
            cand_res = _pose_residuals(cand, pixels, points, K)
            cand_err = cand_res @ cand_res
            if cand_err < err:
                params, res, err = cand, cand_res, cand_err
                lam = max(lam / 3, 1e-12)
                stepped = True
                break
            lam *= 10
        if not stepped:
            break
        if err < 1e-22 * len(inliers):
            break

    return RigidPose.from_quaternion(params[:4], params[4:7])


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------


def ransac_pnp(
    corrs: list[Correspondence2D3D], K: CameraIntrinsics, cfg: RansacConfig
) -> tuple[RigidPose, np.ndarray]:
    """Robust pose from 2D-3D correspondences.

    Samples 4-point minimal sets (3 for P3P, the 4th disambiguates), scores
    hypotheses by inlier count under the Euclidean pixel threshold (points
    behind the camera never count as inliers), refines the best hypothesis on
    its inliers, and returns the refined pose with the final inlier mask.
    Deterministic for a fixed seed and input order; ties in inlier count are
    broken by the lowest hypothesis index.
    """
    if len(corrs) < 4:
        raise LocalizationFailure(f"need >= 4 correspondences, got {len(corrs)}")

    pixels = np.array([c.pixel for c in corrs])
    points = np.array([c.point for c in corrs])
    rng = np.random.default_rng(cfg.rng_seed)

    def inlier_mask(pose: RigidPose) -> np.ndarray:
        px, z = project_many(K, pose, points)
        err = np.linalg.norm(np.where(np.isfinite(px), px, np.inf) - pixels, axis=1)
        return (z > 0) & (err < cfg.inlier_threshold_px)

    best_pose: RigidPose | None = None
    best_count = -1
    for _ in range(cfg.hypothesis_count):
        idx = rng.choice(len(corrs), size=4, replace=False)
        sample = [corrs[i] for i in idx]
        try:
            candidates = pnp_minimal(sample, K)
        except (DegenerateGeometry, NoSolution):
            continue
        pose = candidates[0]
        count = int(inlier_mask(pose).sum())
        if count > best_count:
            best_pose, best_count = pose, count

    if best_pose is None or best_count < 4:
        raise LocalizationFailure(
            f"best hypothesis has {max(best_count, 0)} inliers (< 4)"
        )

    mask = inlier_mask(best_pose)
    inliers = [c for c, keep in zip(corrs, mask) if keep]
    refined = refine_pose(best_pose, inliers, K, iterations=cfg.refinement_iterations)
    final_mask = inlier_mask(refined)
    if final_mask.sum() < 4:
        # Refinement cannot make the supported set worse than the hypothesis
        # it started from; fall back defensively.
        refined, final_mask = best_pose, mask
    return refined, final_mask


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def pose_error(est: RigidPose, gt: RigidPose) -> tuple[float, float]:
    """(translation error in meters, rotation error in degrees).

    Translation error is the distance between camera centers; rotation error
    is the angle of the relative rotation.
    """
    t_err = float(np.linalg.norm(est.camera_center() - gt.camera_center()))
    R_rel = est.rotation @ gt.rotation.T
    c = np.clip((np.trace(R_rel) - 1.0) / 2.0, -1.0, 1.0)
    return t_err, float(np.degrees(np.arccos(c)))
