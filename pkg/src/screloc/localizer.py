"""Inference path: predict scene coordinates, estimate poses, aggregate metrics.

Test time never diffuses the global encoding (the API takes no rng); each
query image's observations are mapped through the trained head and decoder
to 2D-3D correspondences, which feed the RANSAC + P3P pose solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encodings import concat
from .geometry import (
    CameraIntrinsics,
    Correspondence2D3D,
    LocalizationFailure,
    RansacConfig,
    RigidPose,
    pose_error,
    ransac_pnp,
)
from .regressor import DecoderParams, RegressorHead, TrainingBuffer, decode_position
from .scene_sim import ObservationRecord

DEFAULT_THRESHOLDS = ((0.05, 5.0), (0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


@dataclass
class LocalizationResult:
    status: str  # "ok" or "failed"
    pose: RigidPose | None
    inlier_count: int
    translation_error_m: float = float("nan")
    rotation_error_deg: float = float("nan")

    def __post_init__(self) -> None:
        if self.status == "ok" and self.inlier_count < 4:
            raise ValueError("ok result requires >= 4 inliers")


@dataclass
class EvalReport:
    median_translation_m: float
    median_rotation_deg: float
    threshold_rates: dict[tuple[float, float], float]
    per_frame: list[LocalizationResult] = field(default_factory=list)

    def summary_text(self) -> str:
        lines = [
            f"frames: {len(self.per_frame)}",
            f"median translation error: {self.median_translation_m:.6g} m",
            f"median rotation error: {self.median_rotation_deg:.6g} deg",
        ]
        for (tm, rd), rate in sorted(self.threshold_rates.items()):
            lines.append(f"rate below {tm} m / {rd} deg: {rate:.4f}")
        failed = sum(1 for r in self.per_frame if r.status != "ok")
        lines.append(f"failed frames: {failed}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("frame,status,inlier_count,translation_error_m,rotation_error_deg\n")
            for i, r in enumerate(self.per_frame):
                fh.write(
                    f"{i},{r.status},{r.inlier_count},"
                    f"{float(r.translation_error_m)!r},{float(r.rotation_error_deg)!r}\n"
                )


def predict_correspondences(
    head: RegressorHead,
    decoder: DecoderParams,
    observations: list[ObservationRecord],
    global_enc: np.ndarray,
) -> list[Correspondence2D3D]:
    """One (pixel, predicted 3D point) pair per observation, order preserved.

    ``global_enc`` is the query image's undiffused encoding, shared by all its
    observations.
    """
    if not observations:
        return []
    locals_ = np.array([o.local_encoding for o in observations])
    glob = np.tile(np.asarray(global_enc, dtype=float), (len(observations), 1))
    raw = head.forward(concat(locals_, glob))
    points = decode_position(raw, decoder)
    return [
        Correspondence2D3D(o.pixel, points[i]) for i, o in enumerate(observations)
    ]


def localize(
    head: RegressorHead,
    decoder: DecoderParams,
    observations: list[ObservationRecord],
    global_enc: np.ndarray,
    K: CameraIntrinsics,
    cfg: RansacConfig,
    gt_pose: RigidPose | None = None,
) -> LocalizationResult:
    """Full query path: predict correspondences, RANSAC + refine, errors."""
    if len(observations) < 4:
        return LocalizationResult(status="failed", pose=None, inlier_count=0)
    corrs = predict_correspondences(head, decoder, observations, global_enc)
    try:
        pose, mask = ransac_pnp(corrs, K, cfg)
    except LocalizationFailure:
        return LocalizationResult(status="failed", pose=None, inlier_count=0)
    result = LocalizationResult(status="ok", pose=pose, inlier_count=int(mask.sum()))
    if gt_pose is not None:
        t_err, r_err = pose_error(pose, gt_pose)
        result.translation_error_m = t_err
        result.rotation_error_deg = r_err
    return result


def evaluate(
    head: RegressorHead,
    decoder: DecoderParams,
    test_set: list[tuple[list[ObservationRecord], np.ndarray, CameraIntrinsics, RigidPose]],
    cfg: RansacConfig,
    thresholds: tuple[tuple[float, float], ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Aggregate localize() over frames.

    Failed frames contribute infinite error to the medians and count as
    misses for every threshold.
    """
    if not test_set:
        raise ValueError("test set must be non-empty")
    per_frame = []
    for observations, global_enc, K, gt_pose in test_set:
        per_frame.append(
            localize(head, decoder, observations, global_enc, K, cfg, gt_pose=gt_pose)
        )
    return report_from_results(per_frame, thresholds)


def report_from_results(
    per_frame: list[LocalizationResult],
    thresholds: tuple[tuple[float, float], ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    t_errs = np.array(
        [
            r.translation_error_m if r.status == "ok" else np.inf
            for r in per_frame
        ]
    )
    r_errs = np.array(
        [r.rotation_error_deg if r.status == "ok" else np.inf for r in per_frame]
    )
    rates = {}
    for tm, rd in thresholds:
        rates[(tm, rd)] = float(np.mean((t_errs < tm) & (r_errs < rd)))
    return EvalReport(
        median_translation_m=float(np.median(t_errs)),
        median_rotation_deg=float(np.median(r_errs)),
        threshold_rates=rates,
        per_frame=per_frame,
    )


def export_reconstruction(
    head: RegressorHead,
    decoder: DecoderParams,
    buffer: TrainingBuffer,
    reproj_threshold_px: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted scene points of the buffer that reproject within threshold.

    Returns (points (S, 3), landmark_ids (S,)). The reprojection test uses
    the L1 pixel error under the ground-truth pose; points behind the camera
    never survive a finite threshold.
    """
    inputs = concat(buffer.locals_, buffer.global_table[buffer.image_index])
    raw = head.forward(inputs)
    points = decode_position(raw, decoder)

    R = buffer.rotations[buffer.image_index]
    t = buffer.translations[buffer.image_index]
    intr = buffer.intrinsics[buffer.image_index]
    q = np.einsum("bij,bj->bi", R, points) + t
    z = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr[:, 0] * q[:, 0] / z + intr[:, 2]
        v = intr[:, 1] * q[:, 1] / z + intr[:, 3]
    err = np.abs(buffer.pixels[:, 0] - u) + np.abs(buffer.pixels[:, 1] - v)
    keep = (z > 0) & (err < reproj_threshold_px)
    if np.isinf(reproj_threshold_px):
        keep = np.ones(len(points), dtype=bool)
    return points[keep], buffer.landmark_ids[keep]


def save_point_list(path, points: np.ndarray, ids: np.ndarray) -> None:
    """ASCII export: one "x y z id" line per point."""
    with open(path, "w") as fh:
        for p, i in zip(points, ids):
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {int(i)}\n")


def split_cameras(n_cameras: int, heldout_fraction: float) -> tuple[list[int], list[int]]:
    """Deterministic train/heldout camera split.

    The tail of the index range is held out; layouts assign cameras to
    regions round-robin, so a contiguous tail stays region-balanced.
    """
    if not 0.0 <= heldout_fraction < 1.0:
        raise ValueError("heldout_fraction must be in [0, 1)")
    n_train = int(np.ceil(n_cameras * (1.0 - heldout_fraction)))
    n_train = max(1, min(n_cameras, n_train))
    return list(range(n_train)), list(range(n_train, n_cameras))
