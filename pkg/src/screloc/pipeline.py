"""End-to-end experiment orchestration shared by the CLI and the test suite.

A "variant" names how the global encoding enters training, mirroring the
ablation axes: no_global (input is the local encoding alone), identity (raw
per-image encodings, no augmentation), cluster<K> (encodings snapped to K
cluster centers fitted on the training cameras), and diffusion (raw
encodings with fresh Gaussian noise each iteration).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .encodings import cluster_encode, kmeans_pp
from .geometry import RansacConfig
from .localizer import EvalReport, evaluate, split_cameras
from .regressor import (
    DecoderParams,
    RegressorHead,
    TrainResult,
    TrainingBuffer,
    fill_buffer,
    train,
)
from .scene_sim import SyntheticScene, generate_scene, render_observations, simulate_global_encoding

VARIANT_NO_GLOBAL = "no_global"
VARIANT_IDENTITY = "identity"
VARIANT_DIFFUSION = "diffusion"


def derive_seed(master: int, tag: str) -> int:
    """Stable 63-bit sub-seed for a named purpose."""
    digest = hashlib.sha256(f"{master}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def simulate_from_config(cfg: ExperimentConfig, seed: int | None = None):
    """Generate the scene and fit its global encodings per config."""
    master = cfg.seed if seed is None else seed
    scene = generate_scene(
        cfg.scene.layout,
        cfg.scene.n_landmarks,
        cfg.scene.n_cameras,
        cfg.ambiguity.to_ambiguity(),
        seed=derive_seed(master, "scene"),
        n_cells=cfg.scene.n_cells,
        local_dim=cfg.scene.local_dim,
    )
    encodings = simulate_global_encoding(
        scene,
        dim=cfg.encodings.global_dim,
        fit_iterations=cfg.encodings.fit_iterations,
        seed=derive_seed(master, "encodings"),
        margin=cfg.encodings.margin,
        covis_positive_threshold=cfg.encodings.covis_positive_threshold,
        content_sigma=cfg.encodings.content_sigma,
    )
    return scene, encodings


def variant_encoding_table(
    encodings: np.ndarray, variant: str, train_cams: list[int], seed: int
) -> np.ndarray:
    """Per-image encoding table as seen by a given variant.

    Cluster variants fit K-Means on the training cameras' encodings and snap
    every image (training and query alike) to its nearest center.
    """
    if variant == VARIANT_NO_GLOBAL:
        return np.zeros((len(encodings), 0))
    if variant in (VARIANT_IDENTITY, VARIANT_DIFFUSION):
        return np.asarray(encodings, dtype=float)
    if variant.startswith("cluster"):
        k = int(variant[len("cluster"):])
        k = max(1, min(k, len(train_cams)))
        model = kmeans_pp(encodings[train_cams], k=k, seed=seed)
        return cluster_encode(encodings, model)
    raise ValueError(f"unknown variant {variant!r}")


def variant_sigma(variant: str, configured_sigma: float) -> float:
    return configured_sigma if variant == VARIANT_DIFFUSION else 0.0


def build_decoder(
    camera_centers: np.ndarray, k: int, seed: int,
    s_min: float = 0.1, s_max: float = 100.0,
) -> DecoderParams:
    """Decoder centers from K-Means++ over training camera positions."""
    k = max(1, min(k, len(camera_centers)))
    model = kmeans_pp(camera_centers, k=k, seed=seed, n_init=10)
    return DecoderParams(centers=model.centers, s_min=s_min, s_max=s_max)


@dataclass
class TrainedModel:
    head: RegressorHead
    decoder: DecoderParams
    buffer: TrainingBuffer
    result: TrainResult
    encoding_table: np.ndarray  # per-image encodings the model consumes
    train_cams: list[int]
    heldout_cams: list[int]


def train_from_config(
    scene: SyntheticScene,
    encodings: np.ndarray,
    cfg: ExperimentConfig,
    seed: int | None = None,
    variant: str = VARIANT_DIFFUSION,
    clusters: int | None = None,
) -> TrainedModel:
    """Split cameras, build the variant buffer and decoder, run training."""
    master = cfg.seed if seed is None else seed
    train_cams, heldout_cams = split_cameras(scene.n_cameras, cfg.eval.heldout_fraction)

    table = variant_encoding_table(
        encodings, variant, train_cams, derive_seed(master, "enc-cluster")
    )
    buffer = fill_buffer(
        scene,
        cfg.train.samples_per_image,
        seed=derive_seed(master, "buffer"),
        camera_indices=train_cams,
        encodings=table,
        descriptor_noise_sigma=cfg.ambiguity.descriptor_noise_sigma,
        pixel_jitter_sigma=cfg.scene.pixel_jitter_sigma,
    )
    decoder = build_decoder(
        scene.camera_centers()[train_cams],
        clusters if clusters is not None else cfg.head.clusters,
        seed=derive_seed(master, "decoder"),
    )
    head = RegressorHead(
        input_width=buffer.local_dim + buffer.global_dim,
        hidden_width=cfg.head.hidden_width,
        residual_blocks=cfg.head.residual_blocks,
        n_logits=decoder.k,
        seed=derive_seed(master, "head") % 2**32,
    )
    train_cfg = cfg.train.to_train_config(seed=derive_seed(master, "train"))
    train_cfg = type(train_cfg)(
        **{**vars(train_cfg), "sigma": variant_sigma(variant, cfg.train.sigma)}
    )
    result = train(buffer, head, decoder, train_cfg, sched=cfg.loss.to_schedule())
    return TrainedModel(
        head=head,
        decoder=decoder,
        buffer=buffer,
        result=result,
        encoding_table=table,
        train_cams=train_cams,
        heldout_cams=heldout_cams,
    )


def build_test_set(
    scene: SyntheticScene,
    encoding_table: np.ndarray,
    cams: list[int],
    cfg: ExperimentConfig,
    seed: int,
    oracle: bool = False,
):
    """(observations, encoding, intrinsics, gt_pose) tuples for evaluation.

    With ``oracle`` the local encodings are ignored later; the flag only
    matters to evaluate_split which swaps in true landmark positions.
    """
    frames = []
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(scene.n_cameras)
    for cam in cams:
        obs = render_observations(
            scene,
            cam,
            cfg.eval.samples_per_image,
            children[cam],
            pixel_jitter_sigma=cfg.scene.pixel_jitter_sigma,
            descriptor_noise_sigma=cfg.ambiguity.descriptor_noise_sigma,
        )
        enc = encoding_table[cam] if encoding_table.shape[1] else np.zeros(0)
        frames.append((obs, enc, scene.intrinsics_of(cam), scene.pose(cam)))
    return frames


class _OracleModel:
    """Stands in for (head, decoder) by emitting true landmark positions."""

    def __init__(self, scene: SyntheticScene):
        self.scene = scene


def evaluate_split(
    scene: SyntheticScene,
    model: TrainedModel | _OracleModel,
    cams: list[int],
    cfg: ExperimentConfig,
    seed: int | None = None,
) -> EvalReport:
    from .localizer import localize, report_from_results

    master = cfg.seed if seed is None else seed
    ransac = cfg.ransac.to_ransac_config(seed=derive_seed(master, "ransac") % 2**32)

    if isinstance(model, _OracleModel):
        table = np.zeros((scene.n_cameras, 0))
    else:
        table = model.encoding_table
    frames = build_test_set(scene, table, cams, cfg, derive_seed(master, "eval-obs"))

    results = []
    for (obs, enc, K, gt), cam in zip(frames, cams):
        if isinstance(model, _OracleModel):
            from .geometry import Correspondence2D3D, LocalizationFailure, ransac_pnp
            from .localizer import LocalizationResult
            from .geometry import pose_error

            corrs = [
                Correspondence2D3D(o.pixel, scene.landmarks[o.landmark_id]) for o in obs
            ]
            if len(corrs) < 4:
                results.append(LocalizationResult("failed", None, 0))
                continue
            try:
                pose, mask = ransac_pnp(corrs, K, ransac)
                t_err, r_err = pose_error(pose, gt)
                results.append(
                    LocalizationResult("ok", pose, int(mask.sum()), t_err, r_err)
                )
            except LocalizationFailure:
                results.append(LocalizationResult("failed", None, 0))
        else:
            results.append(
                localize(model.head, model.decoder, obs, enc, K, ransac, gt_pose=gt)
            )
    from .localizer import report_from_results

    return report_from_results(results, tuple(tuple(t) for t in cfg.eval.thresholds))


def oracle_model(scene: SyntheticScene) -> _OracleModel:
    return _OracleModel(scene)


def ablation_variants(cfg: ExperimentConfig) -> list[str]:
    variants = [VARIANT_IDENTITY]
    variants += [f"cluster{k}" for k in cfg.ablate.cluster_ks]
    variants.append(VARIANT_DIFFUSION)
    if cfg.ablate.include_no_global:
        variants.append(VARIANT_NO_GLOBAL)
    return variants


def run_ablation(
    scene: SyntheticScene,
    encodings: np.ndarray,
    cfg: ExperimentConfig,
) -> list[tuple[str, int, float, float, float, float]]:
    """Rows of (variant, seed, train_med_t, train_med_r, held_med_t, held_med_r).

    All variants share each seed (same buffer sampling, init, and eval
    observations), so rows are directly comparable within a seed.
    """
    rows = []
    for variant in ablation_variants(cfg):
        for seed in cfg.ablate.seeds:
            model = train_from_config(scene, encodings, cfg, seed=seed, variant=variant)
            train_rep = evaluate_split(scene, model, model.train_cams, cfg, seed=seed)
            held_rep = evaluate_split(scene, model, model.heldout_cams, cfg, seed=seed)
            rows.append(
                (
                    variant,
                    seed,
                    train_rep.median_translation_m,
                    train_rep.median_rotation_deg,
                    held_rep.median_translation_m,
                    held_rep.median_rotation_deg,
                )
            )
    return rows


def room_of_camera(scene: SyntheticScene, cam: int) -> int:
    from .scene_sim import CELL_SIZE

    cols = int(np.ceil(np.sqrt(scene.n_cells)))
    center = scene.camera_centers()[cam]
    return int(center[1] // CELL_SIZE) * cols + int(center[0] // CELL_SIZE)


def per_room_success(
    scene: SyntheticScene,
    model: TrainedModel,
    cfg: ExperimentConfig,
    threshold_m: float,
    threshold_deg: float,
    seed: int | None = None,
) -> dict[int, float]:
    """Per-room fraction of heldout frames below the pose-error threshold."""
    report = evaluate_split(scene, model, model.heldout_cams, cfg, seed=seed)
    hits: dict[int, list[int]] = {}
    for cam, res in zip(model.heldout_cams, report.per_frame):
        room = room_of_camera(scene, cam)
        ok = (
            res.status == "ok"
            and res.translation_error_m < threshold_m
            and res.rotation_error_deg < threshold_deg
        )
        hits.setdefault(room, []).append(1 if ok else 0)
    return {room: float(np.mean(v)) for room, v in sorted(hits.items())}
