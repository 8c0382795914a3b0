"""Synthetic scenes: landmarks with canonical descriptors, posed cameras,
controllable repeated-structure ambiguity, and co-visibility-correlated
global encodings.

The simulator replaces the pretrained local and global encoders. Local
encodings are a function of the landmark (the invariance assumption), with
optional per-observation noise; perceptual aliasing is modeled by copying a
canonical descriptor to landmarks in different spatial regions. Global
encodings are fitted to co-visibility with a triplet margin loss, which is
the same supervision an image-retrieval embedding receives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .encodings import normalize
from .geometry import CameraIntrinsics, RigidPose

LAYOUTS = ("single_region", "grid_of_rooms", "street_loop")
CELL_SIZE = 5.0  # grid-of-rooms cell edge, meters
DEFAULT_IMAGE_SIZE = (640, 480)
DEFAULT_FOV_DEG = 60.0
PLACEMENT_ATTEMPTS = 1000

SCENE_FORMAT_VERSION = 1


class InfeasibleLayout(Exception):
    """Camera/landmark placement could not satisfy the visibility constraint."""


class FitFailure(Exception):
    """Fitted global encodings do not separate co-visible from unrelated pairs."""


@dataclass(frozen=True)
class AmbiguityConfig:
    """Repeated-structure control: which fraction of landmarks share a
    canonical descriptor with landmarks in other regions."""

    duplicate_fraction: float = 0.0
    group_size: int = 2
    descriptor_noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.duplicate_fraction <= 1.0:
            raise ValueError("duplicate_fraction must be in [0, 1]")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.descriptor_noise_sigma < 0:
            raise ValueError("descriptor_noise_sigma must be >= 0")


@dataclass(frozen=True)
class ObservationRecord:
    """One training sample from one camera."""

    pixel: np.ndarray  # (2,)
    local_encoding: np.ndarray  # (D_l,)
    image_index: int
    intrinsics: CameraIntrinsics
    gt_pose: RigidPose
    landmark_id: int  # simulator ground truth, never shown to the regressor


@dataclass
class SyntheticScene:
    layout_kind: str
    landmarks: np.ndarray  # (L, 3)
    descriptors: np.ndarray  # (L, D_l) canonical descriptors
    group_ids: np.ndarray  # (L,) descriptor group per landmark
    rotations: np.ndarray  # (n, 3, 3)
    translations: np.ndarray  # (n, 3)
    intrinsics: np.ndarray  # (n, 4) fx, fy, cx, cy
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    view_max_depth: float = np.inf  # visibility range cutoff
    n_cells: int = 0  # grid layouts only
    region_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self) -> None:
        if self.layout_kind not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout_kind!r}")
        if not np.isfinite(self.landmarks).all():
            raise ValueError("landmark positions must be finite")

    @property
    def n_cameras(self) -> int:
        return len(self.rotations)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    def pose(self, image_index: int) -> RigidPose:
        return RigidPose(self.rotations[image_index], self.translations[image_index])

    def intrinsics_of(self, image_index: int) -> CameraIntrinsics:
        return CameraIntrinsics.from_array(self.intrinsics[image_index])

    def camera_centers(self) -> np.ndarray:
        return np.einsum("nij,nj->ni", -self.rotations.transpose(0, 2, 1), self.translations)

    def diameter(self) -> float:
        pts = np.vstack([self.landmarks, self.camera_centers()])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def default_intrinsics(image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
                       fov_deg: float = DEFAULT_FOV_DEG) -> CameraIntrinsics:
    w, h = image_size
    f = (w / 2.0) / np.tan(np.radians(fov_deg / 2.0))
    return CameraIntrinsics(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0)


def look_at_rotation(center: np.ndarray, target: np.ndarray,
                     up: np.ndarray | None = None) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` looking at ``target``."""
    z = target - center
    z = z / np.linalg.norm(z)
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(-up, z)  # image u axis; -up keeps v pointing "down" in world
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def visible_mask(scene: SyntheticScene, image_index: int) -> np.ndarray:
    """Landmarks in front of the camera, inside image bounds, within range."""
    R = scene.rotations[image_index]
    t = scene.translations[image_index]
    cam = scene.landmarks @ R.T + t
    z = cam[:, 2]
    fx, fy, cx, cy = scene.intrinsics[image_index]
    w, h = scene.image_size
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * cam[:, 0] / z + cx
        v = fy * cam[:, 1] / z + cy
    in_front = z > 1e-9
    dist = np.linalg.norm(cam, axis=1)
    return (
        in_front
        & (u >= 0)
        & (u < w)
        & (v >= 0)
        & (v < h)
        & (dist <= scene.view_max_depth)
    )


def visibility_matrix(scene: SyntheticScene) -> np.ndarray:
    """(n_cameras, n_landmarks) boolean visibility table."""
    return np.array([visible_mask(scene, i) for i in range(scene.n_cameras)])


def covisibility_count(scene: SyntheticScene, i: int, j: int) -> int:
    """Number of landmarks visible in both cameras."""
    return int((visible_mask(scene, i) & visible_mask(scene, j)).sum())


def covisibility_matrix(scene: SyntheticScene) -> np.ndarray:
    vis = visibility_matrix(scene).astype(np.int64)
    return vis @ vis.T


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------


def _single_region_geometry(n_landmarks: int, n_cameras: int, rng: np.random.Generator):
    half = np.array([1.2, 1.2, 0.6])
    landmarks = rng.uniform(-half, half, size=(n_landmarks, 3))
    centers, rotations = [], []
    for _ in range(n_cameras):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(5.0, 6.0)
        target = rng.uniform(-0.1, 0.1, 3)
        centers.append(center)
        rotations.append(look_at_rotation(center, target))
    # Octants of the box serve as "spatial regions" for duplicate assignment.
    regions = (
        (landmarks[:, 0] > 0).astype(int)
        + 2 * (landmarks[:, 1] > 0).astype(int)
        + 4 * (landmarks[:, 2] > 0).astype(int)
    )
    return landmarks, np.array(centers), np.array(rotations), regions, np.inf, 0


def _grid_geometry(n_landmarks: int, n_cameras: int, n_cells: int, rng: np.random.Generator):
    cols = int(np.ceil(np.sqrt(n_cells)))
    cell_centers = np.array(
        [
            (CELL_SIZE * (c + 0.5), CELL_SIZE * (r + 0.5), 1.5)
            for k in range(n_cells)
            for r, c in [divmod(k, cols)]
        ]
    )
    lm_half = np.array([0.65, 0.65, 0.45])
    lm_cell = np.arange(n_landmarks) % n_cells
    landmarks = cell_centers[lm_cell] + rng.uniform(-lm_half, lm_half, (n_landmarks, 3))

    centers, rotations = [], []
    for i in range(n_cameras):
        cell = i % n_cells
        ring_slot = i // n_cells
        angle = np.radians(45.0 + 90.0 * (ring_slot % 4) + rng.uniform(-10, 10))
        radius = 2.9
        offset = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.0])
        center = cell_centers[cell] + offset
        target = cell_centers[cell] + rng.uniform(-0.05, 0.05, 3)
        centers.append(center)
        rotations.append(look_at_rotation(center, target))
    # Range cutoff keeps rooms mostly (not perfectly) visually disjoint.
    return landmarks, np.array(centers), np.array(rotations), lm_cell, 5.5, n_cells


def _points_seen_by(
    points: np.ndarray,
    rotations: np.ndarray,
    centers: np.ndarray,
    K: CameraIntrinsics,
    image_size: tuple[int, int],
) -> np.ndarray:
    """(n_cameras, n_points) frustum-visibility table for candidate points."""
    w, h = image_size
    cam = np.einsum("nij,pj->npi", rotations, points) - np.einsum(
        "nij,nj->ni", rotations, centers
    )[:, None, :]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[..., 0] / z + K.cx
        v = K.fy * cam[..., 1] / z + K.cy
    return (z > 1e-9) & (u >= 0) & (u < w) & (v >= 0) & (v < h)


def _street_geometry(n_landmarks: int, n_cameras: int, rng: np.random.Generator):
    loop_radius = 10.0
    cam_angles = 2 * np.pi * np.arange(n_cameras) / n_cameras + rng.uniform(
        -0.02, 0.02, n_cameras
    )
    centers, rotations = [], []
    for a in cam_angles:
        center = np.array([loop_radius * np.cos(a), loop_radius * np.sin(a), 1.6])
        tangent = np.array([-np.sin(a), np.cos(a), 0.0])
        outward = np.array([np.cos(a), np.sin(a), 0.0])
        gaze = tangent * np.cos(np.radians(30)) + outward * np.sin(np.radians(30))
        target = center + 6.0 * gaze
        centers.append(center)
        rotations.append(look_at_rotation(center, target))
    centers = np.array(centers)
    rotations = np.array(rotations)

    # Seed each landmark inside a random camera's frustum, then keep only
    # draws that at least min(3, n_cameras) cameras can see.
    K = default_intrinsics()
    need = min(3, n_cameras)
    landmarks = np.empty((n_landmarks, 3))
    for ell in range(n_landmarks):
        for attempt in range(PLACEMENT_ATTEMPTS):
            i = int(rng.integers(n_cameras))
            depth = rng.uniform(3.0, 8.0)
            u = rng.uniform(0.25, 0.75) * 640
            v = rng.uniform(0.3, 0.7) * 480
            ray = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
            candidate = rotations[i].T @ (ray * depth) + centers[i]
            seen = _points_seen_by(
                candidate[None, :], rotations, centers, K, DEFAULT_IMAGE_SIZE
            )
            if seen.sum() >= need:
                landmarks[ell] = candidate
                break
        else:
            raise InfeasibleLayout(
                f"street loop: landmark {ell} not coverable by {need} cameras"
            )
    sector = (
        (np.arctan2(landmarks[:, 1], landmarks[:, 0]) + np.pi) / (2 * np.pi) * 8
    ).astype(int) % 8
    return landmarks, centers, rotations, sector, np.inf, 0


def _assign_ambiguity(
    n_landmarks: int,
    regions: np.ndarray,
    ambiguity: AmbiguityConfig,
    local_dim: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical descriptors and group ids (duplicates span distinct regions)."""
    n_dup = int(round(ambiguity.duplicate_fraction * n_landmarks))
    n_groups = n_dup // ambiguity.group_size

    group_ids = np.full(n_landmarks, -1, dtype=int)
    next_group = 0
    free = list(range(n_landmarks))
    for _ in range(n_groups):
        members: list[int] = []
        used_regions: set[int] = set()
        for _ in range(PLACEMENT_ATTEMPTS):
            cand = free[int(rng.integers(len(free)))]
            if int(regions[cand]) in used_regions:
                continue
            members.append(cand)
            used_regions.add(int(regions[cand]))
            free.remove(cand)
            if len(members) == ambiguity.group_size:
                break
        if len(members) < ambiguity.group_size:
            raise InfeasibleLayout(
                "cannot place duplicate groups across distinct regions; "
                "reduce duplicate_fraction or group_size"
            )
        for m in members:
            group_ids[m] = next_group
        next_group += 1
    for ell in range(n_landmarks):
        if group_ids[ell] < 0:
            group_ids[ell] = next_group
            next_group += 1

    descriptors = np.empty((n_landmarks, local_dim))
    for gid in range(next_group):
        members = np.nonzero(group_ids == gid)[0]
        canonical = normalize(rng.standard_normal(local_dim))
        descriptors[members] = canonical
    return descriptors, group_ids


def generate_scene(
    layout: str,
    n_landmarks: int,
    n_cameras: int,
    ambiguity: AmbiguityConfig,
    seed: int,
    n_cells: int = 9,
    local_dim: int = 512,
) -> SyntheticScene:
    """Generate a deterministic synthetic scene.

    Every landmark must be visible in at least min(3, n_cameras) cameras;
    placements are redrawn up to 1000 times before InfeasibleLayout is
    raised.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    if n_landmarks < 10:
        raise ValueError("n_landmarks must be >= 10")
    if n_cameras < 2:
        raise ValueError("n_cameras must be >= 2")

    rng = np.random.default_rng(seed)
    intr = default_intrinsics().as_array()
    need = min(3, n_cameras)

    for _ in range(PLACEMENT_ATTEMPTS):
        if layout == "single_region":
            lms, centers, rots, regions, max_depth, cells = _single_region_geometry(
                n_landmarks, n_cameras, rng
            )
        elif layout == "grid_of_rooms":
            lms, centers, rots, regions, max_depth, cells = _grid_geometry(
                n_landmarks, n_cameras, n_cells, rng
            )
        else:
            lms, centers, rots, regions, max_depth, cells = _street_geometry(
                n_landmarks, n_cameras, rng
            )

        translations = np.einsum("nij,nj->ni", rots, -centers)
        scene = SyntheticScene(
            layout_kind=layout,
            landmarks=lms,
            descriptors=np.zeros((n_landmarks, 0)),
            group_ids=np.zeros(n_landmarks, dtype=int),
            rotations=rots,
            translations=translations,
            intrinsics=np.tile(intr, (n_cameras, 1)),
            view_max_depth=max_depth,
            n_cells=cells,
            region_ids=np.asarray(regions, dtype=int),
        )
        counts = visibility_matrix(scene).sum(axis=0)
        if (counts >= need).all():
            break
    else:
        raise InfeasibleLayout(
            f"could not cover every landmark with >= {need} cameras "
            f"in {PLACEMENT_ATTEMPTS} attempts"
        )

    descriptors, group_ids = _assign_ambiguity(
        n_landmarks, scene.region_ids, ambiguity, local_dim, rng
    )
    scene.descriptors = descriptors
    scene.group_ids = group_ids
    return scene


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def render_observations(
    scene: SyntheticScene,
    camera_index: int,
    samples_per_image: int,
    seed: int,
    pixel_jitter_sigma: float = 0.0,
    descriptor_noise_sigma: float | None = None,
) -> list[ObservationRecord]:
    """Observation records for one camera, subsampled to samples_per_image.

    ``descriptor_noise_sigma`` defaults to 0 (the canonical descriptor is
    emitted verbatim); pass the scene's AmbiguityConfig value to add
    view-dependent encoding noise.
    """
    if not 0 <= camera_index < scene.n_cameras:
        raise IndexError(f"camera_index {camera_index} out of range")
    rng = np.random.default_rng(seed)
    sigma_d = descriptor_noise_sigma or 0.0

    mask = visible_mask(scene, camera_index)
    ids = np.nonzero(mask)[0]
    if len(ids) > samples_per_image:
        ids = np.sort(rng.choice(ids, size=samples_per_image, replace=False))

    pose = scene.pose(camera_index)
    K = scene.intrinsics_of(camera_index)
    cam = scene.landmarks[ids] @ pose.rotation.T + pose.translation
    pix = np.stack(
        [K.fx * cam[:, 0] / cam[:, 2] + K.cx, K.fy * cam[:, 1] / cam[:, 2] + K.cy],
        axis=1,
    )
    if pixel_jitter_sigma > 0:
        pix = pix + rng.normal(0.0, pixel_jitter_sigma, pix.shape)

    w, h = scene.image_size
    records = []
    for row, lm in enumerate(ids):
        u, v = pix[row]
        if not (0 <= u < w and 0 <= v < h):
            continue  # jitter pushed it out of bounds
        enc = scene.descriptors[lm]
        if sigma_d > 0:
            enc = enc + rng.normal(0.0, sigma_d, enc.shape)
        records.append(
            ObservationRecord(
                pixel=pix[row].copy(),
                local_encoding=np.asarray(enc, dtype=float),
                image_index=camera_index,
                intrinsics=K,
                gt_pose=pose,
                landmark_id=int(lm),
            )
        )
    return records


# ---------------------------------------------------------------------------
# global encoding simulator
# ---------------------------------------------------------------------------


def simulate_global_encoding(
    scene: SyntheticScene,
    dim: int,
    fit_iterations: int,
    seed: int,
    margin: float = 0.1,
    covis_positive_threshold: int = 1,
    learning_rate: float = 0.02,
    batch_size: int = 128,
    content_sigma: float = 0.0,
) -> np.ndarray:
    """Fit unit-norm per-image encodings to co-visibility with a triplet loss.

    Positive pairs have covisibility >= covis_positive_threshold, negatives
    have zero co-visible landmarks. Returns an (n_cameras, dim) table. Raises
    FitFailure when, after fitting, co-visible pairs are not closer (in
    angular distance) than non-co-visible pairs, provided both classes exist.

    A pretrained retrieval embedding carries image-specific appearance on top
    of place identity, so co-visible pairs stay well separated rather than
    collapsing onto each other; ``content_sigma`` adds that per-image
    component (a fixed random direction per image, mixed in before the final
    renormalization). Zero keeps the raw fit.
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    rng = np.random.default_rng(seed)
    n = scene.n_cameras
    covis = covisibility_matrix(scene)
    np.fill_diagonal(covis, 0)

    pos_lists = [np.nonzero(covis[i] >= covis_positive_threshold)[0] for i in range(n)]
    neg_lists = [np.nonzero(covis[i] == 0)[0] for i in range(n)]
    triplet_anchors = [i for i in range(n) if len(pos_lists[i]) and len(neg_lists[i])]
    pull_anchors = [i for i in range(n) if len(pos_lists[i])]

    E = normalize(rng.standard_normal((n, dim)))
    for _ in range(fit_iterations):
        grad = np.zeros_like(E)
        touches = np.zeros(n)
        if triplet_anchors:
            anchors = rng.choice(triplet_anchors, size=batch_size)
            for a in anchors:
                p = int(rng.choice(pos_lists[a]))
                ng = int(rng.choice(neg_lists[a]))
                if np.sum((E[a] - E[p]) ** 2) - np.sum((E[a] - E[ng]) ** 2) + margin > 0:
                    grad[a] += 2 * (E[ng] - E[p])
                    grad[p] += -2 * (E[a] - E[p])
                    grad[ng] += 2 * (E[a] - E[ng])
                    touches[[a, p, ng]] += 1
        elif pull_anchors:
            # No negatives anywhere (fully co-visible scene): contract positives.
            anchors = rng.choice(pull_anchors, size=batch_size)
            for a in anchors:
                p = int(rng.choice(pos_lists[a]))
                grad[a] += 2 * (E[a] - E[p])
                grad[p] += -2 * (E[a] - E[p])
                touches[[a, p]] += 1
        else:
            break
        # Per-row averaging keeps the step size independent of how often a
        # given image was sampled into the batch.
        E = normalize(E - learning_rate * grad / np.maximum(touches, 1.0)[:, None])

    if content_sigma > 0:
        content = normalize(rng.standard_normal((n, dim)))
        E = normalize(E + content_sigma * content)

    iu, ju = np.triu_indices(n, k=1)
    cos = np.clip(np.einsum("ij,ij->i", E[iu], E[ju]), -1, 1)
    ang = np.degrees(np.arccos(cos))
    pos_pair = covis[iu, ju] >= covis_positive_threshold
    neg_pair = covis[iu, ju] == 0
    if pos_pair.any() and neg_pair.any():
        if ang[pos_pair].mean() >= ang[neg_pair].mean():
            raise FitFailure(
                "co-visible pairs are not closer than unrelated pairs after fitting"
            )
    return E


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_scene(path, scene: SyntheticScene, encodings: np.ndarray | None = None) -> None:
    arrays = {
        "landmarks": scene.landmarks,
        "descriptors": scene.descriptors,
        "group_ids": scene.group_ids,
        "rotations": scene.rotations,
        "translations": scene.translations,
        "intrinsics": scene.intrinsics,
        "region_ids": scene.region_ids,
    }
    if encodings is not None:
        arrays["global_encodings"] = encodings
    meta = {
        "layout_kind": scene.layout_kind,
        "image_size": list(scene.image_size),
        "view_max_depth": (
            "inf" if np.isinf(scene.view_max_depth) else scene.view_max_depth
        ),
        "n_cells": scene.n_cells,
    }
    write_container(path, "scene", SCENE_FORMAT_VERSION, arrays, meta)


def load_scene(path) -> tuple[SyntheticScene, np.ndarray | None]:
    arrays, meta, _, version = read_container(path, expect_kind="scene")
    if version != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version {version}")
    scene = SyntheticScene(
        layout_kind=meta["layout_kind"],
        landmarks=arrays["landmarks"],
        descriptors=arrays["descriptors"],
        group_ids=arrays["group_ids"],
        rotations=arrays["rotations"],
        translations=arrays["translations"],
        intrinsics=arrays["intrinsics"],
        image_size=tuple(meta["image_size"]),
        view_max_depth=(
            np.inf if meta["view_max_depth"] == "inf" else float(meta["view_max_depth"])
        ),
        n_cells=int(meta["n_cells"]),
        region_ids=arrays["region_ids"],
    )
    return scene, arrays.get("global_encodings")
