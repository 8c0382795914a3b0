"""Global-encoding utilities: angular distance, diffusion, clustering, concat.

Global encodings are unit-norm vectors (rows of an (n, D) table indexed by
image). Feature diffusion perturbs an encoding with isotropic Gaussian noise
and maps it back to the unit sphere; it is a training-time augmentation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatch(Exception):
    """Vector dimensions disagree with the configured layout."""


def normalize(v: np.ndarray) -> np.ndarray:
    """Map vectors (last axis) onto the unit sphere."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize a (near-)zero vector")
    return v / n


def angular_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in degrees between two unit vectors, clamped into [0, 180]."""
    d = float(np.clip(np.dot(u, v), -1.0, 1.0))
    return float(np.degrees(np.arccos(d)))


def angular_distance_matrix(table: np.ndarray) -> np.ndarray:
    """Pairwise angular distances (degrees) between rows of a unit-norm table."""
    g = np.clip(table @ table.T, -1.0, 1.0)
    return np.degrees(np.arccos(g))


def diffuse(g: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Return (g + eps) / ||g + eps|| with eps ~ N(0, sigma^2 I).

    Fresh noise is drawn on every call. sigma = 0 returns g unchanged. The
    measure-zero event of a near-zero sum is redrawn internally.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    g = np.asarray(g, dtype=float)
    if sigma == 0.0:
        return g
    for _ in range(16):
        noisy = g + rng.normal(0.0, sigma, size=g.shape)
        n = np.linalg.norm(noisy)
        if n >= 1e-12:
            return noisy / n
    raise ValueError("diffusion repeatedly produced a zero vector")


def diffuse_batch(table: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise diffuse for a (B, D) batch; one noise draw per row per call."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    table = np.asarray(table, dtype=float)
    if sigma == 0.0 or table.shape[-1] == 0:
        return table
    noisy = table + rng.normal(0.0, sigma, size=table.shape)
    norms = np.linalg.norm(noisy, axis=1)
    bad = norms < 1e-12
    while bad.any():
        noisy[bad] = table[bad] + rng.normal(0.0, sigma, size=(bad.sum(), table.shape[1]))
        norms = np.linalg.norm(noisy, axis=1)
        bad = norms < 1e-12
    return noisy / norms[:, None]


def concat(local: np.ndarray, global_enc: np.ndarray) -> np.ndarray:
    """Concatenate local and global encodings, local first.

    Accepts single vectors or batches; raises DimensionMismatch when the
    batch shapes disagree.
    """
    local = np.asarray(local, dtype=float)
    global_enc = np.asarray(global_enc, dtype=float)
    if local.ndim != global_enc.ndim:
        raise DimensionMismatch(
            f"local ndim {local.ndim} != global ndim {global_enc.ndim}"
        )
    if local.ndim == 2 and local.shape[0] != global_enc.shape[0]:
        raise DimensionMismatch(
            f"batch sizes differ: {local.shape[0]} vs {global_enc.shape[0]}"
        )
    return np.concatenate([local, global_enc], axis=-1)


def split(combined: np.ndarray, local_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of concat."""
    return combined[..., :local_dim], combined[..., local_dim:]


def triplet_margin_loss(q: np.ndarray, p: np.ndarray, n: np.ndarray, m: float) -> float:
    """max(||q - p||^2 - ||q - n||^2 + m, 0)."""
    dp = float(np.sum((q - p) ** 2))
    dn = float(np.sum((q - n) ** 2))
    return max(dp - dn + m, 0.0)


# ---------------------------------------------------------------------------
# K-Means++
# ---------------------------------------------------------------------------


@dataclass
class ClusterModel:
    """Cluster centers plus the assignment of the fitted points."""

    centers: np.ndarray  # (k, D)
    assignment: np.ndarray  # (n,) int

    def __post_init__(self) -> None:
        if len(self.centers) == 0:
            raise ValueError("centers must be non-empty")
        if self.assignment.min(initial=0) < 0 or self.assignment.max(initial=0) >= len(
            self.centers
        ):
            raise ValueError("assignment indices out of range")

    @property
    def k(self) -> int:
        return len(self.centers)

    def inertia(self, points: np.ndarray) -> float:
        return float(
            np.sum((points - self.centers[self.assignment]) ** 2)
        )


def _nearest_center(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # Squared distances; ties broken by lowest center index via argmin.
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def kmeans_pp(
    points: np.ndarray, k: int, iterations: int = 100, seed: int = 0,
    n_init: int = 1,
) -> ClusterModel:
    """K-Means with K-Means++ seeding and Lloyd iterations.

    Deterministic per seed; each restart stops at the assignment fixpoint or
    the iteration cap, and the lowest-inertia restart wins. Nearest-center
    ties break toward the lowest index. Empty clusters keep their previous
    center.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)

    best: ClusterModel | None = None
    best_inertia = np.inf
    for _ in range(n_init):
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[rng.integers(n)]
        d2 = np.sum((points - centers[0]) ** 2, axis=1)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[j] = points[rng.integers(n)]
            else:
                r = rng.random() * total
                idx = int(np.searchsorted(np.cumsum(d2), r))
                centers[j] = points[min(idx, n - 1)]
            d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

        assignment = _nearest_center(points, centers)
        for _ in range(iterations):
            for j in range(k):
                members = points[assignment == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
            new_assignment = _nearest_center(points, centers)
            if np.array_equal(new_assignment, assignment):
                break
            assignment = new_assignment
        model = ClusterModel(centers=centers, assignment=assignment)
        inertia = model.inertia(points)
        if inertia < best_inertia:
            best, best_inertia = model, inertia
    return best


def cluster_encode(g: np.ndarray, model: ClusterModel) -> np.ndarray:
    """Snap an encoding to its nearest cluster center, renormalized to unit norm."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != model.centers.shape[1]:
        raise DimensionMismatch(
            f"encoding dim {g.shape[-1]} != center dim {model.centers.shape[1]}"
        )
    single = g.ndim == 1
    pts = g[None, :] if single else g
    idx = _nearest_center(pts, model.centers)
    out = normalize(model.centers[idx])
    return out[0] if single else out
