"""Pairwise co-visibility vs encoding-distance statistics.

Builds the exhaustive table of (image pair, co-visible landmark count,
angular encoding distance), the distance histograms conditioned on
co-visibility, and the co-visibility rate as a function of distance. CSV is
the output contract; figures are rendered by the CLI on top of these files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_sim import SyntheticScene, covisibility_matrix


class EmptyClass(Exception):
    """A conditional class contains no pairs; the histogram is undefined."""


@dataclass
class PairStats:
    """Unordered image pairs (i < j) with co-visibility and encoding distance."""

    image_i: np.ndarray  # (P,) int
    image_j: np.ndarray  # (P,) int
    covis_count: np.ndarray  # (P,) int
    angular_distance_deg: np.ndarray  # (P,) float

    def __len__(self) -> int:
        return len(self.image_i)


def compute_pair_stats(scene: SyntheticScene, encodings: np.ndarray) -> PairStats:
    """Exhaustive pairwise table over all n(n-1)/2 unordered image pairs."""
    n = scene.n_cameras
    if len(encodings) != n:
        raise ValueError("encodings must cover all images")
    covis = covisibility_matrix(scene)
    iu, ju = np.triu_indices(n, k=1)
    cos = np.clip(np.einsum("ij,ij->i", encodings[iu], encodings[ju]), -1.0, 1.0)
    return PairStats(
        image_i=iu.astype(np.int64),
        image_j=ju.astype(np.int64),
        covis_count=covis[iu, ju].astype(np.int64),
        angular_distance_deg=np.degrees(np.arccos(cos)),
    )


def distance_histogram_given_covis(
    stats: PairStats, N: int, bins: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Normalized distance histograms of the two co-visibility classes.

    Pairs with covis_count >= N form the co-visible class, the rest the
    non-co-visible class. Returns (edges, hist_covis, hist_non, counts_covis,
    counts_non); histograms sum to 1. Raises EmptyClass when either class is
    empty.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    covis = stats.covis_count >= N
    if not covis.any() or covis.all():
        raise EmptyClass(f"one co-visibility class is empty at N={N}")
    edges = np.linspace(0.0, 180.0, bins + 1)
    counts_c, _ = np.histogram(stats.angular_distance_deg[covis], bins=edges)
    counts_n, _ = np.histogram(stats.angular_distance_deg[~covis], bins=edges)
    return (
        edges,
        counts_c / counts_c.sum(),
        counts_n / counts_n.sum(),
        counts_c,
        counts_n,
    )


def covis_rate_given_distance(
    stats: PairStats, N: int, bins: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Empirical P(covis >= N | distance in bin) over populated bins only.

    Returns (bin_low, bin_high, rate, count); bins without pairs are absent
    (not reported as zero).
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(0.0, 180.0, bins + 1)
    which = np.clip(np.digitize(stats.angular_distance_deg, edges) - 1, 0, bins - 1)
    covis = stats.covis_count >= N
    lows, highs, rates, counts = [], [], [], []
    for b in range(bins):
        mask = which == b
        total = int(mask.sum())
        if total == 0:
            continue
        lows.append(edges[b])
        highs.append(edges[b + 1])
        rates.append(float(covis[mask].mean()))
        counts.append(total)
    return (np.array(lows), np.array(highs), np.array(rates), np.array(counts))


def save_histogram_csv(path, edges: np.ndarray, values: np.ndarray, counts: np.ndarray) -> None:
    """One row per bin with header (bin_low_deg, bin_high_deg, value, count)."""
    with open(path, "w") as fh:
        fh.write("bin_low_deg,bin_high_deg,value,count\n")
        for lo, hi, val, cnt in zip(edges[:-1], edges[1:], values, counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{float(val)!r},{int(cnt)}\n")


def save_curve_csv(path, lows: np.ndarray, highs: np.ndarray, rates: np.ndarray,
                   counts: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("bin_low_deg,bin_high_deg,value,count\n")
        for lo, hi, rate, cnt in zip(lows, highs, rates, counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{float(rate)!r},{int(cnt)}\n")


def spearman_rank_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rho: Pearson correlation of midranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length samples of size >= 2")

    def midrank(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        ranks = np.empty(len(v))
        sv = v[order]
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and sv[j + 1] == sv[i]:
                j += 1
            ranks[order[i : j + 1]] = (i + j) / 2.0
            i = j + 1
        return ranks

    rx, ry = midrank(x), midrank(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        return 0.0
    return float((rx @ ry) / denom)


def scaled_covis_thresholds(
    n_landmarks: int, base: tuple[int, int] = (15, 100), reference_landmarks: int = 5000
) -> tuple[int, int]:
    """Co-visibility thresholds scaled from reference-reconstruction scale to
    the synthetic scene's landmark count (floored at 1)."""
    s = n_landmarks / reference_landmarks
    return tuple(max(1, round(b * s)) for b in base)
