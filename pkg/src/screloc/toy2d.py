"""Simplified 2D regression task probing the position decoder.

Tiles sit on a unit grid; each sample carries a synthetic encoding of its
position and is supervised directly with its global 2D coordinate (L1). The
comparison of a single-center decoder against one center per tile isolates
the effect of the multimodal output parameterization from everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regressor import (
    AdamWState,
    DecoderParams,
    Diverged,
    RawOutput,
    RegressorHead,
    _decode_backward,
    adamw_update,
    decode_position,
    one_cycle_lr,
    TrainConfig,
)


@dataclass
class Toy2DDataset:
    tile_origins: np.ndarray  # (g, 2) lower-left corners, unit tiles
    cluster_centers: np.ndarray  # (g, 2) tile centers
    encodings: np.ndarray  # (S, De)
    targets: np.ndarray  # (S, 2) global coordinates
    tile_ids: np.ndarray  # (S,) int

    @property
    def n_tiles(self) -> int:
        return len(self.tile_origins)

    def __len__(self) -> int:
        return len(self.encodings)


def build_toy2d(
    grid: int,
    samples_per_tile: int,
    seed: int,
    encoding_dim: int = 32,
    alias_fraction: float = 0.0,
    tile_size: float = 1.0,
) -> Toy2DDataset:
    """Dataset of ``grid`` square tiles with per-sample positional encodings.

    Encodings are random Fourier features of the position within the tile
    plus a tile-specific phase, so they are unique per sample position and
    tile-distinct. A fraction ``alias_fraction`` of samples drops the tile
    phase, making them indistinguishable from same-position samples of other
    tiles (cross-tile aliasing). ``tile_size`` sets the coordinate scale of a
    tile edge; the decoder comparison is scale-sensitive, matching image
    tiles hundreds of pixels wide.
    """
    if grid < 1:
        raise ValueError("grid must be >= 1")
    if not 0.0 <= alias_fraction <= 1.0:
        raise ValueError("alias_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    cols = int(np.ceil(np.sqrt(grid)))
    origins = tile_size * np.array(
        [(k % cols, k // cols) for k in range(grid)], dtype=float
    )

    W = rng.normal(0.0, 3.0, (encoding_dim, 2))
    b = rng.uniform(0, 2 * np.pi, encoding_dim)
    tile_phase = rng.uniform(0, 2 * np.pi, (grid, encoding_dim))

    S = grid * samples_per_tile
    encodings = np.empty((S, encoding_dim))
    targets = np.empty((S, 2))
    tile_ids = np.repeat(np.arange(grid), samples_per_tile)
    local = rng.uniform(0.0, 1.0, (S, 2))
    aliased = rng.random(S) < alias_fraction
    for s in range(S):
        tile = tile_ids[s]
        phase = 0.0 if aliased[s] else tile_phase[tile]
        encodings[s] = np.cos(W @ local[s] + b + phase)
        targets[s] = origins[tile] + tile_size * local[s]
    return Toy2DDataset(
        tile_origins=origins,
        cluster_centers=origins + 0.5 * tile_size,
        encodings=encodings,
        targets=targets,
        tile_ids=tile_ids,
    )


def toy_decoder(data: Toy2DDataset, k: int, s_min: float = 0.1, s_max: float = 100.0) -> DecoderParams:
    """Decoder with one center (grid centroid) or one center per tile."""
    if k == 1:
        centers = data.cluster_centers.mean(axis=0, keepdims=True)
    elif k == data.n_tiles:
        centers = data.cluster_centers
    else:
        raise ValueError(f"k must be 1 or n_tiles={data.n_tiles}, got {k}")
    return DecoderParams(centers=centers, s_min=s_min, s_max=s_max)


def train_toy2d(
    data: Toy2DDataset,
    k: int,
    cfg: TrainConfig,
    hidden_width: int = 48,
    residual_blocks: int = 1,
) -> float:
    """Train the 2D-decode head under direct L1 supervision; returns the
    mean absolute error (grid units) over the training samples."""
    decoder = toy_decoder(data, k)
    head = RegressorHead(
        input_width=data.encodings.shape[1],
        hidden_width=hidden_width,
        residual_blocks=residual_blocks,
        n_logits=k,
        coord_dim=2,
        seed=cfg.seed,
    )
    rng = np.random.default_rng(cfg.seed)
    state = AdamWState.init(head.params)
    bad_streak = 0
    for it in range(cfg.iterations):
        lr = one_cycle_lr(it, cfg.iterations, cfg.lr_start, cfg.lr_peak, cfg.lr_end,
                          cfg.warmup_fraction)
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        raw, cache = head._forward_cached(data.encodings[idx])
        y = decode_position(raw, decoder)
        diff = y - data.targets[idx]
        loss = float(np.abs(diff).mean())
        if not np.isfinite(loss):
            bad_streak += 1
            if bad_streak >= 10:
                raise Diverged("toy2d loss non-finite for 10 consecutive iterations")
            continue
        bad_streak = 0
        d_y = np.sign(diff) / len(idx)
        d_logits, d_ddot, d_what = _decode_backward(raw, decoder, d_y)
        d_out = np.concatenate([d_logits, d_ddot, d_what[:, None]], axis=1)
        grads = head._backward(cache, d_out)
        adamw_update(head.params, grads, state, lr, cfg.weight_decay)

    pred = decode_position(head.forward(data.encodings), decoder)
    return float(np.abs(pred - data.targets).mean())


def sample_decoder_prior(decoder: DecoderParams, n: int, seed: int) -> np.ndarray:
    """Decoded positions of standard-Gaussian raw outputs (the decoder's
    output prior under generic network activations)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    raw = RawOutput(
        logits=rng.standard_normal((n, decoder.k)),
        d_dot=rng.standard_normal((n, decoder.coord_dim)),
        w_hat=rng.standard_normal(n),
    )
    if n == 0:
        return np.zeros((0, decoder.coord_dim))
    return decode_position(raw, decoder)


def save_mae_csv(path, rows: list[tuple[int, int, float]]) -> None:
    """(seed, k, mae) rows."""
    with open(path, "w") as fh:
        fh.write("seed,k,mae\n")
        for seed, k, mae in rows:
            fh.write(f"{int(seed)},{int(k)},{float(mae)!r}\n")


def save_prior_samples(path, samples: np.ndarray) -> None:
    """ASCII point cloud: one "x y" line per sample."""
    with open(path, "w") as fh:
        for p in samples:
            fh.write(f"{float(p[0])!r} {float(p[1])!r}\n")
