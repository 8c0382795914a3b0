"""The trainable head: residual MLP, position decoder, robust reprojection
loss, reverse-mode gradients, training buffer, and the optimization loop.

Everything is plain numpy with hand-written backward passes; gradient
correctness is enforced against central finite differences (see tests and
the CLI gradcheck command). All randomness flows through seeded generators,
so training is bitwise reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .encodings import DimensionMismatch, concat, diffuse_batch
from .geometry import CameraIntrinsics, RigidPose
from .scene_sim import ObservationRecord, SyntheticScene, render_observations, simulate_global_encoding

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteGradient(Exception):
    """A gradient became NaN/Inf (training diverged)."""


class Diverged(Exception):
    """Training loss was non-finite for 10 consecutive iterations."""


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecoderParams:
    """Cluster centers and scale bounds of the position decoder.

    The decoded position is a softmax-weighted convex combination of the
    centers plus a homogeneous offset whose scale is bounded to
    (1/s_max, 1/s_min] by a softplus transform.
    """

    centers: np.ndarray  # (k, C), C = 2 or 3
    s_min: float = 0.1
    s_max: float = 100.0

    def __post_init__(self) -> None:
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", centers)
        if centers.shape[0] < 1:
            raise ValueError("need at least one cluster center")
        if not (0 < self.s_min < self.s_max):
            raise ValueError("require 0 < s_min < s_max")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def coord_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def beta(self) -> float:
        return float(np.log(2.0) / (1.0 - 1.0 / self.s_max))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def scale_transform(w_hat, p: DecoderParams):
    """w = min(1/s_min, softplus(beta * w_hat)/beta + 1/s_max).

    Exactly 1 at w_hat = 0; monotone non-decreasing; range (1/s_max, 1/s_min].
    """
    w_hat = np.asarray(w_hat, dtype=float)
    raw = _softplus(p.beta * w_hat) / p.beta + 1.0 / p.s_max
    out = np.minimum(1.0 / p.s_min, raw)
    return out if out.ndim else float(out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _scale_transform_grad(w_hat: np.ndarray, p: DecoderParams) -> np.ndarray:
    w_hat = np.atleast_1d(np.asarray(w_hat, dtype=float))
    raw = _softplus(p.beta * w_hat) / p.beta + 1.0 / p.s_max
    return np.where(raw < 1.0 / p.s_min, _sigmoid(p.beta * w_hat), 0.0)


@dataclass
class RawOutput:
    """Network output split into decoder inputs (single sample or batch)."""

    logits: np.ndarray  # (..., k)
    d_dot: np.ndarray  # (..., C)
    w_hat: np.ndarray  # (...)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_position(raw: RawOutput, p: DecoderParams) -> np.ndarray:
    """Decoded position: offset / scale + softmax(logits) @ centers."""
    logits = np.asarray(raw.logits, dtype=float)
    if logits.shape[-1] != p.k:
        raise DimensionMismatch(f"got {logits.shape[-1]} logits for k={p.k}")
    w = scale_transform(raw.w_hat, p)
    probs = _softmax(logits)
    return raw.d_dot / np.asarray(w)[..., None] + probs @ p.centers


def _decode_backward(
    raw: RawOutput, p: DecoderParams, d_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(d_y * y) w.r.t. (logits, d_dot, w_hat) for a batch."""
    w = np.asarray(scale_transform(raw.w_hat, p))
    probs = _softmax(raw.logits)
    d_ddot = d_y / w[..., None]
    dw = -(d_y * raw.d_dot).sum(axis=-1) / w**2
    d_what = dw * _scale_transform_grad(raw.w_hat, p)
    proj = d_y @ p.centers.T  # (..., k)
    d_logits = probs * (proj - (probs * proj).sum(axis=-1, keepdims=True))
    return d_logits, d_ddot, d_what


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossSchedule:
    """Robust-loss parameters: tanh bandwidth range, the valid prediction
    region, and the pseudo-target depth for invalid predictions."""

    tau_min: float = 1.0
    tau_max: float = 50.0
    z_near: float = 0.1
    z_far: float = 1000.0
    e_max: float = 1000.0
    z_pseudo: float = 10.0

    def __post_init__(self) -> None:
        if not (0 < self.tau_min <= self.tau_max):
            raise ValueError("require 0 < tau_min <= tau_max")
        if not (0 < self.z_near < self.z_far):
            raise ValueError("require 0 < z_near < z_far")


def tau_schedule(t: float, sched: LossSchedule) -> float:
    """tau(t) = sqrt(1 - t^2) * tau_max + tau_min for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must be in [0, 1]")
    return float(np.sqrt(1.0 - t * t) * sched.tau_max + sched.tau_min)


def _batch_loss_and_grad(
    pixels: np.ndarray,
    y: np.ndarray,
    rotations: np.ndarray,
    translations: np.ndarray,
    intrinsics: np.ndarray,
    tau: float,
    sched: LossSchedule,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample robust loss and its gradient w.r.t. the predicted points.

    Valid predictions (depth in [z_near, z_far], reprojection error < e_max)
    get tau * tanh(e/tau) on the L1 pixel residual; the rest are pulled
    toward the pixel unprojected at the fixed pseudo depth with an L1 loss
    whose target is treated as a constant. Returns (loss, d_y, valid_mask).
    """
    q = np.einsum("bij,bj->bi", rotations, y) + translations
    z = q[:, 2]
    fx, fy, cx, cy = intrinsics[:, 0], intrinsics[:, 1], intrinsics[:, 2], intrinsics[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * q[:, 0] / z + cx
        v = fy * q[:, 1] / z + cy
    ru = pixels[:, 0] - u
    rv = pixels[:, 1] - v
    e = np.abs(ru) + np.abs(rv)
    valid = (z >= sched.z_near) & (z <= sched.z_far) & (e < sched.e_max)
    valid &= np.isfinite(e)

    loss = np.empty(len(y))
    d_y = np.empty_like(y)

    if valid.any():
        i = valid
        th = np.tanh(e[i] / tau)
        loss[i] = tau * th
        coef = 1.0 - th**2
        du_dy = (fx[i] / z[i])[:, None] * rotations[i, 0, :] - (
            fx[i] * q[i, 0] / z[i] ** 2
        )[:, None] * rotations[i, 2, :]
        dv_dy = (fy[i] / z[i])[:, None] * rotations[i, 1, :] - (
            fy[i] * q[i, 1] / z[i] ** 2
        )[:, None] * rotations[i, 2, :]
        de_dy = -np.sign(ru[i])[:, None] * du_dy - np.sign(rv[i])[:, None] * dv_dy
        d_y[i] = coef[:, None] * de_dy

    if (~valid).any():
        i = ~valid
        # Pseudo ground truth: the observed pixel unprojected at z_pseudo,
        # detached from the gradient graph.
        ray = np.stack(
            [
                (pixels[i, 0] - cx[i]) / fx[i] * sched.z_pseudo,
                (pixels[i, 1] - cy[i]) / fy[i] * sched.z_pseudo,
                np.full(i.sum(), sched.z_pseudo),
            ],
            axis=1,
        )
        y_bar = np.einsum("bji,bj->bi", rotations[i], ray - translations[i])
        diff = y[i] - y_bar
        loss[i] = np.abs(diff).sum(axis=1)
        d_y[i] = np.sign(diff)

    return loss, d_y, valid


def robust_loss(
    x: np.ndarray,
    y: np.ndarray,
    h: RigidPose,
    K: CameraIntrinsics,
    tau: float,
    sched: LossSchedule,
) -> tuple[float, str]:
    """Single-sample robust reprojection loss; returns (loss, branch)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    loss, _, valid = _batch_loss_and_grad(
        np.asarray(x, dtype=float).reshape(1, 2),
        np.asarray(y, dtype=float).reshape(1, 3),
        h.rotation[None],
        h.translation[None],
        K.as_array()[None],
        tau,
        sched,
    )
    return float(loss[0]), "valid" if valid[0] else "pseudo"


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class RegressorHead:
    """Fully-connected residual network emitting k logits plus a homogeneous
    offset (coord_dim + 1 channels).

    Layout: an optional input projection when input_width != hidden_width,
    ``residual_blocks`` blocks of 3 affine layers with ReLU between and an
    identity skip, then a 3-layer output head whose final affine layer is
    zero-initialized so training starts at the uniform mix of the decoder
    centers.
    """

    def __init__(
        self,
        input_width: int,
        hidden_width: int,
        residual_blocks: int,
        n_logits: int,
        coord_dim: int = 3,
        seed: int = 0,
    ) -> None:
        if residual_blocks < 1:
            raise ValueError("need at least one residual block")
        self.input_width = input_width
        self.hidden_width = hidden_width
        self.residual_blocks = residual_blocks
        self.n_logits = n_logits
        self.coord_dim = coord_dim
        self.n_outputs = n_logits + coord_dim + 1

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}

        def affine(name: str, fan_in: int, fan_out: int, zero: bool = False) -> None:
            if zero:
                self.params[f"{name}.W"] = np.zeros((fan_in, fan_out))
            else:
                self.params[f"{name}.W"] = rng.normal(
                    0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)
                )
            self.params[f"{name}.b"] = np.zeros(fan_out)

        h = hidden_width
        if input_width != hidden_width:
            affine("in_proj", input_width, h)
        for b in range(residual_blocks):
            for layer in range(3):
                affine(f"block{b}.l{layer}", h, h)
        affine("head.l0", h, h)
        affine("head.l1", h, h)
        affine("head.l2", h, self.n_outputs, zero=True)

    # -- forward -----------------------------------------------------------

    def _forward_cached(self, x: np.ndarray) -> tuple[RawOutput, dict]:
        if x.shape[-1] != self.input_width:
            raise DimensionMismatch(
                f"input width {x.shape[-1]} != configured {self.input_width}"
            )
        P = self.params
        cache: dict[str, np.ndarray] = {"x": x}
        h = x
        if "in_proj.W" in P:
            h = x @ P["in_proj.W"] + P["in_proj.b"]
            cache["proj"] = h
        for b in range(self.residual_blocks):
            cache[f"b{b}.in"] = h
            z0 = h @ P[f"block{b}.l0.W"] + P[f"block{b}.l0.b"]
            a0 = np.maximum(z0, 0.0)
            z1 = a0 @ P[f"block{b}.l1.W"] + P[f"block{b}.l1.b"]
            a1 = np.maximum(z1, 0.0)
            z2 = a1 @ P[f"block{b}.l2.W"] + P[f"block{b}.l2.b"]
            cache[f"b{b}.z0"], cache[f"b{b}.a0"] = z0, a0
            cache[f"b{b}.z1"], cache[f"b{b}.a1"] = z1, a1
            h = h + z2
        cache["trunk"] = h
        z3 = h @ P["head.l0.W"] + P["head.l0.b"]
        a3 = np.maximum(z3, 0.0)
        z4 = a3 @ P["head.l1.W"] + P["head.l1.b"]
        a4 = np.maximum(z4, 0.0)
        out = a4 @ P["head.l2.W"] + P["head.l2.b"]
        cache["z3"], cache["a3"], cache["z4"], cache["a4"] = z3, a3, z4, a4
        k = self.n_logits
        raw = RawOutput(
            logits=out[..., :k],
            d_dot=out[..., k : k + self.coord_dim],
            w_hat=out[..., k + self.coord_dim],
        )
        return raw, cache

    def forward(self, x: np.ndarray) -> RawOutput:
        """Deterministic evaluation; accepts a single input or a batch."""
        raw, _ = self._forward_cached(np.asarray(x, dtype=float))
        return raw

    # -- backward ----------------------------------------------------------

    def _backward(self, cache: dict, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar with d(scalar)/d(out) = d_out, batch-summed."""
        P = self.params
        grads: dict[str, np.ndarray] = {}

        a4, z4, a3, z3 = cache["a4"], cache["z4"], cache["a3"], cache["z3"]
        grads["head.l2.W"] = a4.T @ d_out
        grads["head.l2.b"] = d_out.sum(axis=0)
        d_a4 = d_out @ P["head.l2.W"].T
        d_z4 = d_a4 * (z4 > 0)
        grads["head.l1.W"] = a3.T @ d_z4
        grads["head.l1.b"] = d_z4.sum(axis=0)
        d_a3 = d_z4 @ P["head.l1.W"].T
        d_z3 = d_a3 * (z3 > 0)
        grads["head.l0.W"] = cache["trunk"].T @ d_z3
        grads["head.l0.b"] = d_z3.sum(axis=0)
        d_h = d_z3 @ P["head.l0.W"].T

        for b in reversed(range(self.residual_blocks)):
            h_in = cache[f"b{b}.in"]
            a1, z1, a0, z0 = (
                cache[f"b{b}.a1"],
                cache[f"b{b}.z1"],
                cache[f"b{b}.a0"],
                cache[f"b{b}.z0"],
            )
            d_z2 = d_h  # branch output feeds the sum directly
            grads[f"block{b}.l2.W"] = a1.T @ d_z2
            grads[f"block{b}.l2.b"] = d_z2.sum(axis=0)
            d_a1 = d_z2 @ P[f"block{b}.l2.W"].T
            d_z1 = d_a1 * (z1 > 0)
            grads[f"block{b}.l1.W"] = a0.T @ d_z1
            grads[f"block{b}.l1.b"] = d_z1.sum(axis=0)
            d_a0 = d_z1 @ P[f"block{b}.l1.W"].T
            d_z0 = d_a0 * (z0 > 0)
            grads[f"block{b}.l0.W"] = h_in.T @ d_z0
            grads[f"block{b}.l0.b"] = d_z0.sum(axis=0)
            d_h = d_h + d_z0 @ P[f"block{b}.l0.W"].T  # skip + branch

        if "in_proj.W" in P:
            grads["in_proj.W"] = cache["x"].T @ d_h
            grads["in_proj.b"] = d_h.sum(axis=0)
        return grads

    def clone(self) -> "RegressorHead":
        other = RegressorHead.__new__(RegressorHead)
        other.__dict__.update(
            {k: v for k, v in self.__dict__.items() if k != "params"}
        )
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other


def forward(head: RegressorHead, x: np.ndarray) -> RawOutput:
    return head.forward(x)


# ---------------------------------------------------------------------------
# full loss backward
# ---------------------------------------------------------------------------


@dataclass
class LossBatch:
    """One training batch: network inputs plus reprojection supervision."""

    inputs: np.ndarray  # (B, D_l + D_g)
    pixels: np.ndarray  # (B, 2)
    rotations: np.ndarray  # (B, 3, 3)
    translations: np.ndarray  # (B, 3)
    intrinsics: np.ndarray  # (B, 4)


def batch_loss(
    head: RegressorHead,
    decoder: DecoderParams,
    batch: LossBatch,
    tau: float,
    sched: LossSchedule,
) -> tuple[float, float]:
    """(mean robust loss, valid fraction) of a batch, no gradients."""
    raw, _ = head._forward_cached(batch.inputs)
    y = decode_position(raw, decoder)
    loss, _, valid = _batch_loss_and_grad(
        batch.pixels, y, batch.rotations, batch.translations, batch.intrinsics, tau, sched
    )
    return float(loss.mean()), float(valid.mean())


def backward(
    head: RegressorHead,
    decoder: DecoderParams,
    batch: LossBatch,
    tau: float,
    sched: LossSchedule,
) -> tuple[dict[str, np.ndarray], float, float]:
    """Gradient of the mean batch loss for every weight.

    Returns (grads, mean_loss, valid_fraction). Raises NonFiniteGradient when
    any gradient entry is NaN/Inf.
    """
    raw, cache = head._forward_cached(batch.inputs)
    y = decode_position(raw, decoder)
    loss, d_y, valid = _batch_loss_and_grad(
        batch.pixels, y, batch.rotations, batch.translations, batch.intrinsics, tau, sched
    )
    B = len(loss)
    d_y = d_y / B  # mean over the batch
    d_logits, d_ddot, d_what = _decode_backward(raw, decoder, d_y)
    d_out = np.concatenate([d_logits, d_ddot, d_what[:, None]], axis=1)
    grads = head._backward(cache, d_out)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return grads, float(loss.mean()), float(valid.mean())


# ---------------------------------------------------------------------------
# training buffer
# ---------------------------------------------------------------------------


@dataclass
class TrainingBuffer:
    """Columnar store of observation records plus per-image lookup tables."""

    pixels: np.ndarray  # (M, 2)
    locals_: np.ndarray  # (M, D_l)
    image_index: np.ndarray  # (M,) int
    landmark_ids: np.ndarray  # (M,) int (simulator ground truth)
    rotations: np.ndarray  # (n_images, 3, 3)
    translations: np.ndarray  # (n_images, 3)
    intrinsics: np.ndarray  # (n_images, 4)
    global_table: np.ndarray  # (n_images, D_g)

    def __post_init__(self) -> None:
        if len(self.image_index) and self.image_index.max() >= len(self.global_table):
            raise ValueError("record image_index missing from global table")

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def local_dim(self) -> int:
        return self.locals_.shape[1]

    @property
    def global_dim(self) -> int:
        return self.global_table.shape[1]


def buffer_from_records(
    records: list[ObservationRecord],
    n_images: int,
    rotations: np.ndarray,
    translations: np.ndarray,
    intrinsics: np.ndarray,
    global_table: np.ndarray,
) -> TrainingBuffer:
    return TrainingBuffer(
        pixels=np.array([r.pixel for r in records]),
        locals_=np.array([r.local_encoding for r in records]),
        image_index=np.array([r.image_index for r in records], dtype=np.int64),
        landmark_ids=np.array([r.landmark_id for r in records], dtype=np.int64),
        rotations=rotations,
        translations=translations,
        intrinsics=intrinsics,
        global_table=global_table,
    )


def fill_buffer(
    scene: SyntheticScene,
    samples_per_image: int,
    seed: int,
    camera_indices: list[int] | None = None,
    encodings: np.ndarray | None = None,
    encoding_dim: int = 256,
    encoding_fit_iterations: int = 1000,
    descriptor_noise_sigma: float = 0.0,
    pixel_jitter_sigma: float = 0.0,
) -> TrainingBuffer:
    """Render observations for the selected cameras into a training buffer.

    Global encodings are taken from ``encodings`` when supplied (one row per
    scene camera), otherwise fitted by simulate_global_encoding.
    """
    cams = list(range(scene.n_cameras)) if camera_indices is None else list(camera_indices)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(scene.n_cameras + 1)
    records: list[ObservationRecord] = []
    for ci in cams:
        records.extend(
            render_observations(
                scene,
                ci,
                samples_per_image,
                children[ci],
                pixel_jitter_sigma=pixel_jitter_sigma,
                descriptor_noise_sigma=descriptor_noise_sigma,
            )
        )
    if encodings is None:
        encodings = simulate_global_encoding(
            scene, encoding_dim, encoding_fit_iterations, children[-1]
        )
    if len(encodings) != scene.n_cameras:
        raise ValueError("encodings must cover every scene camera")
    return buffer_from_records(
        records,
        scene.n_cameras,
        scene.rotations,
        scene.translations,
        scene.intrinsics,
        np.asarray(encodings, dtype=float),
    )


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    iterations: int = 2000
    lr_start: float = 2e-4
    lr_peak: float = 5e-3
    lr_end: float = 2e-8
    weight_decay: float = 1e-2
    sigma: float = 0.1  # global-encoding diffusion std
    seed: int = 0
    warmup_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.lr_start, self.lr_peak, self.lr_end) <= 0:
            raise ValueError("learning rates must be positive")


def one_cycle_lr(
    iteration: int, total: int, lr_start: float, lr_peak: float, lr_end: float,
    warmup_fraction: float = 0.3,
) -> float:
    """Cosine warmup to the peak over the first warmup fraction, cosine
    anneal to lr_end afterwards; endpoints are exact."""
    if total <= 1:
        return lr_start
    warm = max(1, round(warmup_fraction * (total - 1)))
    i = min(max(iteration, 0), total - 1)
    if i <= warm:
        s = i / warm
        return lr_start + (lr_peak - lr_start) * (1.0 - np.cos(np.pi * s)) / 2.0
    s = (i - warm) / (total - 1 - warm)
    return lr_end + (lr_peak - lr_end) * (1.0 + np.cos(np.pi * s)) / 2.0


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @staticmethod
    def init(params: dict[str, np.ndarray]) -> "AdamWState":
        return AdamWState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )

    def clone(self) -> "AdamWState":
        return AdamWState(
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
        )


def adamw_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place decoupled-weight-decay adaptive moment step."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainTrace:
    iteration: np.ndarray
    lr: np.ndarray
    tau: np.ndarray
    mean_loss: np.ndarray
    valid_fraction: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,lr,tau,mean_loss,valid_fraction\n")
            for row in zip(self.iteration, self.lr, self.tau, self.mean_loss, self.valid_fraction):
                fh.write(
                    f"{int(row[0])},{float(row[1])!r},{float(row[2])!r},"
                    f"{float(row[3])!r},{float(row[4])!r}\n"
                )


@dataclass
class TrainResult:
    head: RegressorHead
    trace: TrainTrace
    opt_state: AdamWState
    rng_state: dict
    iterations_completed: int


def train(
    buffer: TrainingBuffer,
    head: RegressorHead,
    decoder: DecoderParams,
    cfg: TrainConfig,
    sched: LossSchedule | None = None,
    start_iteration: int = 0,
    opt_state: AdamWState | None = None,
    rng_state: dict | None = None,
) -> TrainResult:
    """Run the reprojection-loss training loop.

    Per iteration: sample a batch with replacement, look up global encodings,
    diffuse them with fresh noise, concatenate, forward, decode, robust loss
    with the tau schedule, backward, AdamW step under a one-cycle learning
    rate. Deterministic per seed. Raises Diverged after 10 consecutive
    non-finite losses.
    """
    if len(buffer) == 0:
        raise ValueError("training buffer is empty")
    sched = sched or LossSchedule()
    rng = np.random.default_rng(cfg.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    state = opt_state or AdamWState.init(head.params)

    total = cfg.iterations
    n_steps = total - start_iteration
    trace = TrainTrace(
        iteration=np.zeros(n_steps, dtype=np.int64),
        lr=np.zeros(n_steps),
        tau=np.zeros(n_steps),
        mean_loss=np.zeros(n_steps),
        valid_fraction=np.zeros(n_steps),
    )

    bad_streak = 0
    for row, it in enumerate(range(start_iteration, total)):
        t = it / total
        tau = tau_schedule(t, sched)
        lr = one_cycle_lr(it, total, cfg.lr_start, cfg.lr_peak, cfg.lr_end,
                          cfg.warmup_fraction)

        idx = rng.integers(0, len(buffer), size=cfg.batch_size)
        img = buffer.image_index[idx]
        glob = diffuse_batch(buffer.global_table[img], cfg.sigma, rng)
        batch = LossBatch(
            inputs=concat(buffer.locals_[idx], glob),
            pixels=buffer.pixels[idx],
            rotations=buffer.rotations[img],
            translations=buffer.translations[img],
            intrinsics=buffer.intrinsics[img],
        )
        try:
            grads, mean_loss, valid_frac = backward(head, decoder, batch, tau, sched)
        except NonFiniteGradient:
            grads, mean_loss, valid_frac = None, float("nan"), 0.0

        if not np.isfinite(mean_loss):
            bad_streak += 1
            if bad_streak >= 10:
                raise Diverged(f"loss non-finite for {bad_streak} consecutive iterations")
        else:
            bad_streak = 0
            adamw_update(head.params, grads, state, lr, cfg.weight_decay)

        trace.iteration[row] = it
        trace.lr[row] = lr
        trace.tau[row] = tau
        trace.mean_loss[row] = mean_loss
        trace.valid_fraction[row] = valid_frac

    return TrainResult(
        head=head,
        trace=trace,
        opt_state=state,
        rng_state=rng.bit_generator.state,
        iterations_completed=total,
    )


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def gradcheck(
    head: RegressorHead,
    decoder: DecoderParams,
    batch: LossBatch,
    tau: float,
    sched: LossSchedule,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    grads, _, _ = backward(head, decoder, batch, tau, sched)
    worst = 0.0
    for name, p in head.params.items():
        flat = p.reshape(-1)
        g_flat = grads[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up, _ = batch_loss(head, decoder, batch, tau, sched)
            flat[j] = old - eps
            down, _ = batch_loss(head, decoder, batch, tau, sched)
            flat[j] = old
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(g_flat[j]), 1e-6)
            worst = max(worst, abs(fd - g_flat[j]) / denom)
    return worst


def gradcheck_fixture(seed: int) -> tuple[RegressorHead, DecoderParams, LossBatch]:
    """A small generic (head, decoder, batch) triple for gradient checking.

    Geometry is scene-scaled (cameras meters away from the decoded points, w
    near 1) so the central difference is taken where the loss curvature is
    mild; one camera faces away from the scene so the batch always exercises
    the pseudo-target branch alongside the valid branch.
    """
    from .geometry import quaternion_to_matrix

    g = np.random.default_rng(seed)
    head = RegressorHead(input_width=12, hidden_width=10, residual_blocks=2,
                         n_logits=3, seed=seed)
    head.params["head.l2.W"] = g.normal(0, 0.05, head.params["head.l2.W"].shape)
    head.params["head.l2.b"] = g.normal(0, 0.05, head.params["head.l2.b"].shape)
    decoder = DecoderParams(centers=g.normal(0, 0.8, (3, 3)))

    def look_at_origin(flip: bool) -> RigidPose:
        center = g.uniform(-1, 1, 3)
        center = center / np.linalg.norm(center) * g.uniform(4.0, 5.0)
        z = -center / np.linalg.norm(center)
        if flip:
            z = -z
        up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.99 else np.array([0.0, 1.0, 0.0])
        x = np.cross(up, z)
        x /= np.linalg.norm(x)
        y_axis = np.cross(z, x)
        jitter = quaternion_to_matrix(np.array([1.0, 0, 0, 0]) + 0.05 * g.standard_normal(4))
        R = jitter @ np.stack([x, y_axis, z])
        return RigidPose(R, -R @ center)

    poses = [look_at_origin(False), look_at_origin(False), look_at_origin(True)]
    inputs = g.normal(0, 1, (3, 12))
    raw = head.forward(inputs)
    y = decode_position(raw, decoder)
    intr = np.tile([554.0, 554.0, 320.0, 240.0], (3, 1))
    pixels = np.zeros((3, 2))
    for i, pose in enumerate(poses):
        q = pose.rotation @ y[i] + pose.translation
        if q[2] > 0.5:
            u = intr[i, 0] * q[0] / q[2] + intr[i, 2]
            v = intr[i, 1] * q[1] / q[2] + intr[i, 3]
            pixels[i] = [u + g.uniform(5, 20), v + g.uniform(5, 20)]
        else:
            pixels[i] = g.uniform([0, 0], [640, 480])
    batch = LossBatch(
        inputs=inputs,
        pixels=pixels,
        rotations=np.stack([p.rotation for p in poses]),
        translations=np.stack([p.translation for p in poses]),
        intrinsics=intr,
    )
    return head, decoder, batch


def run_gradcheck(
    n_seeds: int = 20, tau: float = 25.0, sched: LossSchedule | None = None,
    eps: float = 1e-5,
) -> float:
    """Max relative gradient error over seeded fixtures (the check suite)."""
    sched = sched or LossSchedule()
    worst = 0.0
    for seed in range(n_seeds):
        head, decoder, batch = gradcheck_fixture(seed)
        worst = max(worst, gradcheck(head, decoder, batch, tau, sched, eps=eps))
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    head: RegressorHead,
    decoder: DecoderParams,
    sched: LossSchedule,
    cfg: TrainConfig,
    iteration: int,
    opt_state: AdamWState | None = None,
    rng_state: dict | None = None,
    extra_meta: dict | None = None,
) -> None:
    arrays = {f"param:{k}": v for k, v in head.params.items()}
    arrays["decoder_centers"] = decoder.centers
    if opt_state is not None:
        for k, v in opt_state.m.items():
            arrays[f"adam_m:{k}"] = v
        for k, v in opt_state.v.items():
            arrays[f"adam_v:{k}"] = v
    meta = {
        "arch": {
            "input_width": head.input_width,
            "hidden_width": head.hidden_width,
            "residual_blocks": head.residual_blocks,
            "n_logits": head.n_logits,
            "coord_dim": head.coord_dim,
        },
        "decoder": {"s_min": decoder.s_min, "s_max": decoder.s_max},
        "schedule": vars(sched).copy(),
        "train_config": vars(cfg).copy(),
        "iteration": iteration,
        "adam_step": opt_state.step if opt_state is not None else 0,
        "rng_state": json.loads(json.dumps(rng_state)) if rng_state else None,
        "extra": extra_meta or {},
    }
    write_container(path, "checkpoint", CHECKPOINT_FORMAT_VERSION, arrays, meta)


def load_checkpoint(path):
    """Returns (head, decoder, schedule, train_config, iteration, opt_state,
    rng_state, extra_meta)."""
    arrays, meta, _, version = read_container(path, expect_kind="checkpoint")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    arch = meta["arch"]
    head = RegressorHead(
        input_width=arch["input_width"],
        hidden_width=arch["hidden_width"],
        residual_blocks=arch["residual_blocks"],
        n_logits=arch["n_logits"],
        coord_dim=arch["coord_dim"],
    )
    for name in list(head.params):
        head.params[name] = arrays[f"param:{name}"]
    decoder = DecoderParams(
        centers=arrays["decoder_centers"],
        s_min=meta["decoder"]["s_min"],
        s_max=meta["decoder"]["s_max"],
    )
    sched = LossSchedule(**meta["schedule"])
    cfg = TrainConfig(**meta["train_config"])
    opt_state = None
    if any(k.startswith("adam_m:") for k in arrays):
        opt_state = AdamWState(
            m={k: arrays[f"adam_m:{k}"] for k in head.params},
            v={k: arrays[f"adam_v:{k}"] for k in head.params},
            step=meta["adam_step"],
        )
    rng_state = meta.get("rng_state")
    if rng_state and "state" in rng_state:
        # JSON turns large ints into ints fine, but keys stay strings; the
        # PCG64 state dict is already JSON-compatible.
        pass
    return head, decoder, sched, cfg, meta["iteration"], opt_state, rng_state, meta["extra"]
