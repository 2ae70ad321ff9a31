"""Appearance descriptor: a small network mapping grayscale patches to
L2-normalized embeddings, trained with a margin (hinge) triplet loss.

Two architectures are supported. FC_ONLY flattens the patch straight into
fully connected layers; CONV prepends two strided valid convolutions
(5x5 then 3x3) before the embedding layer. All forward/backward math is
written out explicitly in numpy so the gradient can be checked against
finite differences. Distances between embeddings are squared Euclidean,
which on unit vectors equals 2 - 2*cos_similarity.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import atomic_write_bytes
from .triplets import Triplet

FC_ONLY = "FC_ONLY"
CONV = "CONV"

_NORM_EPS = 1e-12

CHECKPOINT_MAGIC = b"STEM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    architecture: str = CONV
    patch_resolution: int = 24
    conv1_channels: int = 8
    conv2_channels: int = 16
    hidden_units: int = 64
    embedding_dim: int = 32
    margin: float = 1.0

    def __post_init__(self):
        if self.architecture not in (FC_ONLY, CONV):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.architecture == CONV:
            h1 = _conv_out(self.patch_resolution, 5, 2)
            h2 = _conv_out(h1, 3, 2) if h1 >= 3 else 0
            if h1 < 1 or h2 < 1:
                raise ValueError(
                    f"patch_resolution {self.patch_resolution} too small: both strided "
                    "convolutions must produce at least a 1x1 map (needs P >= 9)"
                )

    def conv_shapes(self) -> tuple[int, int]:
        h1 = _conv_out(self.patch_resolution, 5, 2)
        return h1, _conv_out(h1, 3, 2)


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def param_layout(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs defining the flat weight vector."""
    p = cfg.patch_resolution
    e = cfg.embedding_dim
    if cfg.architecture == FC_ONLY:
        h = cfg.hidden_units
        return [
            ("fc1_w", (h, p * p)),
            ("fc1_b", (h,)),
            ("fc2_w", (e, h)),
            ("fc2_b", (e,)),
        ]
    h1, h2 = cfg.conv_shapes()
    c1, c2 = cfg.conv1_channels, cfg.conv2_channels
    return [
        ("conv1_w", (5 * 5 * 1, c1)),
        ("conv1_b", (c1,)),
        ("conv2_w", (3 * 3 * c1, c2)),
        ("conv2_b", (c2,)),
        ("fc_w", (e, h2 * h2 * c2)),
        ("fc_b", (e,)),
    ]


def num_params(cfg: NetConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(cfg))


def split_weights(cfg: NetConfig, weights: np.ndarray) -> dict[str, np.ndarray]:
    """Views into the flat vector, one per layer tensor."""
    expected = num_params(cfg)
    if weights.shape != (expected,):
        raise ValueError(f"weight vector has {weights.shape}, config needs ({expected},)")
    out = {}
    offset = 0
    for name, shape in param_layout(cfg):
        size = int(np.prod(shape))
        out[name] = weights[offset : offset + size].reshape(shape)
        offset += size
    return out


def init_weights(cfg: NetConfig, seed: int = 0) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in param_layout(cfg):
        if name.endswith("_b"):
            chunks.append(np.zeros(shape).ravel())
            continue
        if name.startswith("conv"):
            # receptive-field fan counts: k^2 * c_in and k^2 * c_out
            k2 = 25 if name == "conv1_w" else 9
            fan_in, fan_out = shape[0], k2 * shape[1]
        else:
            fan_out, fan_in = shape[0], shape[1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=int(np.prod(shape))))
    return np.concatenate(chunks)


def _im2col(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N,H,W,C) -> (N,Ho,Wo,k*k*C) patch matrix for valid strided convolution."""
    n, h, w, c = x.shape
    ho = _conv_out(h, k, s)
    wo = _conv_out(w, k, s)
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di, dj, :] = x[:, di : di + s * ho : s, dj : dj + s * wo : s, :]
    return cols.reshape(n, ho, wo, k * k * c)


def _col2im(dcols: np.ndarray, x_shape: tuple, k: int, s: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add column gradients back onto the input."""
    n, h, w, c = x_shape
    ho = _conv_out(h, k, s)
    wo = _conv_out(w, k, s)
    dc = dcols.reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for di in range(k):
        for dj in range(k):
            dx[:, di : di + s * ho : s, dj : dj + s * wo : s, :] += dc[:, :, :, di, dj, :]
    return dx


def _normalize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(v, axis=1)
    eff = np.where(norms < _NORM_EPS, norms + _NORM_EPS, norms)
    return v / eff[:, None], norms, eff


def forward_batch(cfg: NetConfig, weights: np.ndarray, patches: np.ndarray):
    """Embed a (N, P, P) patch batch; returns (embeddings, cache for backward)."""
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights contain non-finite values")
    n = patches.shape[0]
    p = cfg.patch_resolution
    if patches.shape[1:] != (p, p):
        raise ValueError(f"patches are {patches.shape[1:]}, config expects ({p}, {p})")
    w = split_weights(cfg, weights)
    cache: dict = {}
    if cfg.architecture == FC_ONLY:
        flat = patches.reshape(n, p * p)
        z1 = flat @ w["fc1_w"].T + w["fc1_b"]
        a1 = np.maximum(z1, 0.0)
        v = a1 @ w["fc2_w"].T + w["fc2_b"]
        cache.update(flat=flat, z1=z1, a1=a1)
    else:
        x = patches.reshape(n, p, p, 1)
        cols1 = _im2col(x, 5, 2)
        z1 = cols1 @ w["conv1_w"] + w["conv1_b"]
        a1 = np.maximum(z1, 0.0)
        cols2 = _im2col(a1, 3, 2)
        z2 = cols2 @ w["conv2_w"] + w["conv2_b"]
        a2 = np.maximum(z2, 0.0)
        flat = a2.reshape(n, -1)
        v = flat @ w["fc_w"].T + w["fc_b"]
        cache.update(cols1=cols1, z1=z1, a1=a1, cols2=cols2, z2=z2, flat=flat)
    for name, z in (("hidden", cache.get("z1")), ("embedding", v)):
        if z is not None and not np.all(np.isfinite(z)):
            raise ValueError(f"non-finite activation in {name} layer")
    e, norms, eff = _normalize_rows(v)
    cache.update(v=v, norms=norms, eff=eff)
    return e, cache


def forward(cfg: NetConfig, weights: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Embed a single (P, P) patch to a unit vector."""
    e, _ = forward_batch(cfg, weights, patch[None])
    return e[0]


def _backward_batch(cfg: NetConfig, weights: np.ndarray, cache: dict,
                    de: np.ndarray) -> np.ndarray:
    """Gradient of sum(de * embeddings) w.r.t. the flat weight vector."""
    w = split_weights(cfg, weights)
    v, norms, eff = cache["v"], cache["norms"], cache["eff"]
    # e = v / eff; d e_i/d v_j = delta_ij/eff - v_i v_j / (norm * eff^2)
    safe = np.where(norms > 0, norms, 1.0)
    dv = de / eff[:, None] - v * (np.sum(de * v, axis=1) / (safe * eff**2))[:, None]
    grads = {}
    if cfg.architecture == FC_ONLY:
        a1, z1, flat = cache["a1"], cache["z1"], cache["flat"]
        grads["fc2_w"] = dv.T @ a1
        grads["fc2_b"] = dv.sum(axis=0)
        da1 = dv @ w["fc2_w"]
        dz1 = da1 * (z1 > 0)
        grads["fc1_w"] = dz1.T @ flat
        grads["fc1_b"] = dz1.sum(axis=0)
    else:
        flat, cols2, z2 = cache["flat"], cache["cols2"], cache["z2"]
        cols1, z1, a1 = cache["cols1"], cache["z1"], cache["a1"]
        grads["fc_w"] = dv.T @ flat
        grads["fc_b"] = dv.sum(axis=0)
        da2 = (dv @ w["fc_w"]).reshape(z2.shape)
        dz2 = da2 * (z2 > 0)
        grads["conv2_w"] = np.tensordot(cols2, dz2, axes=([0, 1, 2], [0, 1, 2]))
        grads["conv2_b"] = dz2.sum(axis=(0, 1, 2))
        dcols2 = dz2 @ w["conv2_w"].T
        da1 = _col2im(dcols2, a1.shape, 3, 2)
        dz1 = da1 * (z1 > 0)
        grads["conv1_w"] = np.tensordot(cols1, dz1, axes=([0, 1, 2], [0, 1, 2]))
        grads["conv1_b"] = dz1.sum(axis=(0, 1, 2))
    return np.concatenate([grads[name].ravel() for name, _ in param_layout(cfg)])


def triplet_loss(e_a: np.ndarray, e_p: np.ndarray, e_n: np.ndarray, margin: float) -> float:
    """Hinge loss max(d_ap - d_an + margin, 0) with squared Euclidean distances."""
    d_ap = float(np.sum((e_a - e_p) ** 2))
    d_an = float(np.sum((e_a - e_n) ** 2))
    return max(d_ap - d_an + margin, 0.0)


@dataclass
class TripletBatch:
    """Stacked anchor/positive/negative patches ready for a training step."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    @classmethod
    def from_triplets(cls, triplets: list[Triplet]) -> "TripletBatch":
        return cls(
            np.stack([t.anchor for t in triplets]),
            np.stack([t.positive for t in triplets]),
            np.stack([t.negative for t in triplets]),
        )

    def __len__(self) -> int:
        return self.anchors.shape[0]


def backward(cfg: NetConfig, weights: np.ndarray, batch: TripletBatch):
    """Mean triplet loss over the batch and its exact gradient.

    Gradients flow through all three shared-weight branches; triplets already
    past the margin (clamped to zero loss) contribute nothing.
    """
    if len(batch) == 0:
        raise ValueError("triplet batch is empty")
    e_a, cache_a = forward_batch(cfg, weights, batch.anchors)
    e_p, cache_p = forward_batch(cfg, weights, batch.positives)
    e_n, cache_n = forward_batch(cfg, weights, batch.negatives)
    d_ap = np.sum((e_a - e_p) ** 2, axis=1)
    d_an = np.sum((e_a - e_n) ** 2, axis=1)
    hinge = d_ap - d_an + cfg.margin
    active = hinge > 0
    n = len(batch)
    loss = float(np.sum(np.maximum(hinge, 0.0)) / n)
    scale = active[:, None] * (2.0 / n)
    de_a = scale * (e_n - e_p)
    de_p = scale * (e_p - e_a)
    de_n = scale * (e_a - e_n)
    grad = (
        _backward_batch(cfg, weights, cache_a, de_a)
        + _backward_batch(cfg, weights, cache_p, de_p)
        + _backward_batch(cfg, weights, cache_n, de_n)
    )
    return loss, grad


def batch_loss(cfg: NetConfig, weights: np.ndarray, batch: TripletBatch) -> float:
    """Mean triplet loss only (used by the finite-difference oracle)."""
    e_a, _ = forward_batch(cfg, weights, batch.anchors)
    e_p, _ = forward_batch(cfg, weights, batch.positives)
    e_n, _ = forward_batch(cfg, weights, batch.negatives)
    d_ap = np.sum((e_a - e_p) ** 2, axis=1)
    d_an = np.sum((e_a - e_n) ** 2, axis=1)
    return float(np.mean(np.maximum(d_ap - d_an + cfg.margin, 0.0)))


SGD = "SGD"
ADAM = "ADAM"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = ADAM
    seed: int = 0
    log_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in (SGD, ADAM):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite-loss weights."""

    def __init__(self, message: str, weights: np.ndarray, log: list):
        super().__init__(message)
        self.weights = weights
        self.log = log


class _Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, weights: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        weights -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(cfg: NetConfig, train_cfg: TrainConfig, dataset: list[Triplet],
          initial_weights: np.ndarray | None = None):
    """Run seeded shuffled mini-batch training; returns (weights, log rows).

    Log rows are (epoch, step, mean_loss). Raises TrainingDiverged with the
    last finite-loss weights if the loss leaves the reals.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    weights = (
        initial_weights.astype(np.float64).copy()
        if initial_weights is not None
        else init_weights(cfg, train_cfg.seed)
    )
    anchors = np.stack([t.anchor for t in dataset])
    positives = np.stack([t.positive for t in dataset])
    negatives = np.stack([t.negative for t in dataset])
    n = len(dataset)
    bs = max(1, train_cfg.batch_size)
    adam = _Adam(weights.size, train_cfg.learning_rate) if train_cfg.optimizer == ADAM else None
    log: list[tuple[int, int, float]] = []
    last_good = weights.copy()  # most recent weights that produced a finite loss
    step_index = 0
    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            batch = TripletBatch(anchors[idx], positives[idx], negatives[idx])
            where = f"epoch {epoch} step {step_index}"
            try:
                loss, grad = backward(cfg, weights, batch)
            except ValueError as e:
                raise TrainingDiverged(f"training diverged at {where}: {e}", last_good, log)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"training diverged at {where}", last_good, log)
            last_good = weights.copy()
            if adam is not None:
                adam.step(weights, grad)
            else:
                weights -= train_cfg.learning_rate * grad
            if not np.all(np.isfinite(weights)):
                raise TrainingDiverged(f"weights left the reals at {where}", last_good, log)
            log.append((epoch, step_index, loss))
            step_index += 1
    if train_cfg.log_path:
        write_training_log(train_cfg.log_path, log)
    return weights, log


def write_training_log(path: str, log: list[tuple[int, int, float]]) -> None:
    lines = ["epoch,step,mean_loss\n"]
    lines += [f"{epoch},{step},{loss!r}\n" for epoch, step, loss in log]
    from .core import atomic_write_text

    atomic_write_text(path, "".join(lines))


def _config_json(cfg: NetConfig) -> bytes:
    doc = {
        "architecture": cfg.architecture,
        "patch_resolution": cfg.patch_resolution,
        "conv1_channels": cfg.conv1_channels,
        "conv2_channels": cfg.conv2_channels,
        "hidden_units": cfg.hidden_units,
        "embedding_dim": cfg.embedding_dim,
        "margin": cfg.margin,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_weights(path: str, cfg: NetConfig, weights: np.ndarray) -> None:
    """Checkpoint: magic, version, config JSON, little-endian float64 weights."""
    expected = num_params(cfg)
    if weights.shape != (expected,):
        raise ValueError(f"weight vector has {weights.shape}, config needs ({expected},)")
    header = _config_json(cfg)
    payload = weights.astype("<f8").tobytes()
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<I", len(header))
        + header
        + struct.pack("<Q", weights.size)
        + payload
    )
    atomic_write_bytes(path, blob)


def load_weights(path: str, expect_architecture: str | None = None):
    """Load (NetConfig, weights); validates magic, version, and sizes."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    if len(blob) < 12:
        raise ValueError(f"{path}: checkpoint truncated")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if len(blob) < header_end + 8:
        raise ValueError(f"{path}: checkpoint truncated")
    doc = json.loads(blob[12:header_end].decode("utf-8"))
    cfg = NetConfig(**doc)
    (count,) = struct.unpack_from("<Q", blob, header_end)
    data = blob[header_end + 8 :]
    if len(data) != count * 8:
        raise ValueError(f"{path}: checkpoint truncated ({len(data)} != {count * 8} bytes)")
    weights = np.frombuffer(data, dtype="<f8").astype(np.float64)
    if count != num_params(cfg):
        raise ValueError(f"{path}: weight count {count} does not match stored config")
    if expect_architecture is not None and cfg.architecture != expect_architecture:
        raise ValueError(
            f"{path}: checkpoint is {cfg.architecture}, requested {expect_architecture}"
        )
    return cfg, weights
