"""Small convolutional writer classifier trained with mixed real/extra targets.

Architecture: ``[conv3x3/2 -> batch norm -> ReLU] * n -> global average pool
-> linear(D) -> ReLU -> dropout -> linear(K)``. The post-ReLU D-vector is the
local descriptor. Gradients are computed by hand; tensors are float64 in
memory and float32 on disk.
"""
from __future__ import annotations

import logging
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from widr import kernels
from widr.dataset import ClassStats, SampleItem, class_stats, make_epoch_stream

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_MAGIC = b"WIDP"
CHECKPOINT_VERSION = 1


class LossMode(str, Enum):
    REAL_ONEHOT = "real_onehot"
    LSR = "lsr"
    WLSR_MIXED = "wlsr_mixed"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    conv_channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 64
    num_classes: int = 2
    dropout_rate: float = 0.5
    input_side: int = 64

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.feature_dim < 1 or self.input_side < 1 or not self.conv_channels:
            raise ValueError("feature_dim, input_side and conv_channels must be positive")


@dataclass(frozen=True)
class LossConfig:
    mode: LossMode = LossMode.WLSR_MIXED
    epsilon: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mode", LossMode(self.mode))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 0.1
    lr_after_decay: float = 0.01
    decay_epoch: int = 45
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.lr_after_decay <= self.lr_initial:
            raise ValueError("need 0 <= lr_after_decay <= lr_initial")
        if self.decay_epoch > self.epochs:
            raise ValueError("decay_epoch must not exceed epochs")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.decay_epoch else self.lr_after_decay


@dataclass
class NetworkParams:
    config: NetworkConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def copy(self) -> NetworkParams:
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.seed)


def tensor_shapes(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in declaration (checkpoint) order."""
    shapes = []
    c_in = 1
    for i, c_out in enumerate(config.conv_channels):
        shapes += [
            (f"conv{i}.weight", (c_out, c_in, 3, 3)),
            (f"bn{i}.gamma", (c_out,)),
            (f"bn{i}.beta", (c_out,)),
            (f"bn{i}.running_mean", (c_out,)),
            (f"bn{i}.running_var", (c_out,)),
        ]
        c_in = c_out
    shapes += [
        ("fc1.weight", (config.feature_dim, c_in)),
        ("fc1.bias", (config.feature_dim,)),
        ("fc2.weight", (config.num_classes, config.feature_dim)),
        ("fc2.bias", (config.num_classes,)),
    ]
    return shapes


BUFFERS = ("running_mean", "running_var")


def is_buffer(name: str) -> bool:
    """Running statistics are state, not trainable parameters."""
    return name.endswith(BUFFERS)


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def init_params(config: NetworkConfig, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases; batch norm starts as the identity."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(config):
        if name.endswith((".gamma", ".running_var")):
            tensors[name] = np.ones(shape)
        elif name.endswith((".bias", ".beta", ".running_mean")):
            tensors[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            a = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-a, a, size=shape)
    return NetworkParams(config, tensors, seed)


def zero_params(config: NetworkConfig) -> NetworkParams:
    return NetworkParams(config, {n: np.zeros(s) for n, s in tensor_shapes(config)})


def to_input(patches) -> np.ndarray:
    """uint8 patches (ink dark) -> float batch (N, 1, S, S) in [0, 1], ink = 1."""
    arr = np.asarray(patches)
    if arr.ndim == 2:
        arr = arr[None]
    return ((255.0 - arr.astype(np.float64)) / 255.0)[:, None]


def dropout_mask(shape: tuple[int, int], rate: float, seed) -> np.ndarray:
    """Inverted-dropout multiplier; ``seed`` may be an int or a tuple of ints."""
    if rate == 0.0:
        return np.ones(shape)
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(
    params: NetworkParams,
    x: np.ndarray,
    mask: np.ndarray | None = None,
    train_mode: bool = False,
):
    """Batched forward pass on (N, 1, S, S) input.

    Returns ``(logits, features, cache)``. In train mode batch norm uses
    batch statistics (the updated running statistics are left in
    ``cache["running"]``, params are not modified); otherwise it uses the
    stored running statistics. ``mask`` is a dropout multiplier or None.
    """
    cfg = params.config
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (cfg.input_side, cfg.input_side):
        raise ValueError(
            f"expected input (N, 1, {cfg.input_side}, {cfg.input_side}), got {x.shape}"
        )
    t = params.tensors
    a = x
    convs = []
    running = {}
    for i in range(len(cfg.conv_channels)):
        w = t[f"conv{i}.weight"]
        n, _, h, wd = a.shape
        cols = kernels.im2col(a)
        oh, ow = (h - 1) // 2 + 1, (wd - 1) // 2 + 1
        z = (cols @ w.reshape(w.shape[0], -1).T).reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        if train_mode:
            mu = z.mean(axis=(0, 2, 3))
            var = z.var(axis=(0, 2, 3))
            m = BN_MOMENTUM
            running[f"bn{i}.running_mean"] = (1 - m) * t[f"bn{i}.running_mean"] + m * mu
            running[f"bn{i}.running_var"] = (1 - m) * t[f"bn{i}.running_var"] + m * var
        else:
            mu, var = t[f"bn{i}.running_mean"], t[f"bn{i}.running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu[:, None, None]) * inv_std[:, None, None]
        y = xhat * t[f"bn{i}.gamma"][:, None, None] + t[f"bn{i}.beta"][:, None, None]
        convs.append((cols, a.shape, xhat, inv_std, y > 0))
        a = np.maximum(y, 0.0)
    pooled = a.mean(axis=(2, 3))
    h1 = pooled @ t["fc1.weight"].T + t["fc1.bias"]
    feat = np.maximum(h1, 0.0)
    dropped = feat if mask is None else feat * mask
    logits = dropped @ t["fc2.weight"].T + t["fc2.bias"]
    cache = {"convs": convs, "last_shape": a.shape, "pooled": pooled, "h1": h1,
             "feat": feat, "dropped": dropped, "mask": mask, "train_mode": train_mode,
             "running": running}
    return logits, feat, cache


def backward_batch(params: NetworkParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable tensor, given d loss / d logits."""
    t = params.tensors
    g = {}
    g["fc2.weight"] = dlogits.T @ cache["dropped"]
    g["fc2.bias"] = dlogits.sum(axis=0)
    d = dlogits @ t["fc2.weight"]
    if cache["mask"] is not None:
        d = d * cache["mask"]
    d = d * (cache["h1"] > 0)
    g["fc1.weight"] = d.T @ cache["pooled"]
    g["fc1.bias"] = d.sum(axis=0)
    d = d @ t["fc1.weight"]
    n, c, h, w = cache["last_shape"]
    da = np.broadcast_to((d / (h * w))[:, :, None, None], (n, c, h, w))
    for i in reversed(range(len(cache["convs"]))):
        cols, in_shape, xhat, inv_std, active = cache["convs"][i]
        dy = da * active
        gamma = t[f"bn{i}.gamma"]
        g[f"bn{i}.gamma"] = (dy * xhat).sum(axis=(0, 2, 3))
        g[f"bn{i}.beta"] = dy.sum(axis=(0, 2, 3))
        dxhat = dy * gamma[:, None, None]
        if cache["train_mode"]:
            dz = inv_std[:, None, None] * (
                dxhat
                - dxhat.mean(axis=(0, 2, 3))[:, None, None]
                - xhat * (dxhat * xhat).mean(axis=(0, 2, 3))[:, None, None]
            )
        else:
            dz = dxhat * inv_std[:, None, None]
        wt = t[f"conv{i}.weight"]
        dz = dz.transpose(0, 2, 3, 1).reshape(-1, wt.shape[0])
        g[f"conv{i}.weight"] = (dz.T @ cols).reshape(wt.shape)
        if i > 0:
            da = kernels.col2im(dz @ wt.reshape(wt.shape[0], -1), in_shape)
    return g


def forward(params: NetworkParams, patch, train_mode: bool = False, dropout_seed=0):
    """Single-patch forward pass returning ``(logits, feature)``.

    ``patch`` is either a uint8 image or an already scaled float array.
    """
    arr = np.asarray(patch)
    x = to_input(arr) if arr.dtype == np.uint8 else arr.astype(np.float64).reshape(1, 1, *arr.shape[-2:])
    mask = None
    if train_mode:
        mask = dropout_mask((1, params.config.feature_dim), params.config.dropout_rate, dropout_seed)
    logits, feat, _ = forward_batch(params, x, mask, train_mode)
    return logits[0], feat[0]


# ---- targets and losses ---------------------------------------------------

def target_distribution(
    mode: LossMode | str,
    y: int | None,
    num_classes: int,
    epsilon: float = 0.0,
    stats: ClassStats | None = None,
) -> np.ndarray:
    """Target q for one sample.

    ``real_onehot``: indicator of y. ``lsr``: eps/K everywhere plus 1-eps on y.
    ``wlsr`` / ``wlsr_mixed``: the labeled-set class frequencies counts/N.
    """
    mode = str(getattr(mode, "value", mode))
    if mode in ("real_onehot", "lsr"):
        if y is None:
            raise ValueError(f"{mode} target needs a class label")
        if not 0 <= y < num_classes:
            raise ValueError(f"class {y} outside [0, {num_classes})")
        if mode == "real_onehot":
            q = np.zeros(num_classes)
            q[y] = 1.0
            return q
        q = np.full(num_classes, epsilon / num_classes)
        q[y] = 1.0 - epsilon + epsilon / num_classes
        return q
    if mode in ("wlsr", "wlsr_mixed"):
        if stats is None or stats.n_total == 0:
            raise ValueError("wlsr target needs class statistics with N > 0")
        return stats.as_array(num_classes) / stats.n_total
    raise ValueError(f"unknown target mode {mode!r}")


def cross_entropy(p, q) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return float(-(q * np.log(np.maximum(p, PROB_FLOOR))).sum())


def loss_gradient_logits(p, q) -> np.ndarray:
    """d CE(softmax(z), q) / dz = p - q (q sums to one)."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return p - q


def batch_targets(
    items: Sequence[SampleItem],
    num_classes: int,
    loss: LossConfig,
    stats: ClassStats | None,
) -> np.ndarray:
    rows = []
    for item in items:
        if not item.z_flag:
            if item.class_index is None:
                raise ValueError(f"labeled item {item.patch_id} has no class")
            mode = LossMode.LSR if loss.mode is LossMode.LSR else LossMode.REAL_ONEHOT
            rows.append(target_distribution(mode, item.class_index, num_classes, loss.epsilon))
        else:
            if loss.mode is not LossMode.WLSR_MIXED:
                raise ValueError(f"extra item {item.patch_id} requires wlsr_mixed mode")
            rows.append(target_distribution("wlsr", None, num_classes, stats=stats))
    return np.array(rows).reshape(len(items), num_classes)


def batch_loss(
    items: Sequence[SampleItem],
    probs: np.ndarray,
    loss: LossConfig,
    stats: ClassStats | None,
) -> float:
    """Mean per-sample cross-entropy: one-hot for real samples, class prior for extras."""
    probs = np.asarray(probs, dtype=np.float64)
    q = batch_targets(items, probs.shape[1], loss, stats)
    per_item = -(q * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)
    return float(per_item.mean())


# ---- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetworkParams
    history: list[float]


def train(
    patches: np.ndarray,
    labels: Sequence[int | None],
    net_config: NetworkConfig,
    train_config: TrainConfig,
    loss_config: LossConfig,
) -> TrainResult:
    """SGD with momentum over a shuffled stream of real and extra patches.

    ``patches`` is a uint8 stack (n, S, S); ``labels[i]`` is the class of
    patch i or None for extra (unlabeled) patches. Extras are used only in
    ``wlsr_mixed`` mode.
    """
    labels = list(labels)
    if len(labels) != len(patches):
        raise ValueError("patches and labels differ in length")
    labeled = [(i, int(k)) for i, k in enumerate(labels) if k is not None]
    extra = [i for i, k in enumerate(labels) if k is None]
    if not labeled:
        raise ValueError("training needs at least one labeled patch")
    if loss_config.mode is not LossMode.WLSR_MIXED:
        extra = []
    K = net_config.num_classes
    stats = class_stats([k for _, k in labeled], K)

    x_all = to_input(patches)
    params = init_params(net_config, train_config.seed)
    velocity = {n: np.zeros_like(v) for n, v in params.tensors.items() if not is_buffer(n)}
    history = []
    for epoch in range(train_config.epochs):
        lr = train_config.lr_at(epoch)
        stream = make_epoch_stream(labeled, extra, seed=_subseed(train_config.seed, epoch))
        total = 0.0
        for b, start in enumerate(range(0, len(stream), train_config.batch_size)):
            items = stream[start : start + train_config.batch_size]
            idx = np.array([it.patch_id for it in items])
            mask = dropout_mask(
                (len(items), net_config.feature_dim),
                net_config.dropout_rate,
                (train_config.seed, epoch, b),
            )
            logits, _, cache = forward_batch(params, x_all[idx], mask, train_mode=True)
            probs = softmax(logits)
            q = batch_targets(items, K, loss_config, stats)
            per_item = -(q * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)
            loss = per_item.mean()
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            total += per_item.sum()
            grads = backward_batch(params, cache, (probs - q) / len(items))
            params.tensors.update(cache["running"])
            for name, grad in grads.items():
                v = velocity[name]
                v *= train_config.momentum
                v -= lr * grad
                params.tensors[name] += v
        history.append(total / len(stream))
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, history[-1])
    return TrainResult(params, history)


def _subseed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def extract_features(params: NetworkParams, patches, chunk: int = 256) -> np.ndarray:
    """Eval-mode local descriptors, one D-vector per patch."""
    patches = np.asarray(patches)
    if len(patches) == 0:
        return np.zeros((0, params.config.feature_dim))
    out = []
    for start in range(0, len(patches), chunk):
        _, feat, _ = forward_batch(params, to_input(patches[start : start + chunk]))
        out.append(feat)
    return np.concatenate(out)


# ---- checkpoint I/O -----------------------------------------------------------

def save_checkpoint(path: str | Path, params: NetworkParams) -> None:
    """``WIDP`` + version byte, then per tensor: u32 rank, u32 dims, f32 values."""
    chunks = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION])]
    for name, shape in tensor_shapes(params.config):
        arr = params.tensors[name]
        if arr.shape != shape:
            raise ValueError(f"{name}: shape {arr.shape} != {shape}")
        chunks.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path, dropout_rate: float = 0.5, input_side: int = 64) -> NetworkParams:
    """Read a ``WIDP`` file; layer widths are recovered from the tensor shapes."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    if data[4] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {data[4]}")
    pos = 5
    arrays = []
    while pos < len(data):
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 * (rank + 1)
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
        arrays.append(arr.reshape(dims))
        pos += 4 * count
    per_block = 5
    if len(arrays) < 4 + per_block or (len(arrays) - 4) % per_block:
        raise ValueError(f"{path}: unexpected tensor count {len(arrays)}")
    n_conv = (len(arrays) - 4) // per_block
    config = NetworkConfig(
        conv_channels=tuple(arrays[per_block * i].shape[0] for i in range(n_conv)),
        feature_dim=arrays[-4].shape[0],
        num_classes=arrays[-2].shape[0],
        dropout_rate=dropout_rate,
        input_side=input_side,
    )
    names = [n for n, _ in tensor_shapes(config)]
    tensors = dict(zip(names, arrays))
    for name, shape in tensor_shapes(config):
        if tensors[name].shape != shape:
            raise ValueError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return NetworkParams(config, tensors)
