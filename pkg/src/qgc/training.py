"""Loss, Adam optimizer, training loop, and QGCK checkpoints.

Standardization statistics come from the training split only and ride along
in the checkpoint so inference reproduces the exact physical-unit mapping.

QGCK layout (little-endian): magic ``QGCK``; u32 version = 1; the model
config as fixed-order integers (kind tag, width, n_layers, modes,
share_weights, activation tag, pad, in/out channels, ff multiplier); the
normalization stats as 16 f64 values (mean, std per input then output
channel); u32 parameter count; per parameter a u32 name length, the UTF-8
name, u32 ndim, u32 dims, and the f32 blob; trailing u32 CRC32 over
everything between the version field and the checksum.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .closures import NormStats
from .errors import (
    BadMagicError,
    BlowUpError,
    ChecksumError,
    MismatchError,
    TruncatedError,
    VersionError,
)
from .models import Model, ModelConfig, build_model, forward
from .subgrid import Dataset, atomic_write, compute_norm_stats

MAGIC = b"QGCK"
VERSION = 1
_CFG = struct.Struct("<IIIIBBHIII")
_KIND_TAGS = {"fno": 0, "ffno": 1, "fcnn": 2}
_ACT_TAGS = {"gelu": 0, "relu": 1}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 0  # 0 disables early stopping

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class OptimState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise MismatchError(
            f"pred shape {pred.data.shape} != target {target.data.shape}"
        )
    err = ad.sub(pred, target)
    return ad.mean(ad.pointwise_mul(err, err))


def adam_step(model: Model, st: OptimState, cfg: TrainConfig):
    """Bias-corrected Adam update in place; missing grads count as zero."""
    st.step += 1
    bc1 = 1.0 - cfg.beta1**st.step
    bc2 = 1.0 - cfg.beta2**st.step
    for name, p in model.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if name not in st.m:
            st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        st.m[name] = cfg.beta1 * st.m[name] + (1 - cfg.beta1) * g
        st.v[name] = cfg.beta2 * st.v[name] + (1 - cfg.beta2) * g * g
        mhat = st.m[name] / bc1
        vhat = st.v[name] / bc2
        p.data = p.data - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def _eval_mse(model: Model, x: np.ndarray, y: np.ndarray, batch: int) -> float:
    total, n = 0.0, 0
    with ad.no_grad():
        for i in range(0, len(x), batch):
            out = forward(model, x[i:i + batch]).data
            total += float(((out - y[i:i + batch]) ** 2).sum())
            n += out.size
    return total / n


def train(
    model: Model,
    data: Dataset,
    cfg: TrainConfig,
    checkpoint_path: Optional[str] = None,
    log=None,
) -> tuple[Model, list[dict]]:
    """Standardize, shuffle, optimize; restore the best-validation weights.

    Returns the trained model and a per-epoch history of train/val loss.
    Deterministic for fixed (model init, data, config): batch order, splits,
    and reductions are all seeded or fixed-order.
    """
    if data.inputs.shape[1] != model.config.in_channels:
        raise MismatchError("dataset channel layout does not match model")
    n = len(data)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    if n_val >= n:
        raise ValueError("dataset too small for the validation split")
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    stats = compute_norm_stats(data.inputs[train_idx], data.targets[train_idx])
    xs = stats.standardize_inputs(data.inputs.astype(np.float64))
    ys = stats.standardize_outputs(data.targets.astype(np.float64))
    xs = xs.astype(np.float32)
    ys = ys.astype(np.float32)
    x_tr, y_tr = xs[train_idx], ys[train_idx]
    x_va, y_va = xs[val_idx], ys[val_idx]

    history: list[dict] = []
    best_val = np.inf
    best_params = {k: v.data.copy() for k, v in model.params.items()}
    stale = 0
    opt = OptimState()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_tr))
        losses = []
        for bi, start in enumerate(range(0, len(x_tr), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            out = forward(model, x_tr[idx])
            loss = mse_loss(out, Tensor(y_tr[idx]))
            lv = loss.item()
            if not np.isfinite(lv):
                raise BlowUpError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            loss.backward()
            adam_step(model, opt, cfg)
            losses.append(lv)
        val = _eval_mse(model, x_va, y_va, cfg.batch_size)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_loss": val})
        if log is not None:
            log(history[-1])
        if val < best_val:
            best_val = val
            best_params = {k: v.data.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    model.load_arrays(best_params)
    if checkpoint_path is not None:
        save_checkpoint(model, stats, checkpoint_path)
    return model, history


def _config_bytes(c: ModelConfig) -> bytes:
    return _CFG.pack(_KIND_TAGS[c.kind], c.width, c.n_layers, c.modes,
                     int(c.share_weights), _ACT_TAGS[c.activation], 0,
                     c.in_channels, c.out_channels, c.ff_multiplier)


def _config_from_bytes(b: bytes) -> ModelConfig:
    kind, width, n_layers, modes, share, act, _, cin, cout, ffm = _CFG.unpack(b)
    kinds = {v: k for k, v in _KIND_TAGS.items()}
    acts = {v: k for k, v in _ACT_TAGS.items()}
    if kind not in kinds or act not in acts:
        raise MismatchError("unknown kind or activation tag in checkpoint")
    return ModelConfig(kind=kinds[kind], width=width, n_layers=n_layers,
                       modes=modes, share_weights=bool(share),
                       activation=acts[act], in_channels=cin,
                       out_channels=cout, ff_multiplier=ffm)


def checkpoint_bytes(m: Model, stats: NormStats) -> bytes:
    body = bytearray()
    body += _config_bytes(m.config)
    vals = []
    for mean, std in ((stats.in_mean, stats.in_std), (stats.out_mean, stats.out_std)):
        for i in range(len(mean)):
            vals += [mean[i], std[i]]
    body += struct.pack("<16d", *vals)
    body += struct.pack("<I", len(m.params))
    for name, p in m.params.items():
        nb = name.encode()
        body += struct.pack("<I", len(nb)) + nb
        body += struct.pack("<I", p.data.ndim)
        body += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        body += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    crc = zlib.crc32(bytes(body))
    return MAGIC + struct.pack("<I", VERSION) + bytes(body) + struct.pack("<I", crc)


def save_checkpoint(m: Model, stats: NormStats, path: str):
    atomic_write(path, checkpoint_bytes(m, stats))


def load_checkpoint(path: str) -> tuple[Model, NormStats]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedError(f"{path}: shorter than header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if len(raw) < 12:
        raise TruncatedError(f"{path}: missing checksum")
    body, (crc,) = raw[8:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch")

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise TruncatedError(f"{path}: body ends inside a record")
        chunk = body[off:off + n]
        off += n
        return chunk

    config = _config_from_bytes(take(_CFG.size))
    vals = struct.unpack("<16d", take(16 * 8))
    stats = NormStats(
        in_mean=np.array(vals[0:12:2]), in_std=np.array(vals[1:12:2]),
        out_mean=np.array(vals[12:16:2]), out_std=np.array(vals[13:16:2]),
    )
    (n_params,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        blob = take(size * 4)
        arrays[name] = np.frombuffer(blob, dtype="<f4").reshape(shape)
    model = build_model(config, seed=0)
    model.load_arrays(arrays)
    return model, stats


