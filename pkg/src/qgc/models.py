"""FNO, FFNO, and FCNN closure models built on the autodiff engine.

All models map 6 input channels (coarse ``u1 v1 q1 u2 v2 q2``) to the
2-channel subgrid forcing on the same grid:

* ``fno``: lift, then ``n_layers`` of
  ``act(irfft2(R * rfft2(h)|low block) + W_skip h)``, then projection.
  The spectral block mixes the first ``modes x modes`` corner of the rfft2
  layout; other frequencies travel through the skip map.
* ``ffno``: per-axis spectral branches
  ``z = irfft_x(Rx * rfft_x(h)) + irfft_y(Ry * rfft_y(h))`` followed by a
  residual feedforward ``h + W2 act(W1 z)``.  With ``share_weights`` all
  layers reference the same Rx/Ry tensors.
* ``fcnn``: 8 circular-padded conv layers (5x5, 5x5, then 3x3), ReLU
  between layers, linear output.

Spectral weights are stored as real trailing pairs so every trainable
parameter is a real float array.  Mode indexing is resolution independent:
one set of weights serves any grid with ``H >= 2 * modes``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import MismatchError

KINDS = ("fno", "ffno", "fcnn")
ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu}


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    width: int
    n_layers: int
    modes: int = 0
    share_weights: bool = False
    activation: str = "gelu"
    in_channels: int = 6
    out_channels: int = 2
    ff_multiplier: int = 1  # FFNO feedforward hidden expansion

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.width < 1 or self.n_layers < 1:
            raise ValueError("width and n_layers must be >= 1")
        if self.kind in ("fno", "ffno") and self.modes < 1:
            raise ValueError(f"{self.kind} needs modes >= 1")
        if self.kind == "fcnn" and self.n_layers < 3:
            raise ValueError("fcnn needs n_layers >= 3")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.ff_multiplier < 1:
            raise ValueError("ff_multiplier must be >= 1")


def baseline_config(name: str) -> ModelConfig:
    """Named configurations; the baselines all sit near 300k parameters."""
    table = {
        "fno": ModelConfig(kind="fno", width=24, n_layers=4, modes=8),
        "ffno": ModelConfig(kind="ffno", width=64, n_layers=4, modes=16,
                            share_weights=True),
        "ffno-star": ModelConfig(kind="ffno", width=128, n_layers=24, modes=32,
                                 share_weights=True, ff_multiplier=4),
        "fcnn": ModelConfig(kind="fcnn", width=64, n_layers=8, activation="relu"),
    }
    if name not in table:
        raise ValueError(f"unknown model name {name!r}; have {sorted(table)}")
    return table[name]


def fcnn_layout(c: ModelConfig) -> list[tuple[int, int, int]]:
    """(in_channels, out_channels, kernel) per conv layer."""
    w = c.width
    channels = [c.in_channels, 2 * w, w] + [w // 2] * (c.n_layers - 3) + [c.out_channels]
    kernels = [5, 5] + [3] * (c.n_layers - 2)
    return [(channels[i], channels[i + 1], kernels[i]) for i in range(c.n_layers)]


@dataclass
class Model:
    """A config plus named parameter tensors in fixed (serialization) order."""

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        if set(arrays) != set(self.params):
            raise MismatchError("parameter names do not match model config")
        for k, v in self.params.items():
            a = np.asarray(arrays[k], dtype=v.data.dtype)
            if a.shape != v.data.shape:
                raise MismatchError(f"parameter {k}: shape {a.shape} != {v.data.shape}")
            v.data = a.copy()


def build_model(c: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministically initialized model; same seed, same bytes.

    Spectral pair weights are Gaussian scaled by ``1/(width*modes)``;
    affine/conv weights are uniform in ``+-sqrt(1/fan_in)``; biases zero.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    m = Model(config=c)

    def param(name, arr):
        m.params[name] = Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)

    def affine(name, n_in, n_out):
        bound = np.sqrt(1.0 / n_in)
        param(f"{name}.w", rng.uniform(-bound, bound, size=(n_out, n_in)))
        param(f"{name}.b", np.zeros(n_out))

    def spectral(name, shape, fan):
        param(name, rng.standard_normal(shape) / fan)

    if c.kind == "fcnn":
        for i, (ci, co, k) in enumerate(fcnn_layout(c)):
            bound = np.sqrt(1.0 / (ci * k * k))
            param(f"layers.{i}.w", rng.uniform(-bound, bound, size=(co, ci, k, k)))
            param(f"layers.{i}.b", np.zeros(co))
        return m

    affine("lift", c.in_channels, c.width)
    fan = c.width * c.modes
    if c.kind == "fno":
        for i in range(c.n_layers):
            spectral(f"layers.{i}.spectral",
                     (c.modes, c.modes, c.width, c.width, 2), fan)
            affine(f"layers.{i}.skip", c.width, c.width)
    else:
        if c.share_weights:
            spectral("spectral.x", (c.modes, c.width, c.width, 2), fan)
            spectral("spectral.y", (c.modes, c.width, c.width, 2), fan)
        hidden = c.ff_multiplier * c.width
        for i in range(c.n_layers):
            if not c.share_weights:
                spectral(f"layers.{i}.spectral.x", (c.modes, c.width, c.width, 2), fan)
                spectral(f"layers.{i}.spectral.y", (c.modes, c.width, c.width, 2), fan)
            affine(f"layers.{i}.ff1", c.width, hidden)
            affine(f"layers.{i}.ff2", hidden, c.width)
    affine("proj", c.width, c.out_channels)
    return m


def count_params(m: Model) -> int:
    return sum(int(p.data.size) for p in m.params.values())


def _check_input(m: Model, x: np.ndarray):
    c = m.config
    if x.ndim != 4 or x.shape[1] != c.in_channels:
        raise MismatchError(
            f"expected (batch, {c.in_channels}, H, W) input, got {x.shape}"
        )
    if c.kind in ("fno", "ffno") and c.modes > min(x.shape[2], x.shape[3]) // 2:
        raise MismatchError(
            f"modes {c.modes} exceed H/2 for input H={min(x.shape[2:])}"
        )


def forward(m: Model, x) -> Tensor:
    """Run the model; ``x`` is a Tensor or (B, 6, H, W) ndarray."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    _check_input(m, x.data)
    c = m.config
    act = ACTIVATIONS[c.activation]
    p = m.params

    if c.kind == "fcnn":
        h = x
        for i in range(c.n_layers):
            h = ad.conv2d(h, p[f"layers.{i}.w"], p[f"layers.{i}.b"])
            if i < c.n_layers - 1:
                h = act(h)
        return h

    h = ad.affine_channels(x, p["lift.w"], p["lift.b"])
    ny, nx = x.data.shape[2], x.data.shape[3]
    if c.kind == "fno":
        for i in range(c.n_layers):
            xf = ad.rfft2(h)
            sb = ad.irfft2(
                ad.mode_mul_block2d(xf, p[f"layers.{i}.spectral"], c.modes),
                s=(ny, nx),
            )
            skip = ad.affine_channels(h, p[f"layers.{i}.skip.w"],
                                      p[f"layers.{i}.skip.b"])
            h = act(ad.add(sb, skip))
    else:
        for i in range(c.n_layers):
            kx = "spectral.x" if c.share_weights else f"layers.{i}.spectral.x"
            ky = "spectral.y" if c.share_weights else f"layers.{i}.spectral.y"
            zx = ad.irfft_axis(
                ad.mode_mul_axis(ad.rfft_axis(h, axis=-1), p[kx], c.modes, axis=-1),
                n=nx, axis=-1,
            )
            zy = ad.irfft_axis(
                ad.mode_mul_axis(ad.rfft_axis(h, axis=-2), p[ky], c.modes, axis=-2),
                n=ny, axis=-2,
            )
            z = ad.add(zx, zy)
            f1 = act(ad.affine_channels(z, p[f"layers.{i}.ff1.w"],
                                        p[f"layers.{i}.ff1.b"]))
            f2 = ad.affine_channels(f1, p[f"layers.{i}.ff2.w"],
                                    p[f"layers.{i}.ff2.b"])
            h = ad.add(h, f2)
    return ad.affine_channels(h, p["proj.w"], p["proj.b"])


def predict(m: Model, x: np.ndarray) -> np.ndarray:
    """Inference without tape recording."""
    with ad.no_grad():
        return forward(m, x).data


def spectral_branch(m: Model, x: np.ndarray, layer: int = 0) -> np.ndarray:
    """Pre-activation output of one layer's spectral branch (diagnostics)."""
    c = m.config
    with ad.no_grad():
        h = Tensor(np.asarray(x))
        ny, nx = x.shape[2], x.shape[3]
        if c.kind == "fno":
            xf = ad.rfft2(h)
            y = ad.irfft2(
                ad.mode_mul_block2d(xf, m.params[f"layers.{layer}.spectral"], c.modes),
                s=(ny, nx),
            )
        elif c.kind == "ffno":
            kx = "spectral.x" if c.share_weights else f"layers.{layer}.spectral.x"
            ky = "spectral.y" if c.share_weights else f"layers.{layer}.spectral.y"
            zx = ad.irfft_axis(
                ad.mode_mul_axis(ad.rfft_axis(h, -1), m.params[kx], c.modes, -1),
                n=nx, axis=-1)
            zy = ad.irfft_axis(
                ad.mode_mul_axis(ad.rfft_axis(h, -2), m.params[ky], c.modes, -2),
                n=ny, axis=-2)
            y = ad.add(zx, zy)
        else:
            raise ValueError("spectral_branch applies to fno/ffno only")
    return y.data


def grad_check(m: Model, sample: np.ndarray, eps: float = 3e-5,
               seed: int = 0) -> float:
    """Max relative error of directional finite differences, per parameter.

    Uses a fourth-order central stencil so the truncation error of smooth
    activations stays below float64 roundoff.  Meant to run on a float64
    model (build with ``dtype=np.float64``).
    """
    rng = np.random.Generator(np.random.PCG64(seed))

    def loss_value() -> float:
        with ad.no_grad():
            out = forward(m, sample)
            return ad.mean(ad.pointwise_mul(out, out)).item()

    m.zero_grad()
    out = forward(m, Tensor(np.asarray(sample)))
    loss = ad.mean(ad.pointwise_mul(out, out))
    loss.backward()

    worst = 0.0
    for name, p in m.params.items():
        d = rng.standard_normal(p.data.shape)
        d /= np.linalg.norm(d.ravel()) or 1.0
        analytic = float(np.sum(p.grad * d))
        orig = p.data.copy()
        vals = []
        for h in (2 * eps, eps, -eps, -2 * eps):
            p.data = orig + h * d
            vals.append(loss_value())
        p.data = orig
        numeric = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
        # error relative to the gradient scale: a cancelling directional
        # value must not inflate pure FD roundoff into a failure
        denom = max(abs(analytic), abs(numeric),
                    float(np.linalg.norm(p.grad.ravel())), 1e-12)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
