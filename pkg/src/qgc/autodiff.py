"""Minimal dense-tensor reverse-mode autodiff engine.

Tensors wrap numpy arrays (real or complex) and record a tape of backward
closures; ``backward()`` on a scalar loss walks the tape once in reverse
topological order.  Gradients of complex-valued tensors are stored packed,
``g = dL/dRe + 1j * dL/dIm``, which makes every rule below an ordinary
real-linear adjoint:

* ``rfft``-family adjoints are the correspondingly normalized inverse
  transforms, with the one-sided interior columns weighted to account for
  the conjugate-symmetric half that is not stored;
* complex multiplications backpropagate through conjugated weights.

Training runs in single precision; gradient verification uses float64
inputs, under which every primitive here passes central finite-difference
checks to better than 1e-8 relative error.
"""

from __future__ import annotations

import threading
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import erf

__all__ = [
    "Tensor", "add", "sub", "pointwise_mul", "scale", "affine_channels",
    "conv2d", "relu", "gelu", "mean", "sum_all", "rfft_axis", "irfft_axis",
    "rfft2", "irfft2", "mode_mul_axis", "mode_mul_block2d", "as_complex",
    "no_grad",
]

_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager disabling tape recording (inference mode).

    The flag is thread-local so concurrent inference never switches off
    recording in a thread that is training.
    """

    def __enter__(self):
        self._saved = _grad_enabled()
        _grad_state.enabled = False

    def __exit__(self, *exc):
        _grad_state.enabled = self._saved
        return False

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A tape node: value, accumulated gradient, and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward",
                 "_done", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False,
                 prev: Sequence["Tensor"] = (), backward=None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._prev = tuple(t for t in prev if t.requires_grad)
        self._backward = backward
        self._done = False
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None
        self._done = False
        self._grad_owned = False

    def _accumulate(self, g: np.ndarray):
        # First accumulation stores a reference (safe: reverse-topological
        # order means an upstream grad is final before it is passed down);
        # a second accumulation allocates a fresh sum once.
        if self.grad is None:
            if g.dtype == self.data.dtype:
                self.grad = g
                self._grad_owned = False
            else:
                self.grad = g.astype(self.data.dtype)
                self._grad_owned = True
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            if self.grad.dtype != self.data.dtype:
                self.grad = self.grad.astype(self.data.dtype)
            self._grad_owned = True

    def backward(self):
        """Fill gradients of every reachable requires_grad tensor."""
        if self.data.ndim != 0:
            raise ValueError("backward() starts from a scalar loss")
        if self._done:
            raise RuntimeError("backward() already ran on this tape; rebuild "
                               "the graph or zero_grad() the loss first")
        order: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._done = True

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _node(data, inputs: Sequence[Tensor], backward) -> Tensor:
    req = _grad_enabled() and any(t.requires_grad for t in inputs)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, prev=inputs, backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))
    return _node(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))
    return _node(out_data, (a, b), backward)


def pointwise_mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))
    return _node(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accumulate(c * g)
    return _node(a.data * c, (a,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)
    return _node(np.where(mask, x.data, 0), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = (x.data * cdf).astype(x.data.dtype)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))
    return _node(out_data, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.data.shape))
    return _node(x.data.mean(), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.data.shape))
    return _node(x.data.sum(), (x,), backward)


def affine_channels(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """1x1 channel mixing: x (B,C,H,W) with w (Cout,Cin), bias (Cout,)."""
    xt = np.moveaxis(x.data, 1, -1)  # (B,H,W,C)
    yt = xt @ w.data.T
    out_data = np.moveaxis(yt, -1, 1)
    if b is not None:
        out_data = out_data + b.data[:, None, None]

    def backward(g):
        gt = np.moveaxis(g, 1, -1)
        if x.requires_grad:
            x._accumulate(np.moveaxis(gt @ w.data, -1, 1))
        if w.requires_grad:
            gw = gt.reshape(-1, gt.shape[-1]).T @ xt.reshape(-1, xt.shape[-1])
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
    inputs = (x, w) if b is None else (x, w, b)
    return _node(out_data, inputs, backward)


def _conv2d_raw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Circular same-padding cross-correlation, x (B,C,H,W), w (O,C,k,k)."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="wrap")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    b, c, h, wd = x.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * wd, c * k * k)
    y = cols @ w.reshape(w.shape[0], -1).T
    return y.reshape(b, h, wd, w.shape[0]).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Odd-kernel, same-size, circular-boundary convolution for the FCNN."""
    k = w.data.shape[-1]
    if k % 2 == 0 or w.data.shape[-2] != k:
        raise ValueError("conv2d needs odd square kernels")
    out_data, cols = _conv2d_raw(x.data, w.data)
    if b is not None:
        out_data = out_data + b.data[:, None, None]

    def backward(g):
        bsz, co, h, wd = g.shape
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, co)
        if w.requires_grad:
            gw = gmat.T @ cols
            w._accumulate(gw.reshape(w.data.shape))
        if x.requires_grad:
            # adjoint of circular cross-correlation: correlate with the
            # flipped, channel-transposed kernel
            w_adj = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _conv2d_raw(g, np.ascontiguousarray(w_adj))
            x._accumulate(gx)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
    inputs = (x, w) if b is None else (x, w, b)
    return _node(out_data, inputs, backward)


# FFT primitives.  scipy.fft preserves single precision (float32 <->
# complex64), which numpy's pocketfft wrapper does not.

def _edge_weights(m: int, n: int, dtype, interior: float) -> np.ndarray:
    """One-sided spectrum weights: 1 at DC and (even-n) Nyquist bins."""
    w = np.full(m, interior, dtype=dtype)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def _rfft_adjoint(g: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Adjoint of unnormalized rfft as a map R^n -> R^(2m)."""
    m = g.shape[axis]
    shape = [1] * g.ndim
    shape[axis] = m
    # halve interior bins: irfft re-doubles them through its conjugate mirror
    w = _edge_weights(m, n, g.real.dtype, interior=0.5).reshape(shape)
    return n * sfft.irfft(g * w, n=n, axis=axis)


def _irfft_adjoint(h: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Adjoint of irfft (with its 1/n normalization) as R^n -> R^(2m)."""
    gh = sfft.rfft(h, axis=axis)
    m = gh.shape[axis]
    shape = [1] * gh.ndim
    shape[axis] = m
    # interior one-sided bins stand for both conjugate partners
    w = _edge_weights(m, n, h.dtype, interior=2.0).reshape(shape) / n
    return gh * w


def rfft_axis(x: Tensor, axis: int) -> Tensor:
    n = x.data.shape[axis]
    out_data = sfft.rfft(x.data, axis=axis)

    def backward(g):
        x._accumulate(_rfft_adjoint(g, n, axis))
    return _node(out_data, (x,), backward)


def irfft_axis(y: Tensor, n: int, axis: int) -> Tensor:
    out_data = sfft.irfft(y.data, n=n, axis=axis)

    def backward(g):
        y._accumulate(_irfft_adjoint(g, n, axis))
    return _node(out_data, (y,), backward)


def rfft2(x: Tensor) -> Tensor:
    """2-D real FFT over the trailing axes (unnormalized forward)."""
    nx = x.data.shape[-1]
    out_data = sfft.rfft2(x.data, axes=(-2, -1))

    def backward(g):
        ny = g.shape[-2]
        gy = ny * sfft.ifft(g, axis=-2)
        x._accumulate(_rfft_adjoint(gy, nx, -1))
    return _node(out_data, (x,), backward)


def irfft2(y: Tensor, s: tuple[int, int]) -> Tensor:
    """Inverse of :func:`rfft2`, carrying the full 1/(nx*ny)."""
    out_data = sfft.irfft2(y.data, s=s, axes=(-2, -1))

    def backward(g):
        ny = s[0]
        gx = _irfft_adjoint(g, s[1], -1)
        y._accumulate(sfft.fft(gx, axis=-2) / ny)
    return _node(out_data, (y,), backward)


def as_complex(w: Tensor) -> np.ndarray:
    """View a trailing-pair real weight (..., 2) as a complex array."""
    return w.data[..., 0] + 1j * w.data[..., 1]


def _pack_pair(gc: np.ndarray, dtype) -> np.ndarray:
    return np.stack([gc.real, gc.imag], axis=-1).astype(dtype)


def _mode_slices(x: np.ndarray, modes: int, axis: int):
    """(block view, scatter function, mode-batched (m, rest, C) view)."""
    if axis in (-1, 3):
        xm = x[:, :, :, :modes]
        # (B,C,H,m) -> (m, B*H, C)
        flat = xm.transpose(3, 0, 2, 1).reshape(modes, -1, x.shape[1])
        def unflat(y, co):  # (m, B*H, Co) -> (B,Co,H,m)
            return y.reshape(modes, x.shape[0], x.shape[2], co).transpose(1, 3, 2, 0)
    else:
        xm = x[:, :, :modes, :]
        flat = xm.transpose(2, 0, 3, 1).reshape(modes, -1, x.shape[1])
        def unflat(y, co):
            return y.reshape(modes, x.shape[0], x.shape[3], co).transpose(1, 3, 0, 2)
    return flat, unflat


def mode_mul_axis(xf: Tensor, w: Tensor, modes: int, axis: int) -> Tensor:
    """Per-mode channel mixing along one transformed axis (FFNO branch).

    ``xf`` is complex (B, C, H, W) with ``axis`` in {-2, -1} transformed;
    ``w`` is real (modes, C, Cout, 2) viewed as complex.  Only the first
    ``modes`` frequencies are mixed; all the rest are zeroed.
    """
    if axis not in (-1, -2, 2, 3):
        raise ValueError("axis must be -2 or -1")
    if modes > xf.data.shape[axis]:
        raise ValueError(f"modes {modes} exceed available frequencies "
                         f"{xf.data.shape[axis]} along axis {axis}")
    wc = np.ascontiguousarray(as_complex(w))  # (m, C, Co)
    co = wc.shape[2]
    flat, unflat = _mode_slices(xf.data, modes, axis)
    y = flat @ wc  # batched over modes
    out_data = np.zeros(xf.data.shape[:1] + (co,) + xf.data.shape[2:],
                        dtype=xf.data.dtype)
    block = unflat(y, co)
    if axis in (-1, 3):
        out_data[:, :, :, :modes] = block
    else:
        out_data[:, :, :modes, :] = block

    def backward(g):
        gflat, gunflat = _mode_slices(g, modes, axis)
        if xf.requires_grad:
            gx = np.zeros_like(xf.data)
            gblock = gunflat(gflat @ wc.conj().transpose(0, 2, 1), wc.shape[1])
            if axis in (-1, 3):
                gx[:, :, :, :modes] = gblock
            else:
                gx[:, :, :modes, :] = gblock
            xf._accumulate(gx)
        if w.requires_grad:
            gw = flat.conj().transpose(0, 2, 1) @ gflat
            w._accumulate(_pack_pair(gw, w.data.dtype))
    return _node(out_data, (xf, w), backward)


def mode_mul_block2d(xf: Tensor, w: Tensor, modes: int) -> Tensor:
    """Low-frequency block mixing for the FNO layer.

    ``xf`` is complex (B, C, H, Wf); ``w`` is real
    (modes, modes, C, Cout, 2).  The mixed block covers rows 0..modes-1 and
    columns 0..modes-1 of the rfft2 layout; everything else is zeroed, so
    the skip path is the only route for the remaining modes.
    """
    if modes > xf.data.shape[-1] or modes > xf.data.shape[-2]:
        raise ValueError("modes exceed available frequencies")
    b, c = xf.data.shape[:2]
    wc = np.ascontiguousarray(as_complex(w)).reshape(modes * modes, c, -1)
    co = wc.shape[2]
    xm = xf.data[:, :, :modes, :modes]
    flat = xm.transpose(2, 3, 0, 1).reshape(modes * modes, b, c)
    y = flat @ wc  # (m*m, B, Co)
    out_data = np.zeros((b, co) + xf.data.shape[2:], dtype=xf.data.dtype)
    out_data[:, :, :modes, :modes] = (
        y.reshape(modes, modes, b, co).transpose(2, 3, 0, 1)
    )

    def backward(g):
        gm = g[:, :, :modes, :modes]
        gflat = gm.transpose(2, 3, 0, 1).reshape(modes * modes, b, co)
        if xf.requires_grad:
            gx = np.zeros_like(xf.data)
            gb = gflat @ wc.conj().transpose(0, 2, 1)
            gx[:, :, :modes, :modes] = (
                gb.reshape(modes, modes, b, c).transpose(2, 3, 0, 1)
            )
            xf._accumulate(gx)
        if w.requires_grad:
            gw = flat.conj().transpose(0, 2, 1) @ gflat
            w._accumulate(_pack_pair(gw.reshape(modes, modes, c, co), w.data.dtype))
    return _node(out_data, (xf, w), backward)
