"""Subgrid closures: classical baselines and the neural-model adapter.

Every closure is a pure function of the resolved coarse fields and returns a
:class:`ClosureOutput` that is either a PV-space forcing ``Sq`` [1/s^2] or a
velocity-space pair ``(Su, Sv)`` [m/s^2]; the solver converts the latter to
PV space through the curl (:func:`uv_forcing_to_q`).

The solver-facing hook is a callable ``(u, v, q, grid, params) ->
ClosureOutput``; the ``make_*`` factories below bind constants into such
callables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import MismatchError
from .spectral import (
    Grid,
    RealField,
    apply_dealias,
    forward_transform,
    inverse_transform,
)

DEFAULT_CS = 0.1
DEFAULT_R_BACK = 0.9
DEFAULT_KAPPA = -4.87e8  # [m^2]; negative sign gives net energy backscatter

# Input channel order shared with the dataset format.
INPUT_CHANNELS = ("u1", "v1", "q1", "u2", "v2", "q2")
OUTPUT_CHANNELS = ("sq1", "sq2")


@dataclass(frozen=True)
class ClosureOutput:
    """Tagged forcing: exactly one of Sq or the (Su, Sv) pair is set."""

    Sq: Optional[RealField] = None
    Su: Optional[RealField] = None
    Sv: Optional[RealField] = None

    def __post_init__(self):
        q_kind = self.Sq is not None
        uv_kind = self.Su is not None and self.Sv is not None
        if q_kind == uv_kind:
            raise MismatchError("ClosureOutput needs either Sq or (Su, Sv)")


@dataclass(frozen=True)
class NormStats:
    """Per-channel standardization constants for model inputs and targets."""

    in_mean: np.ndarray  # (6,)
    in_std: np.ndarray
    out_mean: np.ndarray  # (2,)
    out_std: np.ndarray

    def __post_init__(self):
        if self.in_mean.shape != (6,) or self.in_std.shape != (6,):
            raise MismatchError("input stats must have 6 channels")
        if self.out_mean.shape != (2,) or self.out_std.shape != (2,):
            raise MismatchError("output stats must have 2 channels")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("standard deviations must be positive")

    def standardize_inputs(self, x: np.ndarray) -> np.ndarray:
        """(..., 6, H, H) -> standardized, channel axis at -3."""
        return (x - self.in_mean[:, None, None]) / self.in_std[:, None, None]

    def destandardize_outputs(self, y: np.ndarray) -> np.ndarray:
        return y * self.out_std[:, None, None] + self.out_mean[:, None, None]

    def standardize_outputs(self, y: np.ndarray) -> np.ndarray:
        return (y - self.out_mean[:, None, None]) / self.out_std[:, None, None]


def _gradients(f: RealField, g: Grid) -> tuple[RealField, RealField]:
    fh = forward_transform(f, g)
    return (
        inverse_transform(1j * g.kx * fh, g),
        inverse_transform(1j * g.ky * fh, g),
    )


def smagorinsky(u: RealField, v: RealField, q: RealField, cs: float,
                g: Grid) -> ClosureOutput:
    """Eddy-viscosity PV diffusion ``Sq = div(nu grad q)``.

    ``nu = (cs * dx)^2 |S|`` with the strain magnitude
    ``|S| = sqrt(2) * sqrt((du/dx)^2 + (dv/dy)^2 + 1/2 (du/dy + dv/dx)^2)``
    computed per layer from the resolved velocities.
    """
    if cs <= 0:
        raise ValueError("cs must be positive")
    ux, uy = _gradients(u, g)
    vx, vy = _gradients(v, g)
    strain = np.sqrt(2.0) * np.sqrt(ux**2 + vy**2 + 0.5 * (uy + vx) ** 2)
    nu = (cs * g.dx) ** 2 * strain
    qx, qy = _gradients(q, g)
    fx = forward_transform(nu * qx, g)
    fy = forward_transform(nu * qy, g)
    sq = inverse_transform(apply_dealias(1j * g.kx * fx + 1j * g.ky * fy, g), g)
    return ClosureOutput(Sq=sq)


def biharmonic(q: RealField, nu4: float, g: Grid) -> ClosureOutput:
    """Hyperviscous dissipation ``Sq = -nu4 * lap^2 q`` (spectral)."""
    if nu4 < 0:
        raise ValueError("nu4 must be nonnegative")
    qh = forward_transform(q, g)
    return ClosureOutput(Sq=inverse_transform(-nu4 * g.k2**2 * qh, g))


def backscatter_biharmonic(q: RealField, nu4: float, r_back: float,
                           g: Grid) -> ClosureOutput:
    """Biharmonic dissipation with anti-viscous large-scale re-injection.

    The negative-Laplacian coefficient is chosen at each call so the energy
    put back equals ``r_back`` times the energy the biharmonic term removes
    at that instant.  Energy bookkeeping uses the per-layer vorticity
    streamfunction ``psi_hat = -q_hat / k^2`` and the spectral inner product
    ``dE = -sum Re[conj(psi_hat) T_hat]``, so the identity holds by
    construction.
    """
    if not 0.0 <= r_back <= 1.0:
        raise ValueError("r_back must lie in [0, 1]")
    qh = forward_transform(q, g)
    dis_h = -nu4 * g.k2**2 * qh
    with np.errstate(divide="ignore", invalid="ignore"):
        psih = np.where(g.k2 > 0, -qh / g.k2, 0.0)
    norm = (g.nx * g.ny) ** 2
    e_dis = -np.sum(g.sym_weights * np.real(np.conj(psih) * dis_h)) / norm
    # mean (k = 0) modes feel no Laplacian forcing: exclude them from the
    # injection-per-unit-coefficient bookkeeping
    inj_per_nu = (
        np.sum(g.sym_weights * np.abs(qh) ** 2)
        - np.sum(np.abs(qh[..., 0, 0]) ** 2)
    ) / norm
    nu_b = 0.0 if inj_per_nu == 0 else r_back * max(-e_dis, 0.0) / inj_per_nu
    return ClosureOutput(Sq=inverse_transform(dis_h + nu_b * g.k2 * qh, g))


def zb_symbolic(u: RealField, v: RealField, kappa: float, g: Grid) -> ClosureOutput:
    """Vorticity-deformation tensor closure in velocity space.

    With relative vorticity ``zeta = dv/dx - du/dy``, shearing deformation
    ``D = du/dy + dv/dx`` and stretching deformation ``Dt = du/dx - dv/dy``,
    the forcing is ``kappa * div T`` for the symmetric tensor
    ``T = [[-zeta D_t + s, zeta D], [zeta D, zeta D_t + s]]`` where
    ``s = (zeta^2 + D^2 + D_t^2) / 2``.
    """
    ux, uy = _gradients(u, g)
    vx, vy = _gradients(v, g)
    zeta = vx - uy
    dshear = uy + vx
    dstretch = ux - vy
    trace = 0.5 * (zeta**2 + dshear**2 + dstretch**2)
    t00 = forward_transform(-zeta * dstretch + trace, g)
    t01 = forward_transform(zeta * dshear, g)
    t11 = forward_transform(zeta * dstretch + trace, g)
    su = inverse_transform(apply_dealias(1j * g.kx * t00 + 1j * g.ky * t01, g), g)
    sv = inverse_transform(apply_dealias(1j * g.kx * t01 + 1j * g.ky * t11, g), g)
    return ClosureOutput(Su=kappa * su, Sv=kappa * sv)


def uv_forcing_to_q(Su: RealField, Sv: RealField, g: Grid) -> RealField:
    """Curl of a velocity forcing: the relative-vorticity part of dq/dt."""
    if Su.shape != Sv.shape:
        raise MismatchError(f"Su shape {Su.shape} != Sv shape {Sv.shape}")
    suh = forward_transform(Su, g)
    svh = forward_transform(Sv, g)
    return inverse_transform(1j * g.kx * svh - 1j * g.ky * suh, g)


def forcing_to_q(out: ClosureOutput, g: Grid) -> RealField:
    """Normalize any ClosureOutput to a PV-space forcing."""
    if out.Sq is not None:
        return out.Sq
    return uv_forcing_to_q(out.Su, out.Sv, g)


def neural_closure(model, stats: NormStats, u: RealField, v: RealField,
                   q: RealField) -> ClosureOutput:
    """Run a trained model on (u, v, q) and return the physical forcing."""
    from . import models as _models

    x = np.stack([u[0], v[0], q[0], u[1], v[1], q[1]])
    xs = stats.standardize_inputs(x)
    ys = _models.predict(model, xs[None].astype(np.float32))[0]
    sq = stats.destandardize_outputs(ys.astype(np.float64))
    if not np.all(np.isfinite(sq)):
        raise FloatingPointError("neural closure produced non-finite forcing")
    return ClosureOutput(Sq=sq)


# Factories binding constants into solver-facing callables.

def default_nu4(g: Grid, dt: float) -> float:
    """Grid-scaled hyperviscosity: (dx^4 / dt) * 1e-3."""
    return g.dx**4 / dt * 1e-3


def make_smagorinsky(cs: float = DEFAULT_CS) -> Callable:
    def closure(u, v, q, g, p):
        return smagorinsky(u, v, q, cs, g)
    return closure


def make_biharmonic(nu4: Optional[float] = None) -> Callable:
    def closure(u, v, q, g, p):
        return biharmonic(q, default_nu4(g, p.dt) if nu4 is None else nu4, g)
    return closure


def make_backscatter(nu4: Optional[float] = None,
                     r_back: float = DEFAULT_R_BACK) -> Callable:
    def closure(u, v, q, g, p):
        nv = default_nu4(g, p.dt) if nu4 is None else nu4
        return backscatter_biharmonic(q, nv, r_back, g)
    return closure


def make_zb(kappa: float = DEFAULT_KAPPA) -> Callable:
    def closure(u, v, q, g, p):
        return zb_symbolic(u, v, kappa, g)
    return closure


def make_neural(model, stats: NormStats) -> Callable:
    def closure(u, v, q, g, p):
        return neural_closure(model, stats, u, v, q)
    return closure
