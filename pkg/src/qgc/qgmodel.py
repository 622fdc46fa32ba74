"""Two-layer quasi-geostrophic solver on a doubly periodic domain.

The prognostic variable is the perturbation potential vorticity ``q`` in two
layers.  Layer coupling enters through the stretching coefficients
``F1 = kd^2 / (1 + delta)`` and ``F2 = delta * F1`` (``kd = 1/rd``), the
imposed zonal shear ``U1 - U2`` tilts the background PV gradients to
``beta_1 = beta + F1 (U1 - U2)`` and ``beta_2 = beta - F2 (U1 - U2)``, and
the bottom layer feels linear drag ``-rek * lap(psi_2)``.  Advection is
pseudo-spectral in gradient form with a two-thirds dealiased product, time
stepping is third-order Adams-Bashforth (Euler, then AB2 startup), and an
exponential small-scale dissipation filter is applied to the q spectrum at
step time.

A closure hook lets any callable inject an extra forcing into the tendency;
see :mod:`qgc.closures` for the call convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BlowUpError, MismatchError
from .spectral import (
    Grid,
    RealField,
    SpectralField,
    apply_dealias,
    build_grid,
    forward_transform,
    inverse_transform,
    spectral_mean_square,
    ssd_factor,
)

Closure = Callable[..., "object"]  # (u, v, q, grid, params) -> ClosureOutput


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of one model configuration."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    dt: float
    beta: float = 1.5e-11  # planetary PV gradient [1/(m s)]
    rd: float = 15000.0  # deformation radius [m]
    delta: float = 0.25  # layer thickness ratio H1/H2
    U1: float = 0.025  # imposed zonal velocity, upper layer [m/s]
    U2: float = 0.0
    rek: float = 5.787e-7  # bottom drag [1/s]
    ssd_on: bool = True

    def __post_init__(self):
        if self.rd <= 0:
            raise ValueError("rd must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.rek < 0:
            raise ValueError("rek must be nonnegative")

    @property
    def layer_weights(self) -> tuple[float, float]:
        """Thickness weights (H1/H, H2/H) used in all layer sums."""
        return (self.delta / (1 + self.delta), 1 / (1 + self.delta))


def default_dt(nx: int) -> float:
    """Resolution-scaled timestep keeping CFL comfortably below 0.25."""
    return 3600.0 * 64 / nx


def eddy_params(nx: int = 64, ny: Optional[int] = None, dt: Optional[float] = None,
                **overrides) -> ModelParams:
    """Eddy regime: chaotic swirling flow (moderate drag, delta = 0.25)."""
    ny = nx if ny is None else ny
    base = dict(nx=nx, ny=ny, Lx=1e6, Ly=1e6,
                dt=default_dt(nx) if dt is None else dt,
                beta=1.5e-11, rd=15000.0, delta=0.25,
                U1=0.025, U2=0.0, rek=5.787e-7)
    base.update(overrides)
    return ModelParams(**base)


def jet_params(nx: int = 64, ny: Optional[int] = None, dt: Optional[float] = None,
               **overrides) -> ModelParams:
    """Jet regime: weak drag and thin upper layer favor zonal banding."""
    ny = nx if ny is None else ny
    base = dict(nx=nx, ny=ny, Lx=1e6, Ly=1e6,
                dt=default_dt(nx) if dt is None else dt,
                beta=1.5e-11, rd=15000.0, delta=0.1,
                U1=0.025, U2=0.0, rek=7e-8)
    base.update(overrides)
    return ModelParams(**base)


REGIMES = {"eddy": eddy_params, "jet": jet_params}


def make_grid(p: ModelParams) -> Grid:
    return build_grid(p.nx, p.ny, p.Lx, p.Ly)


def stretching_coefficients(p: ModelParams) -> tuple[float, float]:
    """Layer coupling coefficients (F1, F2); F1 + F2 = 1/rd^2."""
    kd2 = 1.0 / p.rd**2
    F1 = kd2 / (1.0 + p.delta)
    return F1, p.delta * F1


def invert_pv(q_spec: SpectralField, p: ModelParams, g: Grid) -> SpectralField:
    """Solve the per-wavenumber 2x2 stretching system for psi.

    ``q1 = -(k^2 + F1) psi1 + F1 psi2`` and symmetrically for layer 2; the
    determinant ``k^2 (k^2 + F1 + F2)`` vanishes only at k = 0 where psi is
    gauged to zero.
    """
    if q_spec.shape != (2,) + g.spectral_shape():
        raise MismatchError(f"expected 2-layer spectral field, got {q_spec.shape}")
    F1, F2 = stretching_coefficients(p)
    k2 = g.k2
    det = k2 * (k2 + F1 + F2)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi1 = (-(k2 + F2) * q_spec[0] - F1 * q_spec[1]) / det
        psi2 = (-F2 * q_spec[0] - (k2 + F1) * q_spec[1]) / det
    psi = np.stack([psi1, psi2])
    psi[:, 0, 0] = 0.0
    return psi


def apply_stretching(psi_spec: SpectralField, p: ModelParams, g: Grid) -> SpectralField:
    """Forward operator q = lap(psi) + stretching; inverse of invert_pv."""
    F1, F2 = stretching_coefficients(p)
    q1 = -g.k2 * psi_spec[0] + F1 * (psi_spec[1] - psi_spec[0])
    q2 = -g.k2 * psi_spec[1] + F2 * (psi_spec[0] - psi_spec[1])
    return np.stack([q1, q2])


def velocities(psi_spec: SpectralField, g: Grid) -> tuple[RealField, RealField]:
    """u = -dpsi/dy, v = dpsi/dx, evaluated pseudo-spectrally."""
    u = inverse_transform(-1j * g.ky * psi_spec, g)
    v = inverse_transform(1j * g.kx * psi_spec, g)
    return u, v


def advection_tendency(psi_spec: SpectralField, q_spec: SpectralField,
                       g: Grid) -> SpectralField:
    """Spectral tendency ``-(u . grad q)`` with a dealiased product."""
    u, v = velocities(psi_spec, g)
    qx = inverse_transform(1j * g.kx * q_spec, g)
    qy = inverse_transform(1j * g.ky * q_spec, g)
    return -apply_dealias(forward_transform(u * qx + v * qy, g), g)


@dataclass
class ModelState:
    """Prognostic state plus the tendency history AB3 stepping needs."""

    t: float
    tc: int  # completed steps
    qh: SpectralField  # (2, ny, nx//2+1), perturbation PV spectrum
    tend1: Optional[SpectralField] = None  # tendency at step tc-1
    tend2: Optional[SpectralField] = None  # tendency at step tc-2

    def copy(self) -> "ModelState":
        return ModelState(
            t=self.t, tc=self.tc, qh=self.qh.copy(),
            tend1=None if self.tend1 is None else self.tend1.copy(),
            tend2=None if self.tend2 is None else self.tend2.copy(),
        )


@dataclass(frozen=True)
class Snapshot:
    """Immutable sample of a running simulation."""

    t: float
    step: int
    q: RealField  # (2, ny, nx)


def initial_condition(p: ModelParams, g: Grid, seed: int,
                      amplitude: float = 1e-7) -> ModelState:
    """Seeded Gaussian q noise, band-limited to the lowest third of modes.

    Each layer is rescaled to the requested RMS amplitude so shear
    instability can grow from a small but nonzero perturbation.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal((2, g.ny, g.nx))
    nh = forward_transform(noise, g)
    kx_nyq = np.pi * g.nx / g.Lx
    ky_nyq = np.pi * g.ny / g.Ly
    keep = (np.abs(g.kx) <= kx_nyq / 3) & (np.abs(g.ky) <= ky_nyq / 3)
    nh *= keep
    nh[:, 0, 0] = 0.0
    q = inverse_transform(nh, g)
    rms = np.sqrt((q**2).mean(axis=(-2, -1), keepdims=True))
    q = np.where(rms > 0, q / rms, q) * amplitude
    return ModelState(t=0.0, tc=0, qh=forward_transform(q, g))


class Stepper:
    """Precomputed tendency and AB3 update machinery for one (params, grid).

    Instances are cheap and single-threaded; run several in parallel by
    giving each its own Stepper and state.
    """

    def __init__(self, p: ModelParams, g: Optional[Grid] = None):
        self.p = p
        self.g = make_grid(p) if g is None else g
        if (self.g.nx, self.g.ny) != (p.nx, p.ny):
            raise MismatchError("grid does not match params resolution")
        self.F1, self.F2 = stretching_coefficients(p)
        shear = p.U1 - p.U2
        self.beta1 = p.beta + self.F1 * shear
        self.beta2 = p.beta - self.F2 * shear
        self.filter = ssd_factor(self.g) if p.ssd_on else None

    def tendency(self, qh: SpectralField, closure: Optional[Closure] = None,
                 ) -> SpectralField:
        """Full dq/dt spectrum: advection, mean-flow terms, drag, closure."""
        p, g = self.p, self.g
        psih = invert_pv(qh, p, g)
        tend = advection_tendency(psih, qh, g)
        ikx = 1j * g.kx
        tend[0] -= p.U1 * (ikx * qh[0]) + self.beta1 * (ikx * psih[0])
        tend[1] -= p.U2 * (ikx * qh[1]) + self.beta2 * (ikx * psih[1])
        tend[1] += p.rek * g.k2 * psih[1]
        if closure is not None:
            sq = _closure_q_forcing(closure, psih, qh, p, g)
            tend += forward_transform(sq, g)
        return tend

    def step(self, s: ModelState, closure: Optional[Closure] = None) -> ModelState:
        """One Adams-Bashforth step; SSD filter applied after the update."""
        p = self.p
        # overflow here is a blow-up in progress; the guard below reports it
        with np.errstate(over="ignore", invalid="ignore"):
            tend = self.tendency(s.qh, closure)
            if s.tc == 0:
                qh = s.qh + p.dt * tend
            elif s.tc == 1:
                qh = s.qh + p.dt * (1.5 * tend - 0.5 * s.tend1)
            else:
                qh = s.qh + (p.dt / 12.0) * (
                    23.0 * tend - 16.0 * s.tend1 + 5.0 * s.tend2
                )
            if self.filter is not None:
                qh = qh * self.filter
        if not np.all(np.isfinite(qh)):
            raise BlowUpError(
                f"non-finite q spectrum after step {s.tc} (t={s.t + p.dt:.6g} s)",
                step=s.tc,
            )
        return ModelState(t=s.t + p.dt, tc=s.tc + 1, qh=qh,
                          tend1=tend, tend2=s.tend1)

    def snapshot(self, s: ModelState) -> Snapshot:
        return Snapshot(t=s.t, step=s.tc,
                        q=inverse_transform(s.qh, self.g))


def full_tendency(s: ModelState, p: ModelParams,
                  closure: Optional[Closure] = None) -> RealField:
    """Physical-space dq/dt for the current state (diagnostic view)."""
    st = Stepper(p)
    return inverse_transform(st.tendency(s.qh, closure), st.g)


def step(s: ModelState, p: ModelParams,
         closure: Optional[Closure] = None) -> ModelState:
    return Stepper(p).step(s, closure)


def cfl_number(s: ModelState, p: ModelParams, g: Optional[Grid] = None) -> float:
    """max(|u + U|) dt/dx + max(|v|) dt/dy for the current state."""
    g = make_grid(p) if g is None else g
    psih = invert_pv(s.qh, p, g)
    u, v = velocities(psih, g)
    umax = max(np.abs(u[0] + p.U1).max(), np.abs(u[1] + p.U2).max())
    return float(umax * p.dt / g.dx + np.abs(v).max() * p.dt / g.dy)


def simulate(
    p: ModelParams,
    n_steps: int,
    closure: Optional[Closure] = None,
    sample_every: Optional[int] = None,
    callbacks: Sequence[Callable[[Snapshot], None]] = (),
    seed: int = 0,
    spinup_frac: float = 0.25,
    init_amplitude: float = 1e-7,
    state: Optional[ModelState] = None,
) -> tuple[ModelState, list[Snapshot]]:
    """Run the step loop from a seeded small-amplitude initial condition.

    Snapshots are taken every ``sample_every`` steps once the first
    ``spinup_frac`` of the run has passed; callbacks see the same immutable
    snapshots.  Blow-ups abort with the offending step index.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    st = Stepper(p)
    s = initial_condition(p, st.g, seed, init_amplitude) if state is None else state
    snapshots: list[Snapshot] = []
    first_sample = int(np.ceil(n_steps * spinup_frac)) if sample_every else n_steps + 1
    for n in range(1, n_steps + 1):
        s = st.step(s, closure)
        if sample_every and n >= first_sample and (n - first_sample) % sample_every == 0:
            snap = st.snapshot(s)
            snapshots.append(snap)
            for cb in callbacks:
                cb(snap)
    return s, snapshots


def total_energy(qh: SpectralField, p: ModelParams, g: Grid) -> float:
    """Perturbation energy: thickness-weighted KE plus interface APE.

    ``E = 1/2 sum_i w_i <|grad psi_i|^2> + 1/2 w1 F1 <(psi1 - psi2)^2>``
    (note ``w1 F1 = w2 F2``, so the APE weight is symmetric).
    """
    w1, w2 = p.layer_weights
    F1, _ = stretching_coefficients(p)
    psih = invert_pv(qh, p, g)
    ke = 0.5 * (
        w1 * spectral_mean_square(np.sqrt(g.k2) * psih[0], g)
        + w2 * spectral_mean_square(np.sqrt(g.k2) * psih[1], g)
    )
    ape = 0.5 * w1 * F1 * spectral_mean_square(psih[0] - psih[1], g)
    return ke + ape


def total_enstrophy(qh: SpectralField, p: ModelParams, g: Grid) -> float:
    """Thickness-weighted potential enstrophy ``1/2 sum_i w_i <q_i^2>``."""
    w1, w2 = p.layer_weights
    return 0.5 * (
        w1 * spectral_mean_square(qh[0], g) + w2 * spectral_mean_square(qh[1], g)
    )


def _closure_q_forcing(closure: Closure, psih: SpectralField,
                       qh: SpectralField, p: ModelParams, g: Grid) -> RealField:
    """Call a closure on resolved fields and normalize its output to q space."""
    from .closures import forcing_to_q  # local import to avoid a cycle

    u, v = velocities(psih, g)
    q = inverse_transform(qh, g)
    out = closure(u, v, q, g, p)
    sq = forcing_to_q(out, g)
    if sq.shape != q.shape:
        raise MismatchError(f"closure output shape {sq.shape} != field {q.shape}")
    if not np.all(np.isfinite(sq)):
        raise BlowUpError("closure returned non-finite forcing")
    return sq
