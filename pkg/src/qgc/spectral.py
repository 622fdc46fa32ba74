"""Spectral substrate: transforms, wavenumber bookkeeping, filters, ring sums.

Conventions (fixed project-wide):

* Physical fields are real ndarrays with trailing axes ``(ny, nx)``; an
  optional leading layer axis is carried through untouched.
* Spectral fields come from ``numpy.fft.rfft2`` over the trailing two axes,
  shape ``(..., ny, nx // 2 + 1)``: ``ky`` is two-sided in FFT order along
  axis -2, ``kx`` one-sided along axis -1.
* The forward transform is unnormalized; the inverse carries the full
  ``1 / (nx * ny)``.  Hence the ``(0, 0)`` coefficient equals the field mean
  times ``nx * ny``, and the mean-square identity is
  ``<f^2> = sum(w_sym * |F|^2) / (nx * ny)**2`` with conjugate-symmetry
  weights ``w_sym`` (2 on interior kx columns, 1 on kx = 0 and kx = Nyquist).
* Everything on the solver path is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MismatchError

# Type aliases used throughout: a RealField is a float64 ndarray
# (..., ny, nx); a SpectralField is the matching complex128 rfft2 array
# (..., ny, nx//2 + 1).
RealField = np.ndarray
SpectralField = np.ndarray

# Exponential small-scale dissipation filter constants (Arbic & Flierl
# style quartic filter); overridable per call and via run config.
SSD_A = 23.6
SSD_CUTOFF = 0.65 * np.pi


@dataclass(frozen=True)
class IsotropicSpectrum:
    """Ring-summed spectrum: one value per isotropic wavenumber bin."""

    k_centers: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.k_centers.shape != self.values.shape:
            raise MismatchError("k_centers and values must have equal length")


@dataclass(frozen=True)
class Grid:
    """Spatial/spectral discretization of a doubly periodic rectangle.

    Built through :func:`build_grid`; all derived arrays are precomputed so
    grid instances are cheap to share between threads.
    """

    nx: int
    ny: int
    Lx: float
    Ly: float
    kx: np.ndarray = field(repr=False)  # (1, nx//2+1), one-sided [rad/m]
    ky: np.ndarray = field(repr=False)  # (ny, 1), two-sided FFT order
    k2: np.ndarray = field(repr=False)  # kx^2 + ky^2, (ny, nx//2+1)
    dealias_mask: np.ndarray = field(repr=False)
    ring_edges: np.ndarray = field(repr=False)
    sym_weights: np.ndarray = field(repr=False)
    ring_index: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def nk(self) -> int:
        """Stored coefficients along the one-sided kx axis."""
        return self.nx // 2 + 1

    @property
    def dk(self) -> float:
        """Isotropic ring bin width (fundamental wavenumber)."""
        return 2 * np.pi / max(self.Lx, self.Ly)

    @property
    def ring_centers(self) -> np.ndarray:
        return 0.5 * (self.ring_edges[:-1] + self.ring_edges[1:])

    def spatial_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def spectral_shape(self) -> tuple[int, int]:
        return (self.ny, self.nk)


def build_grid(nx: int, ny: int, Lx: float, Ly: float) -> Grid:
    """Construct a :class:`Grid` with wavenumbers, masks, and ring bins.

    ``nx, ny`` must be even and at least 8 (the two-thirds rule needs a few
    resolved modes to be meaningful); ``Lx, Ly`` positive.
    """
    if nx % 2 or ny % 2:
        raise ValueError(f"grid size must be even, got {nx}x{ny}")
    if nx < 8 or ny < 8:
        raise ValueError(f"grid size must be >= 8, got {nx}x{ny}")
    if Lx <= 0 or Ly <= 0:
        raise ValueError("domain lengths must be positive")

    kx = 2 * np.pi * np.fft.rfftfreq(nx, d=Lx / nx)[None, :]
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=Ly / ny)[:, None]
    k2 = kx**2 + ky**2

    # Two-thirds rule: drop coefficients whose |kx| or |ky| exceeds 2/3 of
    # that axis' Nyquist wavenumber.
    kx_nyq = np.pi * nx / Lx
    ky_nyq = np.pi * ny / Ly
    dealias_mask = (np.abs(kx) <= (2.0 / 3.0) * kx_nyq) & (
        np.abs(ky) <= (2.0 / 3.0) * ky_nyq
    )

    # Conjugate-symmetry weights for one-sided storage: interior kx columns
    # stand for a +k/-k pair of the full plane.
    sym = np.full((ny, nx // 2 + 1), 2.0)
    sym[:, 0] = 1.0
    sym[:, -1] = 1.0

    # Ring bins: width = fundamental wavenumber, first edge at dk/2 so bin
    # centers sit exactly on multiples of dk.  Edges run past the spectral
    # plane's corner so every stored coefficient lands in some bin and ring
    # totals preserve Parseval bookkeeping (the k=0 mean mode is excluded).
    dk = 2 * np.pi / max(Lx, Ly)
    k_corner = np.sqrt(kx.max() ** 2 + np.abs(ky).max() ** 2)
    n_bins = int(np.ceil((k_corner - 0.5 * dk) / dk)) + 1
    ring_edges = 0.5 * dk + dk * np.arange(n_bins + 1)

    kmag = np.sqrt(k2)
    ring_index = np.digitize(kmag.ravel(), ring_edges).reshape(kmag.shape) - 1
    # k=0 falls below the first edge -> index -1, dropped by ring_sum.

    for arr in (kx, ky, k2, dealias_mask, ring_edges, sym, ring_index):
        arr.setflags(write=False)

    return Grid(
        nx=nx, ny=ny, Lx=float(Lx), Ly=float(Ly),
        kx=kx, ky=ky, k2=k2,
        dealias_mask=dealias_mask, ring_edges=ring_edges,
        sym_weights=sym, ring_index=ring_index,
    )


def _check_spatial(f: RealField, g: Grid):
    if f.shape[-2:] != g.spatial_shape():
        raise MismatchError(
            f"field shape {f.shape} does not match grid {g.spatial_shape()}"
        )


def _check_spectral(F: SpectralField, g: Grid):
    if F.shape[-2:] != g.spectral_shape():
        raise MismatchError(
            f"spectral shape {F.shape} does not match grid {g.spectral_shape()}"
        )


def forward_transform(f: RealField, g: Grid) -> SpectralField:
    """Real-to-complex 2-D FFT over the trailing axes (unnormalized)."""
    _check_spatial(f, g)
    return np.fft.rfft2(f, axes=(-2, -1))


def inverse_transform(F: SpectralField, g: Grid) -> RealField:
    """Inverse of :func:`forward_transform`; carries the 1/(nx*ny) factor."""
    _check_spectral(F, g)
    return np.fft.irfft2(F, s=g.spatial_shape(), axes=(-2, -1))


def spectral_gradient(F: SpectralField, g: Grid, axis: str) -> SpectralField:
    """Multiply by ik along ``axis`` ("x" or "y")."""
    _check_spectral(F, g)
    if axis == "x":
        return 1j * g.kx * F
    if axis == "y":
        return 1j * g.ky * F
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def spectral_laplacian(F: SpectralField, g: Grid) -> SpectralField:
    _check_spectral(F, g)
    return -g.k2 * F


def apply_dealias(F: SpectralField, g: Grid) -> SpectralField:
    """Zero every coefficient above the two-thirds cutoff (idempotent)."""
    _check_spectral(F, g)
    return F * g.dealias_mask


def ssd_factor(g: Grid, a: float = SSD_A, cutoff: float = SSD_CUTOFF) -> np.ndarray:
    """Per-coefficient multiplier of the small-scale dissipation filter.

    With nondimensional wavenumber ``k* = sqrt((kx dx)^2 + (ky dy)^2)`` the
    factor is ``exp(-a (k* - cutoff)^4)`` above the cutoff and 1 below, so
    it never amplifies.
    """
    kstar = np.sqrt((g.kx * g.dx) ** 2 + (g.ky * g.dy) ** 2)
    factor = np.ones_like(kstar)
    above = kstar > cutoff
    factor[above] = np.exp(-a * (kstar[above] - cutoff) ** 4)
    return factor


def apply_ssd_filter(
    F: SpectralField, g: Grid, a: float = SSD_A, cutoff: float = SSD_CUTOFF
) -> SpectralField:
    """Apply the exponential small-scale dissipation filter."""
    _check_spectral(F, g)
    return F * ssd_factor(g, a=a, cutoff=cutoff)


def ring_sum(F2d: np.ndarray, g: Grid) -> IsotropicSpectrum:
    """Sum a real per-coefficient density over isotropic wavenumber rings.

    ``F2d`` must already be a real density (e.g. ``|F|^2`` or the real part
    of a cross-spectrum) on a single layer, shape ``(ny, nx//2+1)``.  The
    conjugate-symmetric half that rfft storage omits is counted via the
    grid's symmetry weights, so ``sum(spectrum.values)`` equals the
    full-plane total of the density (k = 0 excluded; every diagnostic here
    is built from zero-mean fields).
    """
    _check_spectral(F2d, g)
    if np.iscomplexobj(F2d):
        raise MismatchError("ring_sum expects a real-valued density")
    weighted = (F2d * g.sym_weights).ravel()
    idx = g.ring_index.ravel()
    keep = idx >= 0
    n_bins = len(g.ring_edges) - 1
    values = np.bincount(idx[keep], weights=weighted[keep], minlength=n_bins)
    return IsotropicSpectrum(k_centers=g.ring_centers, values=values)


def spectral_mean_square(F: SpectralField, g: Grid) -> float:
    """``<f^2>`` of the underlying real field, computed spectrally."""
    _check_spectral(F, g)
    dens = (np.abs(F) ** 2 * g.sym_weights).sum()
    return float(dens) / (g.nx * g.ny) ** 2
