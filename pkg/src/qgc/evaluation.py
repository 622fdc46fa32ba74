"""Offline R2 scoring, online spectral energy budgets, and the speed harness.

Budget convention: every diagnostic spectrum is the contribution of one
tendency term to ``dE/dt``, ring-summed over isotropic bins, so the terms
are directly comparable and their integrals close the physical energy
budget:

* ``KEflux(k)   = sum_i w_i Re[psi_i^* . F((u_i . grad) zeta_i)]`` --
  kinetic-energy transfer by advection of relative vorticity;
* ``APEflux(k)`` -- the same pairing with the stretching part of q, i.e.
  available-potential-energy transfer; KEflux + APEflux integrates to zero
  because dealiased advection only redistributes energy;
* ``APEgenspec(k) = sum_i w_i U_i Re[i kx psi_i^* q_i]`` -- generation by
  the imposed shear (the beta part pairs to zero identically);
* ``KEfrictionspec(k) = -rek w_2 k^2 |psi_2|^2 <= 0`` -- bottom drag sink;
* ``KEspec(k) = 1/2 sum_i w_i k^2 |psi_i|^2`` -- kinetic energy density.

All densities carry the conjugate-symmetry weights and the 1/(nx ny)^2
transform normalization, so sums over bins equal domain averages.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .closures import NormStats
from .errors import BlowUpError, MismatchError
from .qgmodel import (
    ModelParams,
    Snapshot,
    Stepper,
    invert_pv,
    make_grid,
    simulate,
    stretching_coefficients,
    total_energy,
    velocities,
)
from .spectral import (
    Grid,
    IsotropicSpectrum,
    apply_dealias,
    forward_transform,
    inverse_transform,
    ring_sum,
)
from .subgrid import coarsen, coarse_params

DIAGNOSTIC_NAMES = ("KEspec", "KEflux", "APEflux", "APEgenspec", "KEfrictionspec")


@dataclass(frozen=True)
class R2Report:
    r2_upper: float
    r2_lower: float
    n_samples: int
    tag: str = ""


@dataclass(frozen=True)
class SpectralDiagnostics:
    KEspec: IsotropicSpectrum
    KEflux: IsotropicSpectrum
    APEflux: IsotropicSpectrum
    APEgenspec: IsotropicSpectrum
    KEfrictionspec: IsotropicSpectrum

    def as_dict(self) -> dict[str, IsotropicSpectrum]:
        return {name: getattr(self, name) for name in DIAGNOSTIC_NAMES}


@dataclass(frozen=True)
class SpeedReport:
    t_hires: float
    t_lores: float
    t_param: dict[str, float]
    n_steps: int

    @property
    def speedups(self) -> dict[str, float]:
        out = {"lores": speedup(self.t_hires, self.t_lores)}
        for name, t in self.t_param.items():
            out[name] = speedup(self.t_hires, t)
        return out


@dataclass(frozen=True)
class OnlineReport:
    diagnostics: Optional[SpectralDiagnostics]
    distances: Optional[dict[str, float]]
    blew_up: bool
    steps_completed: int


def r2_per_layer(preds: np.ndarray, targets: np.ndarray, tag: str = "") -> R2Report:
    """Coefficient of determination pooled over samples and pixels, per layer."""
    if preds.shape != targets.shape:
        raise MismatchError(f"preds {preds.shape} != targets {targets.shape}")
    if preds.ndim != 4 or preds.shape[1] != 2:
        raise MismatchError("expected (n_samples, 2, H, W) arrays")
    if len(preds) < 2:
        raise ValueError("need at least 2 samples")
    scores = []
    for layer in (0, 1):
        t = targets[:, layer].astype(np.float64)
        p = preds[:, layer].astype(np.float64)
        ss_tot = float(((t - t.mean()) ** 2).sum())
        if ss_tot == 0.0:
            raise ValueError(f"zero target variance in layer {layer}")
        scores.append(1.0 - float(((t - p) ** 2).sum()) / ss_tot)
    return R2Report(r2_upper=scores[0], r2_lower=scores[1],
                    n_samples=len(preds), tag=tag)


def offline_eval(model, stats: NormStats, test, batch: int = 32) -> R2Report:
    """Batched inference over a test Dataset, scored in physical units."""
    from .models import predict

    if test.inputs.shape[1] != 6:
        raise MismatchError("test dataset must carry 6 input channels")
    preds = np.empty_like(test.targets, dtype=np.float64)
    for i in range(0, len(test), batch):
        xs = stats.standardize_inputs(
            test.inputs[i:i + batch].astype(np.float64)
        ).astype(np.float32)
        preds[i:i + batch] = stats.destandardize_outputs(
            predict(model, xs).astype(np.float64)
        )
    return r2_per_layer(preds, test.targets.astype(np.float64), tag=test.regime)


def _budget_densities(qh, p: ModelParams, g: Grid) -> dict[str, np.ndarray]:
    """Per-coefficient (ny, nk) energy-tendency densities for one state."""
    w1, w2 = p.layer_weights
    F1, F2 = stretching_coefficients(p)
    weights = (w1, w2)
    norm = (g.nx * g.ny) ** 2
    psih = invert_pv(qh, p, g)
    u, v = velocities(psih, g)

    zetah = -g.k2 * psih
    stretchh = np.stack([F1 * (psih[1] - psih[0]), F2 * (psih[0] - psih[1])])

    def adv_spec(fh):
        fx = inverse_transform(1j * g.kx * fh, g)
        fy = inverse_transform(1j * g.ky * fh, g)
        return apply_dealias(forward_transform(u * fx + v * fy, g), g)

    jz = adv_spec(zetah)
    js = adv_spec(stretchh)

    ke = np.zeros(g.spectral_shape())
    keflux = np.zeros(g.spectral_shape())
    apeflux = np.zeros(g.spectral_shape())
    apegen = np.zeros(g.spectral_shape())
    for i, (w, U) in enumerate(zip(weights, (p.U1, p.U2))):
        ke += 0.5 * w * g.k2 * np.abs(psih[i]) ** 2 / norm
        keflux += w * np.real(np.conj(psih[i]) * jz[i]) / norm
        apeflux += w * np.real(np.conj(psih[i]) * js[i]) / norm
        apegen += w * U * np.real(1j * g.kx * np.conj(psih[i]) * qh[i]) / norm
    friction = -p.rek * w2 * g.k2 * np.abs(psih[1]) ** 2 / norm
    return {"KEspec": ke, "KEflux": keflux, "APEflux": apeflux,
            "APEgenspec": apegen, "KEfrictionspec": friction}


def energy_budget_spectra(snapshots, p: ModelParams, g: Grid) -> SpectralDiagnostics:
    """Ring-summed budget terms, time-averaged over the given snapshots."""
    if len(snapshots) < 1:
        raise ValueError("need at least one snapshot")
    acc: Optional[dict[str, np.ndarray]] = None
    for snap in snapshots:
        q = snap.q if isinstance(snap, Snapshot) else np.asarray(snap)
        if q.shape != (2,) + g.spatial_shape():
            raise MismatchError(f"snapshot shape {q.shape} does not match grid")
        dens = _budget_densities(forward_transform(q, g), p, g)
        if acc is None:
            acc = dens
        else:
            for k in acc:
                acc[k] += dens[k]
    spectra = {k: ring_sum(v / len(snapshots), g) for k, v in acc.items()}
    return SpectralDiagnostics(**spectra)


def budget_rate(qh, p: ModelParams, g: Grid) -> dict[str, float]:
    """Integrated (all-bins) energy tendency of each budget term [m^2/s^3]."""
    dens = _budget_densities(qh, p, g)
    return {
        name: float((dens[name] * g.sym_weights).sum())
        for name in ("KEflux", "APEflux", "APEgenspec", "KEfrictionspec")
    }


def spectral_distance(a: IsotropicSpectrum, b: IsotropicSpectrum,
                      eps: float = 1e-30, sign_penalty: float = 1.0) -> float:
    """Median log10 magnitude gap per bin; opposite signs add a penalty."""
    if a.k_centers.shape != b.k_centers.shape or np.any(a.k_centers != b.k_centers):
        raise MismatchError("spectra must share bins")
    gap = np.abs(np.log10(np.abs(a.values) + eps) - np.log10(np.abs(b.values) + eps))
    gap = gap + sign_penalty * (np.sign(a.values) * np.sign(b.values) < 0)
    return float(np.median(gap))


def reference_diagnostics(p_fine: ModelParams, factor: int, n_steps: int,
                          seed: int = 0, sample_every: int = 20,
                          spinup_frac: float = 0.5,
                          ) -> tuple[SpectralDiagnostics, ModelParams]:
    """Coarsened high-resolution run: the target curves for online eval."""
    g_fine = make_grid(p_fine)
    p_c = coarse_params(p_fine, factor)
    g_c = make_grid(p_c)
    qs: list[np.ndarray] = []
    _, snaps = simulate(p_fine, n_steps, sample_every=sample_every, seed=seed,
                        spinup_frac=spinup_frac)
    for s in snaps:
        qs.append(coarsen(s.q, factor, g_fine))
    return energy_budget_spectra(qs, p_c, g_c), p_c


def online_eval(closure, p_coarse: ModelParams,
                reference: Optional[SpectralDiagnostics], n_steps: int,
                seed: int = 0, sample_every: int = 20,
                spinup_frac: float = 0.5) -> OnlineReport:
    """Run the parameterized coarse model and compare spectra to a reference.

    A blow-up is reported as an outcome (``blew_up=True``, no distances),
    not raised: an exploding closure is a finding.
    """
    g = make_grid(p_coarse)
    st = Stepper(p_coarse, g)
    from .qgmodel import initial_condition

    s = initial_condition(p_coarse, g, seed)
    qs: list[np.ndarray] = []
    first_sample = int(np.ceil(n_steps * spinup_frac))
    steps_done = 0
    blew_up = False
    try:
        for n in range(1, n_steps + 1):
            s = st.step(s, closure)
            steps_done = n
            if n >= first_sample and (n - first_sample) % sample_every == 0:
                qs.append(inverse_transform(s.qh, g))
    except BlowUpError:
        blew_up = True
    if not qs:
        return OnlineReport(None, None, blew_up, steps_done)
    diags = energy_budget_spectra(qs, p_coarse, g)
    distances = None
    if reference is not None:
        distances = {
            name: spectral_distance(getattr(diags, name), getattr(reference, name))
            for name in DIAGNOSTIC_NAMES
        }
    return OnlineReport(diags, distances, blew_up, steps_done)


def speedup(t_hires: float, t: float) -> float:
    """Table-two arithmetic: wall-time ratio versus the high-res run."""
    if t_hires <= 0 or t <= 0:
        raise ValueError("times must be positive")
    return t_hires / t


def _timed_run(p: ModelParams, n_steps: int, closure, seed: int,
               warmup: int = 10) -> float:
    st = Stepper(p)
    from .qgmodel import initial_condition

    s = initial_condition(p, st.g, seed)
    for _ in range(warmup):
        s = st.step(s, closure)
    t0 = time.perf_counter()
    for _ in range(n_steps):
        s = st.step(s, closure)
    return time.perf_counter() - t0


def speed_benchmark(p_fine: ModelParams, factor: int,
                    closures: dict[str, Optional[Callable]], n_steps: int,
                    seed: int = 0) -> SpeedReport:
    """Wall-time comparison at equal simulated time, serially executed.

    The high-res run takes ``n_steps * factor`` steps of its smaller dt;
    the coarse runs take ``n_steps``.  ``n_steps`` must be >= 500 so that
    per-step cost dominates setup.
    """
    if n_steps < 500:
        raise ValueError("n_steps must be >= 500 for a stable timing")
    p_c = coarse_params(p_fine, factor)
    t_hires = _timed_run(p_fine, n_steps * factor, None, seed)
    t_lores = _timed_run(p_c, n_steps, None, seed)
    t_param = {
        name: _timed_run(p_c, n_steps, cl, seed) for name, cl in closures.items()
    }
    return SpeedReport(t_hires=t_hires, t_lores=t_lores, t_param=t_param,
                       n_steps=n_steps)


# Output emitters: CSV rows per metric/bin, and Fig-style SVG line panels.

def spectra_to_csv(curves: dict[str, SpectralDiagnostics], path: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "diagnostic", "k", "value"])
        for run, diags in curves.items():
            for name, spec in diags.as_dict().items():
                for k, v in zip(spec.k_centers, spec.values):
                    w.writerow([run, name, repr(float(k)), repr(float(v))])


def r2_to_csv(reports: list[R2Report], path: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tag", "n_samples", "r2_upper", "r2_lower"])
        for r in reports:
            w.writerow([r.tag, r.n_samples, repr(r.r2_upper), repr(r.r2_lower)])


def plot_spectra(curves: dict[str, SpectralDiagnostics], path: str,
                 title: str = ""):
    """Self-contained SVG: one log-x/symlog-y panel per diagnostic."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(DIAGNOSTIC_NAMES),
                             figsize=(4 * len(DIAGNOSTIC_NAMES), 3.4))
    for ax, name in zip(np.atleast_1d(axes), DIAGNOSTIC_NAMES):
        thresh = 0.0
        for run, diags in curves.items():
            spec = diags.as_dict()[name]
            ax.plot(spec.k_centers, spec.values, label=run, lw=1.2)
            finite = np.abs(spec.values[np.abs(spec.values) > 0])
            if finite.size:
                thresh = max(thresh, float(finite.min()))
        ax.set_xscale("log")
        ax.set_yscale("symlog", linthresh=max(thresh, 1e-30))
        ax.set_title(name)
        ax.set_xlabel("k [rad/m]")
        ax.grid(alpha=0.3)
    np.atleast_1d(axes)[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
