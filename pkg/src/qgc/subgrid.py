"""Coarse-graining, ground-truth subgrid forcing, and the QGDS dataset file.

The filter is a sharp spectral truncation: a fine field is restricted to the
modes a ``factor``-times-smaller grid can represent and then sampled on that
grid.  The subgrid forcing is the advection mismatch

    S = filtered(fine advection tendency) - advection tendency of the
        filtered fields on the coarse grid,

so adding ``S`` to the coarse model's tendency reproduces the filtered fine
tendency.  The linear terms (mean flow, beta, drag) commute with the filter
and cancel exactly.

QGDS file layout (little-endian): magic ``QGDS``; u32 version = 1; u32
n_samples; u32 H; u32 n_in = 6; u32 n_out = 2; u32 regime tag; u64 seed;
then one f32 block per sample (inputs ``u1 v1 q1 u2 v2 q2`` then targets
``sq1 sq2``, row-major); trailing u32 CRC32 of the sample block.  Channel
normalization statistics go to a ``<path>.norm`` sidecar with one
``channel mean std`` line per channel.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .closures import INPUT_CHANNELS, OUTPUT_CHANNELS, NormStats
from .errors import (
    BadMagicError,
    ChecksumError,
    MismatchError,
    TruncatedError,
    VersionError,
)
from .qgmodel import (
    ModelParams,
    ModelState,
    REGIMES,
    Snapshot,
    advection_tendency,
    invert_pv,
    make_grid,
    simulate,
    velocities,
)
from .spectral import Grid, RealField, forward_transform, inverse_transform

MAGIC = b"QGDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIQ")
REGIME_TAGS = {"eddy": 0, "jet": 1, "mixed": 2}
_TAG_NAMES = {v: k for k, v in REGIME_TAGS.items()}

DEFAULT_FINE_NX = 128
DEFAULT_SAMPLE_INTERVAL = 100  # coarse-model steps between samples


def coarsen(f: RealField, factor: int, g_fine: Grid) -> RealField:
    """Sharp spectral truncation of a fine field onto an nx/factor grid.

    Retains modes strictly below the coarse Nyquist (a +/-Nyquist pair is
    not uniquely representable after subsampling, and keeping it would break
    commutation with spectral derivatives), then samples the band-limited
    interpolant on the coarse points.  ``factor=1`` is the exact identity.
    """
    if factor < 1 or g_fine.nx % factor or g_fine.ny % factor:
        raise MismatchError(
            f"factor {factor} must divide grid {g_fine.nx}x{g_fine.ny}"
        )
    if factor == 1:
        return f.copy()
    nxc, nyc = g_fine.nx // factor, g_fine.ny // factor
    fh = forward_transform(f, g_fine)
    keep = (g_fine.kx < (2 * np.pi / g_fine.Lx) * (nxc // 2) - 1e-12) & (
        np.abs(g_fine.ky) < (2 * np.pi / g_fine.Ly) * (nyc // 2) - 1e-12
    )
    return inverse_transform(fh * keep, g_fine)[..., ::factor, ::factor]


def coarse_params(p: ModelParams, factor: int) -> ModelParams:
    return replace(p, nx=p.nx // factor, ny=p.ny // factor, dt=p.dt * factor)


def subgrid_forcing(hi: ModelState, p: ModelParams, factor: int) -> RealField:
    """Ground-truth advection mismatch on the coarse grid [1/s^2]."""
    g_f = make_grid(p)
    psih = invert_pv(hi.qh, p, g_f)
    adv_fine = inverse_transform(advection_tendency(psih, hi.qh, g_f), g_f)
    adv_filtered = coarsen(adv_fine, factor, g_f)

    q_coarse = coarsen(inverse_transform(hi.qh, g_f), factor, g_f)
    p_c = coarse_params(p, factor)
    g_c = make_grid(p_c)
    qh_c = forward_transform(q_coarse, g_c)
    adv_coarse = inverse_transform(
        advection_tendency(invert_pv(qh_c, p_c, g_c), qh_c, g_c), g_c
    )
    return adv_filtered - adv_coarse


@dataclass(frozen=True)
class Sample:
    """One training pair: coarse resolved fields and their missing forcing."""

    inputs: np.ndarray  # (6, H, H) float32: u1 v1 q1 u2 v2 q2
    target: np.ndarray  # (2, H, H) float32: sq1 sq2
    sim_id: int = -1
    t: float = float("nan")


@dataclass
class Dataset:
    """In-memory dataset: stacked samples plus provenance and statistics."""

    inputs: np.ndarray  # (N, 6, H, H) float32
    targets: np.ndarray  # (N, 2, H, H) float32
    regime: str
    seed: int
    stats: Optional[NormStats] = None

    def __post_init__(self):
        if self.inputs.ndim != 4 or self.inputs.shape[1] != 6:
            raise MismatchError(f"inputs shape {self.inputs.shape} != (N, 6, H, H)")
        if self.targets.shape != (len(self.inputs), 2) + self.inputs.shape[2:]:
            raise MismatchError("targets do not match inputs")
        if self.regime not in REGIME_TAGS:
            raise MismatchError(f"unknown regime {self.regime!r}")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def resolution(self) -> int:
        return self.inputs.shape[-1]

    def sample(self, i: int) -> Sample:
        return Sample(inputs=self.inputs[i], target=self.targets[i])


def compute_norm_stats(inputs: np.ndarray, targets: np.ndarray) -> NormStats:
    return NormStats(
        in_mean=inputs.astype(np.float64).mean(axis=(0, 2, 3)),
        in_std=inputs.astype(np.float64).std(axis=(0, 2, 3)),
        out_mean=targets.astype(np.float64).mean(axis=(0, 2, 3)),
        out_std=targets.astype(np.float64).std(axis=(0, 2, 3)),
    )


def _sample_from_snapshot(snap: Snapshot, p: ModelParams, factor: int,
                          g_f: Grid, sim_id: int) -> Sample:
    qh = forward_transform(snap.q, g_f)
    u, v = velocities(invert_pv(qh, p, g_f), g_f)
    state = ModelState(t=snap.t, tc=snap.step, qh=qh)
    target = subgrid_forcing(state, p, factor)
    uc = coarsen(u, factor, g_f)
    vc = coarsen(v, factor, g_f)
    qc = coarsen(snap.q, factor, g_f)
    inputs = np.stack([uc[0], vc[0], qc[0], uc[1], vc[1], qc[1]])
    return Sample(inputs=inputs.astype(np.float32),
                  target=target.astype(np.float32), sim_id=sim_id, t=snap.t)


def _run_one_sim(regime: str, sim_id: int, sim_seed: int, n_per_sim: int,
                 factor: int, nx_fine: int, interval_coarse: int) -> list[Sample]:
    p = REGIMES[regime](nx=nx_fine)
    g_f = make_grid(p)
    interval_fine = interval_coarse * factor
    n_steps = int(np.ceil(n_per_sim * interval_fine / 0.75)) + interval_fine
    _, snaps = simulate(p, n_steps, sample_every=interval_fine, seed=sim_seed)
    if len(snaps) < n_per_sim:
        raise RuntimeError(f"sim {sim_id} produced {len(snaps)} < {n_per_sim} samples")
    return [
        _sample_from_snapshot(s, p, factor, g_f, sim_id)
        for s in snaps[:n_per_sim]
    ]


def generate_dataset(
    regime: str,
    n_sims: int,
    n_samples: int,
    factor: int,
    seed: int,
    nx_fine: int = DEFAULT_FINE_NX,
    sample_interval: int = DEFAULT_SAMPLE_INTERVAL,
    workers: int = 1,
) -> Dataset:
    """Run seeded fine simulations and extract (inputs, forcing) pairs.

    Each simulation gets a child seed spawned from ``seed``; the assembled
    samples are shuffled deterministically, so the result is a pure function
    of the arguments regardless of ``workers``.
    """
    if regime not in REGIME_TAGS:
        raise ValueError(f"regime must be one of {sorted(REGIME_TAGS)}")
    if n_sims < 1 or n_samples % n_sims:
        raise ValueError("n_samples must be divisible by n_sims")
    n_per_sim = n_samples // n_sims
    child_seeds = [
        int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(seed).spawn(n_sims)
    ]
    sim_regimes = [
        ("eddy", "jet")[i % 2] if regime == "mixed" else regime
        for i in range(n_sims)
    ]

    def job(i: int) -> list[Sample]:
        return _run_one_sim(sim_regimes[i], i, child_seeds[i], n_per_sim,
                            factor, nx_fine, sample_interval)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sim = list(pool.map(job, range(n_sims)))
    else:
        per_sim = [job(i) for i in range(n_sims)]

    samples = [s for sim in per_sim for s in sim]
    inputs = np.stack([s.inputs for s in samples])
    targets = np.stack([s.target for s in samples])
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(samples))
    inputs, targets = inputs[perm], targets[perm]
    return Dataset(inputs=inputs, targets=targets, regime=regime, seed=seed,
                   stats=compute_norm_stats(inputs, targets))


def atomic_write(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_norm_stats(stats: NormStats, path: str):
    lines = []
    for name, m, s in zip(INPUT_CHANNELS, stats.in_mean, stats.in_std):
        lines.append(f"{name} {float(m)!r} {float(s)!r}")
    for name, m, s in zip(OUTPUT_CHANNELS, stats.out_mean, stats.out_std):
        lines.append(f"{name} {float(m)!r} {float(s)!r}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_norm_stats(path: str) -> NormStats:
    rows = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            name, mean, std = line.split()
            rows[name] = (float(mean), float(std))
    try:
        in_pairs = [rows[c] for c in INPUT_CHANNELS]
        out_pairs = [rows[c] for c in OUTPUT_CHANNELS]
    except KeyError as e:
        raise MismatchError(f"norm sidecar missing channel {e}") from None
    return NormStats(
        in_mean=np.array([p[0] for p in in_pairs]),
        in_std=np.array([p[1] for p in in_pairs]),
        out_mean=np.array([p[0] for p in out_pairs]),
        out_std=np.array([p[1] for p in out_pairs]),
    )


def dataset_bytes(d: Dataset) -> bytes:
    n = len(d)
    header = _HEADER.pack(MAGIC, VERSION, n, d.resolution, 6, 2,
                          REGIME_TAGS[d.regime], d.seed)
    flat = np.concatenate(
        [d.inputs.reshape(n, -1), d.targets.reshape(n, -1)], axis=1
    ).astype("<f4")
    payload = flat.tobytes()
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def write_dataset(d: Dataset, path: str):
    """Write the QGDS file and its ``.norm`` sidecar atomically."""
    atomic_write(path, dataset_bytes(d))
    stats = d.stats if d.stats is not None else compute_norm_stats(d.inputs, d.targets)
    write_norm_stats(stats, path + ".norm")


def read_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than header")
    magic, version, n, h, n_in, n_out, tag, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if n_in != 6 or n_out != 2 or tag not in _TAG_NAMES:
        raise MismatchError(f"{path}: unsupported channel layout or regime tag")
    payload_len = n * (n_in + n_out) * h * h * 4
    expected = _HEADER.size + payload_len + 4
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, got {len(raw)}")
    payload = raw[_HEADER.size:_HEADER.size + payload_len]
    (crc,) = struct.unpack_from("<I", raw, _HEADER.size + payload_len)
    if crc != zlib.crc32(payload):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4").reshape(n, (n_in + n_out) * h * h)
    inputs = flat[:, : n_in * h * h].reshape(n, n_in, h, h).copy()
    targets = flat[:, n_in * h * h:].reshape(n, n_out, h, h).copy()
    stats = None
    if os.path.exists(path + ".norm"):
        stats = read_norm_stats(path + ".norm")
    return Dataset(inputs=inputs, targets=targets, regime=_TAG_NAMES[tag],
                   seed=seed, stats=stats)
