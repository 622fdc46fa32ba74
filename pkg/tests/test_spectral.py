import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import band_limited
from qgc.errors import MismatchError
from qgc.spectral import (
    SSD_A,
    SSD_CUTOFF,
    apply_dealias,
    apply_ssd_filter,
    build_grid,
    forward_transform,
    inverse_transform,
    ring_sum,
    spectral_gradient,
    spectral_laplacian,
    spectral_mean_square,
    ssd_factor,
)


class TestBuildGrid:
    def test_unit_spacing_wavenumbers(self):
        g = build_grid(8, 8, 2 * np.pi, 2 * np.pi)
        assert np.allclose(g.kx.ravel(), [0, 1, 2, 3, 4])
        assert np.allclose(g.ky.ravel(), [0, 1, 2, 3, -4, -3, -2, -1])

    def test_kx_spacing_definition(self):
        g = build_grid(64, 64, 1e6, 1e6)
        assert np.isclose(g.kx.ravel()[1], 2 * np.pi * 1e-6)

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            build_grid(7, 8, 1.0, 1.0)

    def test_tiny_size_rejected(self):
        with pytest.raises(ValueError):
            build_grid(4, 4, 1.0, 1.0)

    def test_negative_length_rejected(self):
        with pytest.raises(ValueError):
            build_grid(8, 8, -1.0, 1.0)

    def test_k2_properties(self):
        g = build_grid(16, 16, 1.0, 2.0)
        assert g.k2[0, 0] == 0.0
        assert np.all(g.k2 >= 0)

    def test_dealias_mask_two_thirds(self):
        g = build_grid(8, 8, 2 * np.pi, 2 * np.pi)
        # axis Nyquist 4; cutoff 8/3: keep |k| <= 2
        assert list(g.dealias_mask[0]) == [True, True, True, False, False]
        assert g.dealias_mask[3, 0] == False  # ky=3 > 8/3
        assert g.dealias_mask[-2, 0] == True  # ky=-2

    def test_ring_bins_on_dk_centers(self):
        g = build_grid(64, 64, 1e6, 1e6)
        assert np.isclose(g.ring_centers[0], g.dk)
        assert np.allclose(np.diff(g.ring_centers), g.dk)
        # bins cover the spectral corner so ring totals stay exact
        kmax = np.sqrt(g.kx.max() ** 2 + np.abs(g.ky).max() ** 2)
        assert g.ring_edges[-1] >= kmax


class TestTransforms:
    def test_constant_field_dc_only(self, grid16):
        f = np.full((2, 16, 16), 3.25)
        F = forward_transform(f, grid16)
        assert np.allclose(F[:, 0, 0], 3.25 * 16 * 16)
        F[:, 0, 0] = 0
        assert np.abs(F).max() < 1e-10

    def test_single_cosine_mode(self):
        g = build_grid(16, 16, 2 * np.pi, 2 * np.pi)
        x = np.arange(16) * 2 * np.pi / 16
        f = np.cos(x)[None, None, :] * np.ones((1, 16, 1))
        F = forward_transform(f, g)
        nz = np.argwhere(np.abs(F[0]) > 1e-9)
        assert nz.tolist() == [[0, 1]]  # one stored coefficient

    def test_roundtrip_random(self, rng, grid16):
        f = rng.standard_normal((2, 16, 16))
        back = inverse_transform(forward_transform(f, grid16), grid16)
        assert np.abs(back - f).max() < 1e-12 * np.abs(f).max()

    def test_shape_mismatch_rejected(self, rng, grid16):
        with pytest.raises(MismatchError):
            forward_transform(rng.standard_normal((2, 8, 8)), grid16)
        with pytest.raises(MismatchError):
            inverse_transform(np.zeros((2, 8, 5), complex), grid16)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_parseval_property(self, seed):
        g = build_grid(16, 16, 1.0, 1.0)
        f = np.random.default_rng(seed).standard_normal((16, 16))
        ms = spectral_mean_square(forward_transform(f, g), g)
        assert abs(ms - (f**2).mean()) <= 1e-10 * (f**2).mean()


class TestDerivatives:
    def test_sin_gradient(self):
        g = build_grid(16, 16, 2 * np.pi, 2 * np.pi)
        x = np.arange(16) * 2 * np.pi / 16
        X, Y = np.meshgrid(x, x, indexing="xy")
        F = forward_transform(np.sin(X)[None], g)
        dx = inverse_transform(spectral_gradient(F, g, "x"), g)
        assert np.abs(dx - np.cos(X)).max() < 1e-10

    def test_constant_zero_gradient(self, grid16):
        F = forward_transform(np.ones((1, 16, 16)), grid16)
        for ax in ("x", "y"):
            assert np.abs(spectral_gradient(F, grid16, ax)).max() == 0.0

    def test_laplacian_single_modes(self):
        g = build_grid(16, 16, 2 * np.pi, 2 * np.pi)
        x = np.arange(16) * 2 * np.pi / 16
        X, Y = np.meshgrid(x, x, indexing="xy")
        f = np.sin(X) + np.sin(Y)
        lap = inverse_transform(
            spectral_laplacian(forward_transform(f[None], g), g), g
        )
        assert np.abs(lap + f).max() < 1e-10

    def test_band_limited_poly_exact(self, rng):
        g = build_grid(32, 32, 2.0, 3.0)
        x = np.arange(32) * 2.0 / 32
        y = np.arange(32) * 3.0 / 32
        X, Y = np.meshgrid(x, y, indexing="xy")
        kx = 2 * np.pi / 2.0 * 3
        ky = 2 * np.pi / 3.0 * 5
        f = np.cos(kx * X) * np.sin(ky * Y)
        want = -kx * np.sin(kx * X) * np.sin(ky * Y)
        got = inverse_transform(
            spectral_gradient(forward_transform(f[None], g), g, "x"), g
        )
        assert np.abs(got - want).max() < 1e-10 * np.abs(want).max()


class TestDealias:
    def test_nyquist_zeroed(self, grid16):
        F = np.zeros((1, 16, 9), complex)
        F[0, 8, 0] = 1.0  # ky Nyquist
        F[0, 0, 8] = 1.0  # kx Nyquist
        out = apply_dealias(F, grid16)
        assert np.abs(out).max() == 0.0

    def test_low_mode_unchanged(self):
        g = build_grid(64, 64, 1e6, 1e6)
        F = np.zeros((1, 64, 33), complex)
        F[0, 1, 1] = 1 + 2j
        assert np.array_equal(apply_dealias(F, g), F)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_idempotent(self, seed):
        g = build_grid(16, 16, 1.0, 1.0)
        r = np.random.default_rng(seed)
        F = r.standard_normal((16, 9)) + 1j * r.standard_normal((16, 9))
        once = apply_dealias(F, g)
        assert np.array_equal(apply_dealias(once, g), once)


class TestSsdFilter:
    def test_below_cutoff_unchanged(self, grid32):
        fac = ssd_factor(grid32)
        kstar = np.sqrt((grid32.kx * grid32.dx) ** 2 + (grid32.ky * grid32.dy) ** 2)
        assert np.all(fac[kstar <= SSD_CUTOFF] == 1.0)

    def test_contraction(self, grid32):
        # the exponential underflows to 0.0 at extreme corner wavenumbers,
        # which still never amplifies
        fac = ssd_factor(grid32)
        assert np.all(fac >= 0) and np.all(fac <= 1.0)
        kstar = np.sqrt((grid32.kx * grid32.dx) ** 2 + (grid32.ky * grid32.dy) ** 2)
        assert np.all(fac[kstar <= 0.8 * np.pi] > 0)

    def test_axis_max_value(self):
        g = build_grid(64, 64, 1e6, 1e6)
        # kx at axis max: kstar = pi
        expected = np.exp(-SSD_A * (np.pi - SSD_CUTOFF) ** 4)
        assert np.isclose(ssd_factor(g)[0, -1], expected, rtol=1e-12)

    def test_apply_matches_factor(self, rng, grid32):
        F = rng.standard_normal((2, 32, 17)) + 0j
        assert np.allclose(apply_ssd_filter(F, grid32), F * ssd_factor(grid32))


class TestRingSum:
    def test_single_coefficient_single_ring(self):
        g = build_grid(64, 64, 1e6, 1e6)
        dens = np.zeros(g.spectral_shape())
        dens[3, 0] = 1.0  # |k| = 3 dk
        spec = ring_sum(dens, g)
        nz = np.nonzero(spec.values)[0]
        assert list(nz) == [2]
        assert np.isclose(spec.k_centers[2], 3 * g.dk)

    def test_zero_field(self, grid32):
        spec = ring_sum(np.zeros(grid32.spectral_shape()), grid32)
        assert np.all(spec.values == 0)

    def test_total_preserved(self, rng, grid32):
        dens = np.abs(rng.standard_normal(grid32.spectral_shape()))
        dens[0, 0] = 0.0  # ring bins exclude the mean mode
        spec = ring_sum(dens, grid32)
        total = (dens * grid32.sym_weights).sum()
        assert abs(spec.values.sum() - total) <= 1e-10 * total

    def test_complex_density_rejected(self, grid32):
        with pytest.raises(MismatchError):
            ring_sum(np.zeros(grid32.spectral_shape(), complex), grid32)

    def test_parseval_through_rings(self, rng, grid32):
        f = band_limited(rng, grid32, layers=1)[0]
        F = forward_transform(f, grid32)
        dens = np.abs(F) ** 2 / (32 * 32) ** 2
        spec = ring_sum(dens, grid32)
        assert np.isclose(spec.values.sum(), (f**2).mean(), rtol=1e-10)
