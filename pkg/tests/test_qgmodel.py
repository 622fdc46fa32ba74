import numpy as np
import pytest

from conftest import band_limited
from qgc import qgmodel as qm
from qgc.closures import ClosureOutput
from qgc.errors import BlowUpError, MismatchError
from qgc.spectral import apply_dealias, build_grid, forward_transform, inverse_transform


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            qm.eddy_params(nx=16, rd=-1.0)
        with pytest.raises(ValueError):
            qm.eddy_params(nx=16, delta=0.0)
        with pytest.raises(ValueError):
            qm.eddy_params(nx=16, dt=-5.0)
        with pytest.raises(ValueError):
            qm.eddy_params(nx=16, rek=-1e-7)

    def test_regime_values(self):
        e = qm.eddy_params()
        assert (e.beta, e.rd, e.delta, e.rek) == (1.5e-11, 15000.0, 0.25, 5.787e-7)
        assert e.U1 - e.U2 == pytest.approx(0.025)
        j = qm.jet_params()
        assert (j.delta, j.rek) == (0.1, 7e-8)

    def test_default_dt_scales_with_resolution(self):
        assert qm.default_dt(64) == 3600.0
        assert qm.default_dt(128) == 1800.0


class TestStretching:
    def test_symmetric_layers(self):
        p = qm.eddy_params(nx=16, delta=1.0, rd=1.0)
        F1, F2 = qm.stretching_coefficients(p)
        assert F1 == pytest.approx(0.5) and F2 == pytest.approx(0.5)

    def test_closed_formula(self):
        p = qm.eddy_params(nx=16, delta=0.25, rd=15000.0)
        F1, F2 = qm.stretching_coefficients(p)
        kd2 = 1 / 15000.0**2
        assert F1 == pytest.approx(kd2 / 1.25, rel=1e-14)
        assert F2 == pytest.approx(0.25 * kd2 / 1.25, rel=1e-14)
        assert F1 + F2 == pytest.approx(kd2, rel=1e-14)

    def test_barotropic_limit(self):
        p = qm.eddy_params(nx=16, rd=1e12)
        F1, F2 = qm.stretching_coefficients(p)
        assert F1 < 1e-23 and F2 < 1e-23


class TestInversion:
    def test_barotropic_single_mode(self):
        # F1=F2~0: q = -k^2 psi
        p = qm.eddy_params(nx=16, Lx=2 * np.pi, Ly=2 * np.pi, rd=1e12)
        g = qm.make_grid(p)
        qh = np.zeros((2,) + g.spectral_shape(), complex)
        qh[0, 0, 1] = 1.0  # k^2 = 1
        psih = qm.invert_pv(qh, p, g)
        assert np.isclose(psih[0, 0, 1], -1.0)

    def test_gauge_zero_mean_mode(self, rng):
        p = qm.eddy_params(nx=16)
        g = qm.make_grid(p)
        qh = forward_transform(rng.standard_normal((2, 16, 16)), g)
        psih = qm.invert_pv(qh, p, g)
        assert psih[0, 0, 0] == 0 and psih[1, 0, 0] == 0

    def test_two_by_two_against_linear_solver(self):
        p = qm.eddy_params(nx=16, Lx=2 * np.pi, Ly=2 * np.pi, rd=1.0, delta=1.0)
        F1, F2 = qm.stretching_coefficients(p)  # 0.5, 0.5
        g = qm.make_grid(p)
        qh = np.zeros((2,) + g.spectral_shape(), complex)
        qh[0, 0, 1] = 2.0 - 1.0j
        qh[1, 0, 1] = -0.5 + 0.25j
        psih = qm.invert_pv(qh, p, g)
        M = np.array([[-(1 + F1), F1], [F2, -(1 + F2)]])
        expected = np.linalg.solve(M, qh[:, 0, 1])
        assert np.allclose(psih[:, 0, 1], expected, rtol=1e-12)

    def test_roundtrip_all_modes(self, rng):
        p = qm.eddy_params(nx=32)
        g = qm.make_grid(p)
        qh = forward_transform(rng.standard_normal((2, 32, 32)), g)
        qh[:, 0, 0] = 0
        back = qm.apply_stretching(qm.invert_pv(qh, p, g), p, g)
        assert np.abs(back - qh).max() <= 1e-12 * np.abs(qh).max()


class TestVelocities:
    @pytest.fixture
    def trig_grid(self):
        return build_grid(16, 16, 2 * np.pi, 2 * np.pi)

    def test_psi_sin_y(self, trig_grid):
        x = np.arange(16) * 2 * np.pi / 16
        X, Y = np.meshgrid(x, x, indexing="xy")
        psih = forward_transform(np.stack([np.sin(Y), np.zeros_like(Y)]), trig_grid)
        u, v = qm.velocities(psih, trig_grid)
        assert np.abs(u[0] + np.cos(Y)).max() < 1e-12
        assert np.abs(v[0]).max() < 1e-12

    def test_psi_sin_x(self, trig_grid):
        x = np.arange(16) * 2 * np.pi / 16
        X, Y = np.meshgrid(x, x, indexing="xy")
        psih = forward_transform(np.stack([np.sin(X), np.zeros_like(X)]), trig_grid)
        u, v = qm.velocities(psih, trig_grid)
        assert np.abs(v[0] - np.cos(X)).max() < 1e-12
        assert np.abs(u[0]).max() < 1e-12

    def test_constant_psi(self, trig_grid):
        psih = forward_transform(np.full((2, 16, 16), 7.0), trig_grid)
        u, v = qm.velocities(psih, trig_grid)
        assert np.abs(u).max() == 0 and np.abs(v).max() == 0


class TestAdvection:
    def test_constant_q(self, rng):
        p = qm.eddy_params(nx=16)
        g = qm.make_grid(p)
        psih = forward_transform(band_limited(rng, g), g)
        qh = forward_transform(np.full((2, 16, 16), 2.0), g)
        tend = qm.advection_tendency(psih, qh, g)
        assert np.abs(tend).max() < 1e-20

    def test_parallel_gradients(self):
        # psi and q functions of x only: u = 0 and v q_y = 0
        g = build_grid(16, 16, 2 * np.pi, 2 * np.pi)
        x = np.arange(16) * 2 * np.pi / 16
        X, _ = np.meshgrid(x, x, indexing="xy")
        psih = forward_transform(np.stack([np.sin(X), np.cos(X)]), g)
        qh = forward_transform(np.stack([np.cos(2 * X), np.sin(2 * X)]), g)
        tend = inverse_transform(qm.advection_tendency(psih, qh, g), g)
        assert np.abs(tend).max() < 1e-15

    def test_refined_grid_oracle(self, rng):
        """Dealiased product equals exact quadratic evaluation on a 2x grid."""
        L = 1e6
        p = qm.eddy_params(nx=8, Lx=L, Ly=L)
        g = qm.make_grid(p)
        F1, F2 = qm.stretching_coefficients(p)
        q = rng.standard_normal((2, 8, 8))
        q -= q.mean(axis=(1, 2), keepdims=True)
        qh = apply_dealias(forward_transform(q, g), g)
        mine = inverse_transform(
            qm.advection_tendency(qm.invert_pv(qh, p, g), qh, g), g
        )

        # oracle: full complex fft2, zero-pad to 16^2, multiply, truncate
        def wavenumbers(n):
            k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
            return k[None, :], k[:, None]

        qf8 = np.fft.fft2(inverse_transform(qh, g))
        big = np.zeros((2, 16, 16), complex)
        big[:, 4:12, 4:12] = np.fft.fftshift(qf8, axes=(-2, -1))
        qf16 = np.fft.ifftshift(big, axes=(-2, -1)) * 4.0
        kx, ky = wavenumbers(16)
        k2 = kx**2 + ky**2
        psi16 = np.zeros_like(qf16)
        for iy in range(16):
            for ix in range(16):
                if k2[iy, ix] == 0:
                    continue
                M = np.array([[-(k2[iy, ix] + F1), F1], [F2, -(k2[iy, ix] + F2)]])
                psi16[:, iy, ix] = np.linalg.solve(M, qf16[:, iy, ix])
        u16 = np.fft.ifft2(-1j * ky * psi16).real
        v16 = np.fft.ifft2(1j * kx * psi16).real
        qx16 = np.fft.ifft2(1j * kx * qf16).real
        qy16 = np.fft.ifft2(1j * ky * qf16).real
        prod16 = np.fft.fft2(u16 * qx16 + v16 * qy16)
        sh = np.fft.fftshift(prod16, axes=(-2, -1))
        out8 = np.fft.ifftshift(sh[:, 4:12, 4:12], axes=(-2, -1)) / 4.0
        kx8, ky8 = wavenumbers(8)
        cutoff = (2 / 3) * np.pi * 8 / L + 1e-12
        keep8 = (np.abs(kx8) <= cutoff) & (np.abs(ky8) <= cutoff)
        oracle = np.fft.ifft2(-out8 * keep8).real
        assert np.abs(mine - oracle).max() <= 1e-10 * np.abs(oracle).max()


class TestTendency:
    def test_rest_state(self):
        p = qm.eddy_params(nx=16, U1=0.0, U2=0.0)
        g = qm.make_grid(p)
        s = qm.ModelState(t=0, tc=0, qh=np.zeros((2,) + g.spectral_shape(), complex))
        tend = qm.full_tendency(s, p)
        assert np.abs(tend).max() == 0.0

    def test_friction_isolated(self, rng):
        # pure layer-2 mode, no beta/shear: tendency = -rek lap(psi2) only
        p = qm.eddy_params(nx=16, beta=0.0, U1=0.0, U2=0.0, rek=3e-6, ssd_on=False)
        g = qm.make_grid(p)
        qh = np.zeros((2,) + g.spectral_shape(), complex)
        qh[1, 2, 3] = 1.5 - 0.5j
        st = qm.Stepper(p, g)
        tend = st.tendency(qh)
        psih = qm.invert_pv(qh, p, g)
        expected = np.zeros_like(qh)
        expected[1] = p.rek * g.k2 * psih[1]
        # advection of a single mode with its own streamfunction vanishes
        assert np.abs(tend - expected).max() <= 1e-12 * np.abs(expected).max()

    def test_closure_additivity(self, rng):
        p = qm.eddy_params(nx=16)
        g = qm.make_grid(p)
        qh = forward_transform(band_limited(rng, g, scale=1e-6), g)
        s = qm.ModelState(t=0, tc=0, qh=qh)
        const = np.full((2, 16, 16), 3e-12)

        def closure(u, v, q, gg, pp):
            return ClosureOutput(Sq=const)

        diff = qm.full_tendency(s, p, closure) - qm.full_tendency(s, p)
        assert np.abs(diff - const).max() < 1e-24

    def test_closure_shape_mismatch(self, rng):
        p = qm.eddy_params(nx=16)
        g = qm.make_grid(p)
        s = qm.ModelState(t=0, tc=0, qh=np.zeros((2,) + g.spectral_shape(), complex))

        def closure(u, v, q, gg, pp):
            return ClosureOutput(Sq=np.zeros((2, 8, 8)))

        with pytest.raises(MismatchError):
            qm.full_tendency(s, p, closure)


class TestStep:
    def test_zero_tendency_advances_time_only(self):
        p = qm.eddy_params(nx=16, U1=0.0, U2=0.0, ssd_on=False)
        g = qm.make_grid(p)
        s = qm.ModelState(t=5.0, tc=0, qh=np.zeros((2,) + g.spectral_shape(), complex))
        s2 = qm.step(s, p)
        assert s2.t == 5.0 + p.dt and s2.tc == 1
        assert np.abs(s2.qh).max() == 0.0

    def test_nan_guard(self):
        p = qm.eddy_params(nx=16)
        g = qm.make_grid(p)
        qh = np.zeros((2,) + g.spectral_shape(), complex)
        qh[0, 1, 1] = np.nan
        with pytest.raises(BlowUpError) as ei:
            qm.step(qm.ModelState(t=0, tc=0, qh=qh), p)
        assert ei.value.step == 0

    def test_ab3_third_order_convergence(self):
        """Linear decay via a stub tendency: halving dt cuts error ~8x."""

        class Stub(qm.Stepper):
            def tendency(self, qh, closure=None):
                return -qh  # lambda = 1

        lamdt, n = 0.18, 300
        errs = []
        for scale in (1, 2):
            p = qm.eddy_params(nx=8, dt=lamdt / scale, ssd_on=False)
            st = Stub(p)
            s = qm.ModelState(
                t=0.0, tc=0, qh=np.ones((2,) + st.g.spectral_shape(), complex)
            )
            for _ in range(n * scale):
                s = st.step(s)
            exact = np.exp(-lamdt * n)
            errs.append(abs(s.qh[0, 0, 0].real - exact) / exact)
        ratio = errs[0] / errs[1]
        assert 7.0 <= ratio <= 9.0


class TestSimulate:
    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            qm.simulate(qm.eddy_params(nx=16), 0)

    def test_pure_dissipation_decays(self, rng):
        p = qm.eddy_params(nx=32, beta=0.0, U1=0.0, U2=0.0, rek=1e-5, ssd_on=True)
        g = qm.make_grid(p)
        st = qm.Stepper(p, g)
        s = qm.initial_condition(p, g, seed=3, amplitude=1e-6)
        energies = [qm.total_energy(s.qh, p, g)]
        for _ in range(200):
            s = st.step(s)
            energies.append(qm.total_energy(s.qh, p, g))
        diffs = np.diff(energies)
        assert np.all(diffs <= 0)

    def test_eddy_smoke_run(self):
        p = qm.eddy_params(nx=64)
        state, snaps = qm.simulate(p, 2000, sample_every=500, seed=0)
        g = qm.make_grid(p)
        assert np.all(np.isfinite(state.qh.view(float)))
        assert qm.total_energy(state.qh, p, g) > 0
        assert len(snaps) >= 2

    def test_determinism(self):
        p = qm.eddy_params(nx=32)
        s1, _ = qm.simulate(p, 50, seed=11)
        s2, _ = qm.simulate(p, 50, seed=11)
        assert np.array_equal(s1.qh, s2.qh)

    def test_initial_condition_properties(self):
        p = qm.eddy_params(nx=64)
        g = qm.make_grid(p)
        s = qm.initial_condition(p, g, seed=0, amplitude=1e-7)
        q = inverse_transform(s.qh, g)
        assert np.allclose(np.sqrt((q**2).mean(axis=(1, 2))), 1e-7, rtol=1e-12)
        assert abs(q.mean()) < 1e-20
        # band limited to the lowest third of wavenumbers
        kx_max = np.pi * g.nx / g.Lx
        outside = (np.abs(g.kx) > kx_max / 3) | (np.abs(g.ky) > kx_max / 3)
        assert np.abs(s.qh[:, outside]).max() < 1e-12


class TestCfl:
    def test_zero_flow(self):
        p = qm.eddy_params(nx=16, U1=0.0, U2=0.0)
        g = qm.make_grid(p)
        s = qm.ModelState(t=0, tc=0, qh=np.zeros((2,) + g.spectral_shape(), complex))
        assert qm.cfl_number(s, p, g) == 0.0

    def test_background_flow_counts(self):
        p = qm.eddy_params(nx=16, U1=1.0, U2=0.0, dt=qm.make_grid(qm.eddy_params(nx=16)).dx)
        g = qm.make_grid(p)
        s = qm.ModelState(t=0, tc=0, qh=np.zeros((2,) + g.spectral_shape(), complex))
        assert qm.cfl_number(s, p, g) >= 1.0

    def test_developed_state_logged(self):
        p = qm.eddy_params(nx=32)
        s, _ = qm.simulate(p, 200, seed=0)
        c = qm.cfl_number(s, p)
        assert 0 <= c < 0.5


class TestConservation:
    def test_inviscid_energy_enstrophy(self, rng):
        """rek=0, SSD off, no imposed shear: E and Z drift < 1e-4 / 500 steps."""
        p = qm.eddy_params(nx=64, rek=0.0, ssd_on=False, U1=0.0, U2=0.0)
        g = qm.make_grid(p)
        st = qm.Stepper(p, g)
        s = _shaped_state(p, g, seed=1, target_cfl=0.05)
        assert qm.cfl_number(s, p, g) <= 0.2
        E0 = qm.total_energy(s.qh, p, g)
        Z0 = qm.total_enstrophy(s.qh, p, g)
        for _ in range(500):
            s = st.step(s)
        assert abs(qm.total_energy(s.qh, p, g) - E0) / E0 < 1e-4
        assert abs(qm.total_enstrophy(s.qh, p, g) - Z0) / Z0 < 1e-4

    def test_common_background_flow_conserves(self, rng):
        # barotropic U: mean advection does no work on perturbations
        p = qm.eddy_params(nx=32, rek=0.0, ssd_on=False, U1=0.015, U2=0.015)
        g = qm.make_grid(p)
        st = qm.Stepper(p, g)
        s = _shaped_state(p, g, seed=2, target_cfl=0.04)
        E0 = qm.total_energy(s.qh, p, g)
        for _ in range(300):
            s = st.step(s)
        assert abs(qm.total_energy(s.qh, p, g) - E0) / E0 < 1e-4

    def test_layer_mean_stays_zero(self):
        p = qm.eddy_params(nx=32)
        g = qm.make_grid(p)
        s, _ = qm.simulate(p, 300, seed=5)
        q = inverse_transform(s.qh, g)
        assert np.abs(q.mean(axis=(1, 2))).max() < 1e-10


def _shaped_state(p, g, seed, target_cfl, k0_frac=0.15, slope=2.0):
    """Developed-spectrum random state rescaled to a target CFL."""
    rng = np.random.Generator(np.random.PCG64(seed))
    nh = forward_transform(rng.standard_normal((2, g.ny, g.nx)), g)
    kmag = np.sqrt(g.k2)
    nh *= g.dealias_mask / (1.0 + (kmag / (k0_frac * kmag.max())) ** slope)
    nh[:, 0, 0] = 0
    s = qm.ModelState(t=0.0, tc=0, qh=nh)
    u, v = qm.velocities(qm.invert_pv(nh, p, g), g)
    umax = max(np.abs(u).max(), np.abs(v).max())
    s.qh *= target_cfl / (2 * umax * p.dt / g.dx)
    return s
