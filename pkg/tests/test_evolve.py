import numpy as np
import pytest

from wavegauge import data, diagnostics, evolve
from wavegauge.frame import MINK
from wavegauge.state import GridSpec, MetricState, full_to_sym, read_checkpoint, write_checkpoint


def schwarzschild_state(n, extent, M, t_final=1.0, dt_factor=0.25):
    grid = GridSpec(n=n, extent=extent, t_final=t_final, dt_factor=dt_factor)
    X, Y, Z, r = grid.coords()
    pts = np.stack(np.broadcast_arrays(X, Y, Z), axis=-1)
    g = data.schwarzschild_wave(M, pts)
    h = full_to_sym(g - MINK)
    return MetricState(t=0.0, h=h, dth=np.zeros_like(h), grid=grid, mass=M)


def flat_pulse_state(grid, amplitude, width, component=(1, 1)):
    """Exact regular flat-space solution phi = (chi(r-t) - chi(-r-t))/r."""
    X, Y, Z, r = grid.coords()
    phi, dtphi = exact_pulse(0.0, r, amplitude, width)
    h = np.zeros((grid.n, grid.n, grid.n, 10))
    dth = np.zeros_like(h)
    from wavegauge.state import SYM_INDEX

    c = SYM_INDEX[component]
    h[..., c] = phi
    dth[..., c] = dtphi
    return MetricState(t=0.0, h=h, dth=dth, grid=grid, mass=0.0)


def exact_pulse(t, r, amplitude, width):
    """phi and d_t phi for the spherically symmetric d'Alembert solution."""
    def chi(u):
        return amplitude * np.exp(-(u / width) ** 2)

    def dchi(u):
        return -2.0 * u / width**2 * chi(u)

    phi = (chi(r - t) - chi(-r - t)) / r
    dtphi = (-dchi(r - t) + dchi(-r - t)) / r
    return phi, dtphi


class TestKernel:
    def test_matches_reference_on_random_state(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        rng = np.random.default_rng(1)
        h = 0.01 * rng.standard_normal((20, 20, 20, 10))
        dth = 0.01 * rng.standard_normal((20, 20, 20, 10))
        st = MetricState(t=0.0, h=h, dth=dth, grid=grid, mass=0.0)
        ev = evolve.Evolver(grid, 0.0)
        h1, k1, g1 = ev._rhs(st.h, st.dth)
        h2, k2, g2 = evolve.rhs_reference(st, ev.mask)
        assert np.max(np.abs(k1 - k2)) < 1e-13
        assert abs(g1 - g2) < 1e-12

    def test_zero_state_stays_zero(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        st = MetricState(t=0.0, h=np.zeros((20, 20, 20, 10)),
                         dth=np.zeros((20, 20, 20, 10)), grid=grid, mass=0.0)
        ev = evolve.Evolver(grid, 0.0)
        out = ev.step(st)
        assert np.all(out.h == 0.0)
        assert np.all(out.dth == 0.0)

    def test_frozen_shell_bit_identical(self):
        st = schwarzschild_state(24, 9.0, 0.02)
        ev = evolve.Evolver(st.grid, st.mass,
                            evolve.EvolveOptions(inner_mask_radius=1.0))
        out = ev.step(st)
        frozen = ~ev.mask
        assert np.array_equal(out.h[frozen], st.h[frozen])
        assert np.array_equal(out.dth[frozen], st.dth[frozen])


class TestStaticSchwarzschild:
    def test_preservation_and_convergence(self):
        errs = {}
        for n in (24, 48):
            st = schwarzschild_state(n, 7.0, 0.01, t_final=0.5)
            ev = evolve.Evolver(st.grid, st.mass,
                                evolve.EvolveOptions(inner_mask_radius=1.0))
            cur = st
            while cur.t < 0.5 - 1e-9:
                cur = ev.step(cur)
            errs[n] = np.max(np.abs(cur.h - st.h))
        assert errs[24] / errs[48] > 10.0

    def test_exterior_exactness(self):
        st = schwarzschild_state(32, 7.0, 0.01, t_final=1.0)
        ev = evolve.Evolver(st.grid, st.mass,
                            evolve.EvolveOptions(inner_mask_radius=1.0))
        cur = st
        while cur.t < 1.0 - 1e-9:
            cur = ev.step(cur)
        _, _, _, r = st.grid.coords()
        region = r >= cur.t + 1.0 + 5 * st.grid.dx
        assert np.max(np.abs((cur.h - st.h)[region])) <= 50.0 * st.grid.dx**4

    def test_blowup_guard(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        h = np.zeros((20, 20, 20, 10))
        dth = np.zeros_like(h)
        dth[8:12, 8:12, 8:12, 0] = 1e3   # absurd kick
        st = MetricState(t=0.0, h=h, dth=dth, grid=grid, mass=0.0)
        ev = evolve.Evolver(grid, 0.0)
        with pytest.raises(evolve.EvolutionError):
            cur = st
            for _ in range(200):
                cur = ev.step(cur)


class TestFlatWave:
    def test_matches_dalembert(self):
        grid = GridSpec(n=48, extent=12.0, t_final=2.0)
        amp = 1e-6
        st = flat_pulse_state(grid, amp, 2.0)
        ev = evolve.Evolver(grid, 0.0)
        cur = st
        while cur.t < 2.0 - 1e-9:
            cur = ev.step(cur)
        _, _, _, r = grid.coords()
        phi_exact, _ = exact_pulse(cur.t, r, amp, 2.0)
        err = np.max(np.abs(cur.h[..., 4][ev.mask] - phi_exact[ev.mask]))
        assert err <= 1e-3 * amp + 10.0 * amp**2

    def test_energy_conservation(self):
        grid = GridSpec(n=48, extent=12.0, t_final=2.0)
        st = flat_pulse_state(grid, 1e-6, 2.0)
        ev = evolve.Evolver(grid, 0.0)
        e0 = diagnostics.energy_suite(st, ev.time_tower, 0)[0][0]
        cur = st
        while cur.t < 2.0 - 1e-9:
            cur = ev.step(cur)
        e1 = diagnostics.energy_suite(cur, ev.time_tower, 0)[0][0]
        assert abs(e1 - e0) <= 1e-3 * e0


class TestVectorFields:
    def test_scaling_on_t(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        t = 1.7
        f = np.full((20, 20, 20), t)
        dtf = np.ones_like(f)
        out = diagnostics.vector_field_apply("s", f, dtf, grid, t)
        np.testing.assert_allclose(out, t, atol=1e-12)

    def test_rotation_annihilates_radial(self):
        grid = GridSpec(n=32, extent=9.0, t_final=1.0)
        _, _, _, r = grid.coords()
        f = np.exp(-(r**2) / 4.0)
        out = diagnostics.vector_field_apply("r12", f, np.zeros_like(f), grid, 0.0)
        interior = diagnostics.interior_mask(grid, 3)
        assert np.max(np.abs(out[interior])) < 1e-5

    def test_boost_on_coordinate(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        X, _, _, _ = grid.coords()
        t = 0.8
        f = np.broadcast_to(X, (20, 20, 20)).copy()
        out = diagnostics.vector_field_apply("b1", f, np.zeros_like(f), grid, t)
        interior = diagnostics.interior_mask(grid, 3)
        np.testing.assert_allclose(out[interior], t, atol=1e-10)

    def test_order_cap(self):
        with pytest.raises(diagnostics.UnsupportedOrderError):
            diagnostics.words_up_to(3)


class TestEnergies:
    def test_zero_state(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        st = MetricState(t=0.0, h=np.zeros((20, 20, 20, 10)),
                         dth=np.zeros((20, 20, 20, 10)), grid=grid, mass=0.0)
        ev = evolve.Evolver(grid, 0.0)
        e, s = diagnostics.energy_suite(st, ev.time_tower, 2)
        assert e[0] == e[1] == e[2] == 0.0
        assert s[0] == 0.0

    def test_monotone_in_order(self):
        st = schwarzschild_state(24, 7.0, 0.01, t_final=0.5)
        ev = evolve.Evolver(st.grid, st.mass,
                            evolve.EvolveOptions(inner_mask_radius=1.0))
        e, s = diagnostics.energy_suite(st, ev.time_tower, 2)
        assert 0.0 < e[0] <= e[1] <= e[2]

    def test_static_quadrature_oracle(self):
        # E0 of the static metric equals the direct quadrature of analytic dh
        st = schwarzschild_state(32, 7.0, 0.01, t_final=0.5)
        ev = evolve.Evolver(st.grid, st.mass,
                            evolve.EvolveOptions(inner_mask_radius=1.0))
        e, _ = diagnostics.energy_suite(st, ev.time_tower, 0)
        grid = st.grid
        mask = diagnostics.interior_mask(grid, 5)
        X, Y, Z, r = grid.coords()
        pts = np.stack(np.broadcast_arrays(X, Y, Z), axis=-1)[mask]
        total = 0.0
        for p in pts:
            jet = data.schwarzschild_wave_jet(st.mass, p)
            total += np.sum(jet.dg[1:] ** 2) - 0.5 * np.sum(jet.dg[1:, 0, 1:] ** 2) * 0
        # take only the 10 independent components, as the grid sum does
        total = 0.0
        from wavegauge.state import SYM_PAIRS
        for p in pts:
            jet = data.schwarzschild_wave_jet(st.mass, p)
            for (a, b) in SYM_PAIRS:
                total += np.sum(jet.dg[1:, a, b] ** 2)
        total *= grid.dx**3
        assert e[0] == pytest.approx(total, rel=1e-3)


class TestGaugeMonitor:
    def test_flat(self):
        grid = GridSpec(n=20, extent=9.0, t_final=1.0)
        st = MetricState(t=0.0, h=np.zeros((20, 20, 20, 10)),
                         dth=np.zeros((20, 20, 20, 10)), grid=grid, mass=0.0)
        l2, linf = evolve.gauge_monitor(st)
        assert l2 == 0.0 and linf == 0.0

    def test_static_schwarzschild_truncation_converges(self):
        vals = {}
        for n in (24, 48):
            st = schwarzschild_state(n, 7.0, 0.01)
            _, linf = evolve.gauge_monitor(st)
            vals[n] = linf
        assert vals[24] / vals[48] > 10.0


class TestTransportResidual:
    def test_flat_spherical_wave(self):
        grid = GridSpec(n=48, extent=12.0, t_final=1.0)
        st = flat_pulse_state(grid, 1e-4, 2.5)
        ev = evolve.Evolver(grid, 0.0)
        res, maj, mask = diagnostics.transport_residual(st, ev.time_tower, r_min=3.0)
        # exact solution: 4 ds dq (r phi) = 0 and lap_omega phi = 0
        assert np.max(res) <= 1e-7 * 1e-4 / grid.dx**2 + 1e-12

    def test_zero_state(self):
        grid = GridSpec(n=32, extent=9.0, t_final=1.0)
        st = MetricState(t=0.0, h=np.zeros((32, 32, 32, 10)),
                         dth=np.zeros((32, 32, 32, 10)), grid=grid, mass=0.0)
        ev = evolve.Evolver(grid, 0.0)
        res, maj, mask = diagnostics.transport_residual(st, ev.time_tower)
        assert np.max(res) == 0.0

    def test_static_schwarzschild_bounded_by_majorant(self):
        st = schwarzschild_state(32, 7.0, 0.01, t_final=0.5)
        ev = evolve.Evolver(st.grid, st.mass,
                            evolve.EvolveOptions(inner_mask_radius=1.0))
        res, maj, mask = diagnostics.transport_residual(st, ev.time_tower, r_min=2.0)
        ratio = np.max(res / np.maximum(maj, 1e-14))
        assert ratio < 20.0  # fixture: measured constant stays O(1)


class TestSobolev:
    def test_fixture_and_homogeneity(self):
        bump = diagnostics.PolyGauss.bump(1.0, (0.0, 1.0, 0.0, 0.0), 1.0)
        r1 = diagnostics.sobolev_ratio(bump, 0.0, order=3, grid_pts=40)
        assert 0.0 < r1 < 1.0
        bump2 = diagnostics.PolyGauss.bump(7.5, (0.0, 1.0, 0.0, 0.0), 1.0)
        r2 = diagnostics.sobolev_ratio(bump2, 0.0, order=3, grid_pts=40)
        assert r2 == pytest.approx(r1, rel=1e-12)

    def test_translated_family_bounded(self):
        base = None
        for t in (0.0, 10.0, 40.0, 100.0):
            bump = diagnostics.PolyGauss.bump(1.0, (t, t, 0.0, 0.0), 1.0)
            ratio = diagnostics.sobolev_ratio(bump, t, order=3, grid_pts=32)
            if base is None:
                base = ratio
            assert ratio <= 2.0 * base


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        st = schwarzschild_state(20, 9.0, 0.03)
        st.dth += 0.001
        path = tmp_path / "state.wgev"
        write_checkpoint(path, st)
        back = read_checkpoint(path)
        assert back.t == st.t and back.mass == st.mass
        assert back.grid.n == st.grid.n and back.grid.extent == st.grid.extent
        np.testing.assert_array_equal(back.h, st.h)
        np.testing.assert_array_equal(back.dth, st.dth)


class TestDeterminism:
    def test_thread_count_invariance(self):
        st = schwarzschild_state(24, 7.0, 0.01, t_final=0.5)
        outs = []
        for threads in (1, 2):
            ev = evolve.Evolver(st.grid, st.mass,
                                evolve.EvolveOptions(inner_mask_radius=1.0,
                                                     threads=threads))
            cur = st.copy()
            for _ in range(5):
                cur = ev.step(cur)
            outs.append((cur.h.copy(), cur.dth.copy()))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert np.array_equal(outs[0][1], outs[1][1])
