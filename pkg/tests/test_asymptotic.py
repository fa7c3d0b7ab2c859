import numpy as np
import pytest

from wavegauge import asymptotic as asy
from wavegauge.asymptotic import (
    AsymptoticState,
    CharacteristicCrossingError,
    EinsteinAsymptoticState,
    QuadraticSpec,
    einstein_state,
    evolve_einstein,
    evolve_generic,
    gauge_constraint_residual,
    is_classical_null,
    reduce_coefficients,
    quadratic_P_batch,
    asymptotic_P,
)
from wavegauge.frame import MINK, build_null_frame


OMEGA = np.array([0.0, 0.0, 1.0])


def uniform_state(wfun, ncomp=1, span=(-8.0, 8.0), nq=257, omega=OMEGA):
    q = np.linspace(*span, nq)
    profs = wfun if isinstance(wfun, (list, tuple)) else [wfun]
    assert len(profs) == ncomp
    return AsymptoticState.from_profiles(omega, q, profs)


class TestReduceCoefficients:
    def test_ut_squared(self):
        A = reduce_coefficients(asy.spec_ut_squared(), OMEGA)
        assert A[0, 0, 0, 1, 1] == pytest.approx(1.0)

    def test_classical_null_example_vanishes(self):
        for omega in asy.fibonacci_sphere(16):
            A = reduce_coefficients(asy.spec_null_example(), omega)
            assert np.max(np.abs(A)) < 1e-14

    def test_empty_spec(self):
        A = reduce_coefficients(QuadraticSpec(1, ()), OMEGA)
        assert np.all(A == 0.0)

    def test_admissibility_enforced(self):
        with pytest.raises(ValueError):
            QuadraticSpec(1, ((0, 0, 0, (0,), (), 1.0),))


class TestIsClassicalNull:
    def test_null_example(self):
        assert is_classical_null(asy.spec_null_example(), 64)

    def test_john_example(self):
        assert not is_classical_null(asy.spec_ut_laplacian(), 64)

    def test_zero_spec(self):
        assert is_classical_null(QuadraticSpec(1, ()), 16)


class TestRiccatiPreset:
    def test_blowup_time(self):
        # dW/ds = W^2 with W(0) = 1 somewhere -> s* = 1
        st = uniform_state(lambda q: np.exp(-(q**2)))
        traj, rep = evolve_generic("riccati", st, s_max=2.0)
        assert rep.blew_up and rep.kind == "divergence"
        assert rep.s_star == pytest.approx(1.0, rel=0.02)

    def test_no_blowup_negative_data(self):
        st = uniform_state(lambda q: -np.exp(-(q**2)))
        traj, rep = evolve_generic("riccati", st, s_max=3.0)
        assert not rep.blew_up


class TestJohnBurgersPreset:
    def test_sine_crossing_time(self):
        # (2 ds - W dq) W = 0, W0 = sin q -> s* = 2 / max W0' = 2
        st = uniform_state(np.sin, span=(-np.pi, np.pi), nq=513)
        traj, rep = evolve_generic("john-burgers", st, s_max=4.0)
        assert rep.blew_up and rep.kind == "crossing"
        assert rep.s_star == pytest.approx(2.0, rel=0.02)

    def test_transport_preserves_w_before_crossing(self):
        st = uniform_state(np.sin, span=(-np.pi, np.pi), nq=257)
        traj, rep = evolve_generic("john-burgers", st, s_max=1.0)
        assert not rep.blew_up
        np.testing.assert_allclose(traj[-1].W, traj[0].W, atol=1e-12)


class TestTriangularPreset:
    def test_exact_linear_growth(self):
        # W_u(s, q) = s W_v(0, q)^2 exactly
        wv = lambda q: np.exp(-(q**2) / 2.0)
        st = uniform_state([lambda q: np.zeros_like(q), wv], ncomp=2)
        traj, rep = evolve_generic("triangular", st, s_max=5.0)
        assert not rep.blew_up
        final = traj[-1]
        np.testing.assert_allclose(final.W[0], final.s * st.W[1] ** 2, atol=1e-8)
        assert rep.growth == "polynomial"

    def test_with_unit_wv(self):
        st = uniform_state([lambda q: np.zeros_like(q),
                            lambda q: np.ones_like(q)], ncomp=2)
        traj, _ = evolve_generic("triangular", st, s_max=3.0)
        np.testing.assert_allclose(traj[-1].W[0], 3.0, atol=1e-8)


class TestULaplaceUPreset:
    def test_global_existence_to_s50(self):
        st = uniform_state(lambda q: 0.5 * np.exp(-(q**2)) * np.sin(2 * q))
        traj, rep = evolve_generic("u-laplace-u", st, s_max=50.0)
        assert not rep.blew_up
        assert rep.s_reached >= 50.0 - 1e-9
        assert rep.growth in ("bounded", "polynomial", "exponential")


class TestGenericNullCondition:
    def test_null_spec_is_source_free(self):
        # classical null condition: max |W| non-increasing up to tolerance
        st = uniform_state(lambda q: np.exp(-(q**2)) * np.cos(q))
        traj, rep = evolve_generic(asy.spec_null_example(), st, s_max=10.0)
        assert not rep.blew_up
        w0 = np.max(np.abs(traj[0].W))
        for snap in traj:
            assert np.max(np.abs(snap.W)) <= w0 + 1e-10

    def test_generic_matches_riccati_up_to_convention(self):
        # canonical reduction of box u = u_t^2 is 2 dW/ds = W^2 (half rate)
        st = uniform_state(lambda q: np.exp(-(q**2)))
        traj, rep = evolve_generic(asy.spec_ut_squared(), st, s_max=3.0)
        assert rep.blew_up
        assert rep.s_star == pytest.approx(2.0, rel=0.02)


def traceless_tangential_state(dqu=1.0, nq=401, ull_offset=0.0):
    """U_AB = diag(u, -u) with d_q u prescribed; optional constant U_LL."""
    amp = dqu

    def w(q):
        return amp * np.exp(-(q**2) / 2.0)

    u_frame = None
    if ull_offset:
        u_frame = {"LL": lambda q: ull_offset * np.ones_like(q)}
    return einstein_state(
        OMEGA,
        np.linspace(-8.0, 8.0, nq),
        {"11": w, "22": lambda q: -w(q)},
        u_frame,
    )


class TestEinsteinAsymptotic:
    def test_zero_data_stays_zero(self):
        st = einstein_state(OMEGA, np.linspace(-4, 4, 101),
                            {"11": lambda q: np.zeros_like(q)})
        traj, diags = evolve_einstein(st, 5.0)
        assert np.max(np.abs(traj[-1].W)) == 0.0
        assert np.max(np.abs(traj[-1].U)) == 0.0

    def test_traceless_example_slope(self):
        # P = -(dq u)^2 at the peak marker; dW_LbLb/ds = 2P = -2
        st = traceless_tangential_state(dqu=1.0)
        f = build_null_frame(OMEGA)
        traj, diags = evolve_einstein(st, 2.0, ds=0.01)
        final = traj[-1]
        wlb = np.einsum("...ab,a,b->...", final.W, f.Lbar, f.Lbar)
        peak = np.argmax(np.abs(st.W[:, 1, 1]))
        assert wlb[peak] == pytest.approx(-2.0 * final.s, abs=1e-6)

    def test_transported_components_constant(self):
        st = traceless_tangential_state(dqu=0.5, ull_offset=0.05)
        traj, diags = evolve_einstein(st, 10.0)
        assert max(diags["ULL_drift"]) <= 1e-8
        assert max(diags["WTU_drift"]) <= 1e-8

    def test_characteristics_actually_move(self):
        st = traceless_tangential_state(dqu=0.5, ull_offset=0.05)
        traj, _ = evolve_einstein(st, 10.0)
        # dq/ds = -U_LL/2 = -0.025
        assert np.max(np.abs(traj[-1].q - (st.q - 0.025 * traj[-1].s))) < 1e-8

    def test_wlblb_affine_in_s(self):
        st = traceless_tangential_state(dqu=0.7, ull_offset=0.02)
        traj, diags = evolve_einstein(st, 10.0, ds=0.05)
        s = np.array(diags["s"])
        peak = np.argmax(np.abs(st.W[:, 1, 1]))
        w = np.array([snap[peak] for snap in diags["WLbLb"]])
        coef = np.polyfit(s, w, 1)
        resid = np.max(np.abs(np.polyval(coef, s) - w))
        assert resid <= 1e-6 * max(1.0, np.max(np.abs(w)))

    def test_constraint_preserved_random_data(self):
        rng = np.random.default_rng(12)
        q = np.linspace(-6, 6, 301)

        def bump(seed_shift):
            c = rng.uniform(-2, 2)
            wd = rng.uniform(0.5, 1.5)
            a = rng.uniform(-0.05, 0.05)
            return lambda x: a * np.exp(-((x - c) ** 2) / wd**2)

        st = einstein_state(
            OMEGA, q,
            {
                "11": bump(0), "22": bump(1), "12": bump(2),
                "LLb": bump(3), "LbLb": bump(4), "1Lb": bump(5), "2Lb": bump(6),
            },
            {"LL": lambda x: 0.03 * np.ones_like(x)},
        )
        # enforce traceless tangential part (required by the constraint)
        f = build_null_frame(OMEGA)
        tan = 0.5 * (np.einsum("...ab,a,b->...", st.W, f.S1, f.S1)
                     + np.einsum("...ab,a,b->...", st.W, f.S2, f.S2))
        from wavegauge.frame import reconstruct_from_frame
        fix = reconstruct_from_frame(f, {"11": 1.0, "22": 1.0})
        st.W = st.W - tan[:, None, None] * 0.5 * (fix + fix)
        r0 = gauge_constraint_residual(st)
        assert r0 < 1e-12
        traj, diags = evolve_einstein(st, 10.0)
        assert diags["constraint"][-1] <= r0 + 1e-8

    def test_P_forms_agree_under_constraint(self):
        st = traceless_tangential_state(dqu=0.9, ull_offset=0.01)
        f = build_null_frame(OMEGA)
        tan = np.stack(
            [
                np.stack([np.einsum("...ab,a,b->...", st.W, A, B) for B in (f.S1, f.S2)],
                         axis=-1)
                for A in (f.S1, f.S2)
            ],
            axis=-2,
        )
        wllb = np.einsum("...ab,a,b->...", st.W, f.L, f.Lbar)
        p1 = asymptotic_P(wllb, tan)
        p2 = quadratic_P_batch(st.W)
        np.testing.assert_allclose(p1, p2, atol=1e-10)

    def test_crossing_raises_hard_error(self):
        # large non-constant U_LL forces characteristics to cross
        q = np.linspace(-3, 3, 121)
        st = einstein_state(OMEGA, q, {"LL": lambda x: 2.0 * np.sin(2 * x)})
        with pytest.raises(CharacteristicCrossingError):
            evolve_einstein(st, 40.0)


class TestGrowthClassifier:
    def test_bounded(self):
        series = [(s, 1.0) for s in np.linspace(0, 10, 40)]
        assert asy.classify_growth(series) == "bounded"

    def test_exponential(self):
        series = [(s, np.exp(0.3 * s)) for s in np.linspace(0, 10, 40)]
        assert asy.classify_growth(series) == "exponential"

    def test_polynomial(self):
        series = [(s, (1 + s) ** 2) for s in np.linspace(0, 10, 40)]
        assert asy.classify_growth(series) == "polynomial"
