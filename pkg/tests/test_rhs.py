import numpy as np
import pytest

from wavegauge import data, frame, gauge, rhs
from wavegauge.frame import MINK, build_null_frame, frame_norm
from wavegauge.rhs import (
    F_assemble,
    FieldJet,
    G_term,
    P_tensor,
    P_term,
    Q_term,
    SmallnessError,
)


def random_jet(rng, h_scale=0.05, dh_scale=0.3):
    h = frame.random_symmetric(rng, h_scale)
    dh = dh_scale * rng.standard_normal((4, 4, 4))
    dh = 0.5 * (dh + np.swapaxes(dh, 1, 2))
    return FieldJet(h=h, dh=dh)


class TestFieldJet:
    def test_smallness_enforced(self):
        with pytest.raises(SmallnessError):
            FieldJet(h=0.3 * np.eye(4), dh=np.zeros((4, 4, 4)))

    def test_H_is_minus_h_to_second_order(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = frame.random_symmetric(rng, 1e-3)
            j = FieldJet(h=h, dh=np.zeros((4, 4, 4)))
            hup = np.einsum("aA,bB,AB->ab", frame.MINK_INV, frame.MINK_INV, h)
            assert np.max(np.abs(j.H() + hup)) < 10.0 * np.max(np.abs(h)) ** 2


class TestPTerm:
    def test_matches_frame_module(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = frame.random_symmetric(rng)
            k = frame.random_symmetric(rng)
            direct = P_term(p, k)
            assert direct == pytest.approx(frame.quadratic_P(p, k), abs=1e-14)

    def test_P_m_m(self):
        assert P_term(MINK, MINK) == pytest.approx(2.0)

    def test_zero_slot(self):
        assert P_term(np.zeros((4, 4)), MINK) == 0.0

    def test_tensor_assembly(self):
        rng = np.random.default_rng(2)
        j = random_jet(rng)
        P = P_tensor(j.dh)
        for m in range(4):
            for n in range(4):
                assert P[m, n] == pytest.approx(P_term(j.dh[m], j.dh[n]), abs=1e-13)


class TestQTerm:
    def test_zero(self):
        assert np.allclose(Q_term(np.zeros((4, 4, 4))), 0.0)

    def test_null_form_tangential_bound(self):
        # |Q| <= C (|dh-bar| |dh|) with one uniform measured constant
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(500):
            j = random_jet(rng)
            x = rng.standard_normal(3) * 3.0
            if np.linalg.norm(x) < 1e-2:
                continue
            f = build_null_frame(x)
            q = np.max(np.abs(Q_term(j.dh)))
            # tangential first index: contract derivative slot with T-frame
            full = sum(
                frame_norm(j.dh[a], f, "U", "U")
                for a in range(4)
            )
            tang = 0.0
            for T in f.vectors("T"):
                dT = np.einsum("a,amn->mn", T, j.dh)
                tang += frame_norm(dT, f, "U", "U")
            if q > 1e-14:
                worst = max(worst, q / (tang * full))
        assert worst <= 10.0

    def test_plane_wave_fixture(self):
        # h = e f(t - x3) with a null polarization; Q evaluated on its jet
        e = np.zeros((4, 4))
        e[1, 1], e[2, 2] = 1.0, -1.0
        fprime = 0.7
        k = np.array([1.0, 0.0, 0.0, -1.0])  # d_a f(t - x3) = k_a f'
        dh = fprime * k[:, None, None] * e[None, :, :]
        q = Q_term(dh)
        # plane waves along a null direction annihilate every null form
        assert np.max(np.abs(q)) < 1e-14


class TestGTerm:
    def test_vanishes_at_h_zero(self):
        rng = np.random.default_rng(4)
        dh = rng.standard_normal((4, 4, 4))
        dh = 0.5 * (dh + np.swapaxes(dh, 1, 2))
        j = FieldJet(h=np.zeros((4, 4)), dh=dh)
        assert np.max(np.abs(G_term(j))) < 1e-12

    def test_linear_scaling_limit(self):
        rng = np.random.default_rng(5)
        h = frame.random_symmetric(rng, 0.1)
        dh = rng.standard_normal((4, 4, 4))
        dh = 0.5 * (dh + np.swapaxes(dh, 1, 2))
        ratios = []
        for lam in (1e-2, 1e-3, 1e-4):
            j = FieldJet(h=lam * h, dh=dh)
            ratios.append(np.max(np.abs(G_term(j))) / lam)
        assert ratios[0] == pytest.approx(ratios[1], rel=0.2)
        assert ratios[1] == pytest.approx(ratios[2], rel=0.05)

    def test_cubic_smallness_bound(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(500):
            j = random_jet(rng, h_scale=0.02)
            g = np.max(np.abs(G_term(j)))
            bound = np.max(np.abs(j.h)) * np.max(np.abs(j.dh)) ** 2
            if g > 1e-14:
                worst = max(worst, g / bound)
        assert worst < 100.0


class TestFAssemble:
    def test_decomposition_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            j = random_jet(rng)
            F = F_assemble(j)
            back = P_tensor(j.dh) + Q_term(j.dh) + G_term(j)
            scale = max(1.0, np.max(np.abs(F)))
            assert np.max(np.abs(F - back)) <= 1e-12 * scale

    def test_quadratic_only_at_h_zero(self):
        rng = np.random.default_rng(8)
        dh = rng.standard_normal((4, 4, 4))
        dh = 0.5 * (dh + np.swapaxes(dh, 1, 2))
        j = FieldJet(h=np.zeros((4, 4)), dh=dh)
        F = F_assemble(j)
        np.testing.assert_allclose(F, P_tensor(dh) + Q_term(dh), atol=1e-12)

    def test_matches_reduced_equation_on_schwarzschild(self):
        # F must equal g^ab d_a d_b g_mn for the exact vacuum metric
        for M in (0.001, 0.01, 0.1):
            jet = data.schwarzschild_wave_jet(M, [4.0, 1.0, -0.5])
            j = FieldJet(h=jet.g - MINK, dh=jet.dg)
            gi = gauge.inverse_metric(jet.g)
            box = np.einsum("ab,abmn->mn", gi, jet.ddg)
            np.testing.assert_allclose(F_assemble(j), box, rtol=0, atol=1e-9)

    def test_trace_null_structure(self):
        # m^mn P(d_m h, d_n h) is a combination of Q0 null forms, so it obeys
        # the tangential bound |.| <= C |dh-bar| |dh| on the random suite
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(500):
            j = random_jet(rng)
            x = rng.standard_normal(3) * 3.0
            if np.linalg.norm(x) < 1e-2:
                continue
            f = build_null_frame(x)
            tr_P = float(np.einsum("ab,ab->", frame.MINK_INV, P_tensor(j.dh)))
            full = sum(frame_norm(j.dh[a], f, "U", "U") for a in range(4))
            tang = 0.0
            for T in f.vectors("T"):
                dT = np.einsum("a,amn->mn", T, j.dh)
                tang += frame_norm(dT, f, "U", "U")
            if abs(tr_P) > 1e-14:
                worst = max(worst, abs(tr_P) / (tang * full))
        assert worst <= 10.0

    def test_batched_matches_pointwise(self):
        rng = np.random.default_rng(10)
        jets = [random_jet(rng) for _ in range(20)]
        h = np.stack([j.h for j in jets])
        dh = np.stack([j.dh for j in jets])
        batched = rhs.F_exact(h, dh)
        for i, j in enumerate(jets):
            np.testing.assert_allclose(batched[i], F_assemble(j), rtol=0, atol=1e-13)
