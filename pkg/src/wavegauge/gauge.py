"""Christoffel symbols, curvature, and the wave-coordinate identities.

All operations take a :class:`MetricJet` (metric with first and second
partials at one spacetime point) and are exact tensor algebra; there is no
differentiation here.  Index order conventions:

* ``dg[a, m, n]``   is the first partial  d_a g_mn,
* ``ddg[a, b, m, n]`` is the second partial d_a d_b g_mn,
* ``christoffel`` returns ``chris[l, m, n]`` = Gamma_m^l_n (symmetric m,n).

The reduced-equation residual implements the exact cancellation that turns
the Ricci tensor into g^ab d_a d_b g_mn plus the quadratic forms Ptilde and
Qtilde when the wave-coordinate condition holds; it is the strongest single
correctness oracle in the package and must vanish on any exact vacuum metric
given in wave coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COND_LIMIT = 1e12


class SingularMetricError(ValueError):
    pass


@dataclass
class MetricJet:
    """Metric 2-jet at a single spacetime point."""

    g: np.ndarray     # (4, 4)
    dg: np.ndarray    # (4, 4, 4), dg[a] = d_a g
    ddg: np.ndarray   # (4, 4, 4, 4), ddg[a, b] = d_a d_b g

    def inverse(self) -> np.ndarray:
        return inverse_metric(self.g)


def inverse_metric(g) -> np.ndarray:
    """Inverse of a (batch of) 4x4 metric(s) with a conditioning guard."""
    g = np.asarray(g, dtype=float)
    det = np.linalg.det(g)
    if np.any(np.abs(det) < 1e-300):
        raise SingularMetricError("metric is singular")
    if np.any(np.linalg.cond(g) > COND_LIMIT):
        raise SingularMetricError("metric condition number exceeds guard")
    return np.linalg.inv(g)


def christoffel(j: MetricJet) -> np.ndarray:
    """Christoffel symbols chris[l, m, n] = 1/2 g^ld (d_m g_dn + d_n g_dm - d_d g_mn)."""
    gi = j.inverse()
    dg = j.dg
    # bracket[d, m, n] = d_m g_dn + d_n g_dm - d_d g_mn
    bracket = np.einsum("mdn->dmn", dg) + np.einsum("ndm->dmn", dg) - dg
    return 0.5 * np.einsum("ld,dmn->lmn", gi, bracket)


def christoffel_derivative(j: MetricJet) -> np.ndarray:
    """Partial derivatives dchris[a, l, m, n] = d_a Gamma_m^l_n."""
    gi = j.inverse()
    dg, ddg = j.dg, j.ddg
    dgi = -np.einsum("la,bad,dk->lbk", gi, dg, gi)  # dgi[l, b, k] = d_b g^lk
    bracket = np.einsum("mdn->dmn", dg) + np.einsum("ndm->dmn", dg) - dg
    dbracket = (
        np.einsum("amdn->admn", ddg) + np.einsum("andm->admn", ddg)
        - np.einsum("admn->admn", ddg)
    )
    return 0.5 * (
        np.einsum("lad,dmn->almn", dgi, bracket)
        + np.einsum("ld,admn->almn", gi, dbracket)
    )


def riemann_mixed(j: MetricJet) -> np.ndarray:
    """Curvature R[m, l, n, d] = R_m^l_nd from the jet."""
    chris = christoffel(j)
    dchris = christoffel_derivative(j)
    riem = (
        np.einsum("dlmn->mlnd", dchris)
        - np.einsum("nlmd->mlnd", dchris)
        + np.einsum("lrd,rmn->mlnd", chris, chris)
        - np.einsum("lrn,rmd->mlnd", chris, chris)
    )
    return riem


def ricci(j: MetricJet) -> np.ndarray:
    """Ricci tensor R_mn = R_m^a_na; symmetrized against rounding."""
    ric = np.einsum("mlnl->mn", riemann_mixed(j))
    return 0.5 * (ric + ric.T)


def gauge_residual(j: MetricJet) -> np.ndarray:
    """Wave-coordinate residual Gamma^l = g^mn Gamma_m^l_n (zero in wave gauge)."""
    chris = christoffel(j)
    gi = j.inverse()
    return np.einsum("mn,lmn->l", gi, chris)


def gauge_residual_lowered(j: MetricJet) -> np.ndarray:
    """Equivalent first-derivative form g^ab d_a g_bm - 1/2 g^ab d_m g_ab.

    Identical to g_ml Gamma^l; the agreement of the two forms is asserted in
    the test suite.
    """
    gi = j.inverse()
    dg = j.dg
    return np.einsum("ab,abm->m", gi, dg) - 0.5 * np.einsum("ab,mab->m", gi, dg)


def tilde_P(gi, dg) -> np.ndarray:
    """Ptilde_mn = 1/4 tr_g(d_m g) tr_g(d_n g) - 1/2 <d_m g, d_n g>_g."""
    tr = np.einsum("ab,mab->m", gi, dg)
    pair = np.einsum("mab,aA,bB,nAB->mn", dg, gi, gi, dg)
    return 0.25 * np.outer(tr, tr) - 0.5 * pair


def tilde_Q(gi, dg) -> np.ndarray:
    """The six-group null-form combination Qtilde_mn with g-contractions."""
    # building blocks (all raised with the exact inverse metric)
    #   S[m] = gi . dg[m] . gi         (both tensor slots raised)
    #   R[a, b, n] = gi^aa' gi^bb' dg[a', b', n]
    #   v[m] = tr_g(d_m g),  w[n] = gi^aa' dg[a, a', n]
    S = np.einsum("aA,mAB,Bb->mab", gi, dg, gi)
    R = np.einsum("aA,bB,ABn->abn", gi, gi, dg)
    v = np.einsum("ab,mab->m", gi, dg)
    w = np.einsum("aA,aAn->n", gi, dg)
    z = gi @ v
    y = gi @ w

    t1 = np.einsum("abm,abn->mn", dg, R)
    t2 = -(np.einsum("abm,ban->mn", R, dg) - np.outer(w, w))
    t3 = np.einsum("mab,abn->mn", S, dg) - np.einsum("b,mbn->mn", y, dg)
    t4 = t3.T
    t5 = 0.5 * (np.einsum("b,mbn->mn", z, dg) - np.outer(v, w))
    t6 = t5.T
    return t1 + t2 + t3 + t4 + t5 + t6


def reduced_identity_residual(j: MetricJet, gauge_tol: float = 1e-8):
    """Residual of the reduced-equation identity.

    Returns ``(res, warn)`` where

        res = g^ab d_a d_b g_mn - Ptilde - Qtilde + 2 R_mn

    vanishes (to rounding) for any metric satisfying the wave-coordinate
    condition in a neighborhood, and ``warn`` flags jets whose gauge residual
    exceeds ``gauge_tol`` (the identity is then not expected to hold).
    """
    gi = j.inverse()
    box = np.einsum("ab,abmn->mn", gi, j.ddg)
    res = box - tilde_P(gi, j.dg) - tilde_Q(gi, j.dg) + 2.0 * ricci(j)
    warn = bool(np.linalg.norm(gauge_residual(j)) > gauge_tol)
    return res, warn


def minkowski_jet() -> MetricJet:
    from .frame import MINK

    return MetricJet(g=MINK.copy(), dg=np.zeros((4, 4, 4)), ddg=np.zeros((4, 4, 4, 4)))
