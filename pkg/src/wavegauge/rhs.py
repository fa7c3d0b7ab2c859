"""Semilinear right-hand side F = P + Q + G of the reduced system.

P and Q are the Minkowski-contracted quadratic forms; G is defined as the
exact remainder F_exact - P - Q, where F_exact is the g-contracted
combination Ptilde + Qtilde evaluated with the exact inverse metric.  This
makes P + Q + G reproduce the true reduced equations identically, and G
inherits the cubic smallness |G| <~ |h| |dh|^2 because the inverse metric
differs from m at first order in h.

All functions accept batched jets: ``h`` with shape (..., 4, 4) and ``dh``
with shape (..., 4, 4, 4) where ``dh[..., a, m, n] = d_a h_mn``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frame import MINK, MINK_INV
from .gauge import inverse_metric, tilde_P, tilde_Q

H_MAX = 0.25


class SmallnessError(ValueError):
    pass


@dataclass
class FieldJet:
    """Metric perturbation 1-jet at a point: h and its four partials."""

    h: np.ndarray    # (4, 4)
    dh: np.ndarray   # (4, 4, 4)

    def __post_init__(self):
        if np.max(np.abs(self.h)) >= H_MAX:
            raise SmallnessError("|h| must stay below 1/4")

    @property
    def g(self) -> np.ndarray:
        return MINK + self.h

    def H(self) -> np.ndarray:
        """Inverse-metric perturbation g^ab - m^ab."""
        return inverse_metric(self.g) - MINK_INV


def P_term(dh_mu, dh_nu) -> float:
    """1/4 tr(dh_mu) tr(dh_nu) - 1/2 <dh_mu, dh_nu> with m-contractions."""
    from .frame import quadratic_P

    return quadratic_P(dh_mu, dh_nu)


def P_tensor(dh) -> np.ndarray:
    """P(d_mu h, d_nu h) assembled into a (..., 4, 4) tensor."""
    tr = np.einsum("ab,...mab->...m", MINK_INV, dh)
    pair = np.einsum("...mab,aA,bB,...nAB->...mn", dh, MINK_INV, MINK_INV, dh)
    return 0.25 * tr[..., :, None] * tr[..., None, :] - 0.5 * pair


def Q_term(dh) -> np.ndarray:
    """Null-form part Q_mn(dh, dh): the six m-contracted groups.

    Identical in structure to the g-contracted Qtilde but with the flat
    inverse metric, which is what makes it a genuine null form.
    """
    mi = MINK_INV
    S = np.einsum("aA,...mAB,Bb->...mab", mi, dh, mi)
    R = np.einsum("aA,bB,...ABn->...abn", mi, mi, dh)
    v = np.einsum("ab,...mab->...m", mi, dh)
    w = np.einsum("aA,...aAn->...n", mi, dh)
    z = np.einsum("ab,...b->...a", mi, v)
    y = np.einsum("ab,...b->...a", mi, w)

    t1 = np.einsum("...abm,...abn->...mn", dh, R)
    t2 = -(np.einsum("...abm,...ban->...mn", R, dh)
           - w[..., :, None] * w[..., None, :])
    t3 = (np.einsum("...mab,...abn->...mn", S, dh)
          - np.einsum("...b,...mbn->...mn", y, dh))
    t4 = np.swapaxes(t3, -1, -2)
    t5 = 0.5 * (np.einsum("...b,...mbn->...mn", z, dh)
                - v[..., :, None] * w[..., None, :])
    t6 = np.swapaxes(t5, -1, -2)
    return t1 + t2 + t3 + t4 + t5 + t6


def F_exact(h, dh) -> np.ndarray:
    """g^ab-contracted right-hand side Ptilde + Qtilde with g = m + h."""
    g = MINK + np.asarray(h)
    gi = inverse_metric(g)
    if h.ndim == 2:
        return tilde_P(gi, dh) + tilde_Q(gi, dh)
    return _tilde_batched(gi, dh)


def _tilde_batched(gi, dh):
    tr = np.einsum("...ab,...mab->...m", gi, dh)
    pair = np.einsum("...mab,...aA,...bB,...nAB->...mn", dh, gi, gi, dh)
    ptil = 0.25 * tr[..., :, None] * tr[..., None, :] - 0.5 * pair

    S = np.einsum("...aA,...mAB,...Bb->...mab", gi, dh, gi)
    R = np.einsum("...aA,...bB,...ABn->...abn", gi, gi, dh)
    v = tr
    w = np.einsum("...aA,...aAn->...n", gi, dh)
    z = np.einsum("...ab,...b->...a", gi, v)
    y = np.einsum("...ab,...b->...a", gi, w)
    t1 = np.einsum("...abm,...abn->...mn", dh, R)
    t2 = -(np.einsum("...abm,...ban->...mn", R, dh)
           - w[..., :, None] * w[..., None, :])
    t3 = (np.einsum("...mab,...abn->...mn", S, dh)
          - np.einsum("...b,...mbn->...mn", y, dh))
    t4 = np.swapaxes(t3, -1, -2)
    t5 = 0.5 * (np.einsum("...b,...mbn->...mn", z, dh)
                - v[..., :, None] * w[..., None, :])
    t6 = np.swapaxes(t5, -1, -2)
    return ptil + t1 + t2 + t3 + t4 + t5 + t6


def G_term(j: FieldJet) -> np.ndarray:
    """Exact remainder G = F_exact - P - Q; vanishes identically at h = 0."""
    return F_exact(j.h, j.dh) - P_tensor(j.dh) - Q_term(j.dh)


def F_assemble(j: FieldJet) -> np.ndarray:
    """Full right-hand side F_mn; equals F_exact by construction of G."""
    return F_exact(j.h, j.dh)
