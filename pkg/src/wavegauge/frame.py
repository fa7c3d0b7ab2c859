"""Minkowski null frame and pointwise tensor algebra.

Conventions used throughout the package:

* spacetime index 0 is time, 1..3 are Cartesian space; signature (-,+,+,+);
* symmetric 2-tensors are plain ``(4, 4)`` numpy arrays (``k[a][b] == k[b][a]``);
* indices are raised and lowered with the Minkowski metric ``MINK`` only.

The frame at a spatial point x != 0 consists of the outgoing/ingoing null
vectors L = (1, omega), Lbar = (1, -omega) and two orthonormal sphere-tangent
vectors S1, S2 picked by a deterministic convention (see ``build_null_frame``).
Frame "components" of a tensor are contractions with the frame vectors,
k_VW = k_ab V^a W^b, so m_LLbar = -2 and m_AB = delta_AB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MINK = np.diag([-1.0, 1.0, 1.0, 1.0])
MINK_INV = np.diag([-1.0, 1.0, 1.0, 1.0])

# ordered family tags for frame norms; 'U' is the full frame
FAMILIES = ("L", "T", "U", "S")


@dataclass(frozen=True)
class NullFrame:
    """Null frame (L, Lbar, S1, S2) at a spatial point.

    Attributes
    ----------
    L, Lbar : (4,) arrays, the outgoing / ingoing null vectors.
    S1, S2 : (4,) arrays, orthonormal sphere-tangent vectors (zero time part).
    omega : (3,) unit radial direction.
    """

    L: np.ndarray
    Lbar: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    omega: np.ndarray

    def vectors(self, family: str) -> list[np.ndarray]:
        """Frame vectors of one of the families L, T, U, S."""
        if family == "L":
            return [self.L]
        if family == "T":
            return [self.L, self.S1, self.S2]
        if family == "U":
            return [self.L, self.Lbar, self.S1, self.S2]
        if family == "S":
            return [self.S1, self.S2]
        raise ValueError(f"unknown frame family {family!r}")


def build_null_frame(x) -> NullFrame:
    """Construct the null frame at the spatial point x.

    S1 is the normalized projection of the smallest-index coordinate axis
    not parallel to omega, and S2 = omega x S1; this fixes the sphere frame
    deterministically (no global frame on S^2 exists, so some convention is
    required).

    Raises
    ------
    ValueError
        If x is the zero vector.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x)
    if r == 0.0:
        raise ValueError("null frame undefined at the spatial origin")
    omega = x / r
    # smallest-index axis not parallel to omega
    k = 0
    while abs(abs(omega[k]) - 1.0) < 1e-12:
        k += 1
    e = np.zeros(3)
    e[k] = 1.0
    s1 = e - np.dot(e, omega) * omega
    s1 /= np.linalg.norm(s1)
    s2 = np.cross(omega, s1)
    zeros = (0.0,)
    return NullFrame(
        L=np.concatenate(([1.0], omega)),
        Lbar=np.concatenate(([1.0], -omega)),
        S1=np.concatenate((zeros, s1)),
        S2=np.concatenate((zeros, s2)),
        omega=omega,
    )


def contract(k, U, V) -> float:
    """Contraction k_ab U^a V^b of a 2-tensor with two vectors."""
    return float(np.einsum("ab,a,b->", k, U, V))


def trace_m(k) -> float:
    """Minkowski trace m^ab k_ab."""
    return float(np.einsum("ab,ab->", MINK_INV, k))


def frame_trace(k, f: NullFrame) -> float:
    """Trace of k computed from its frame components.

    Equals -1/2 (k_LLbar + k_LbarL) + sum_A k_AA, which agrees with the
    direct contraction m^ab k_ab for any symmetric k.
    """
    kLLb = contract(k, f.L, f.Lbar)
    kLbL = contract(k, f.Lbar, f.L)
    tan = contract(k, f.S1, f.S1) + contract(k, f.S2, f.S2)
    return -0.5 * (kLLb + kLbL) + tan


def frame_norm(p, f: NullFrame, fam_v: str, fam_w: str) -> float:
    """Sum of |p_VW| over ordered pairs from two frame families.

    Ordered pairs are counted, so e.g. |m|_UU = 2 + 2 + 1 + 1 = 6.
    """
    total = 0.0
    for V in f.vectors(fam_v):
        for W in f.vectors(fam_w):
            total += abs(contract(p, V, W))
    return total


def double_contraction(p, k) -> float:
    """p_ab k^ab with both indices raised by the Minkowski metric."""
    return float(np.einsum("ab,aA,bB,AB->", p, MINK_INV, MINK_INV, k))


def double_contraction_frame(p, k, f: NullFrame) -> float:
    """Frame expansion of p_ab k^ab for symmetric p, k.

    1/4 (p_LL k_LbLb + p_LbLb k_LL + 2 p_LLb k_LbL)
    - sum_A (p_AL k_ALb + p_ALb k_AL) + sum_AB p_AB k_AB
    """
    L, Lb = f.L, f.Lbar
    S = (f.S1, f.S2)
    out = 0.25 * (
        contract(p, L, L) * contract(k, Lb, Lb)
        + contract(p, Lb, Lb) * contract(k, L, L)
        + 2.0 * contract(p, L, Lb) * contract(k, Lb, L)
    )
    for A in S:
        out -= contract(p, A, L) * contract(k, A, Lb)
        out -= contract(p, A, Lb) * contract(k, A, L)
    for A in S:
        for B in S:
            out += contract(p, A, B) * contract(k, A, B)
    return out


def quadratic_P(p, k) -> float:
    """The quadratic form 1/4 tr(p) tr(k) - 1/2 p_ab k^ab.

    This is the non-null part of the semilinear right-hand side of the
    reduced system; its frame expansion (``quadratic_P_frame``) shows that
    every term carries at least one purely tangential factor except for the
    p_LL k_LbLb pair.
    """
    return 0.25 * trace_m(p) * trace_m(k) - 0.5 * double_contraction(p, k)


def quadratic_P_frame(p, k, f: NullFrame) -> float:
    """Null-frame expansion of ``quadratic_P`` for symmetric p, k.

    -1/8 (p_LL k_LbLb + p_LbLb k_LL)
    - 1/4 sum (2 p_AA' k_BB' - p_AB k_A'B') delta^AB delta^A'B'
    + 1/4 sum_A (2 p_AL k_ALb + 2 p_ALb k_AL - p_AA k_LLb - p_LLb k_AA)
    """
    L, Lb = f.L, f.Lbar
    S = (f.S1, f.S2)
    out = -0.125 * (
        contract(p, L, L) * contract(k, Lb, Lb)
        + contract(p, Lb, Lb) * contract(k, L, L)
    )
    frob = sum(contract(p, A, B) * contract(k, A, B) for A in S for B in S)
    tan_tr_p = sum(contract(p, A, A) for A in S)
    tan_tr_k = sum(contract(k, A, A) for A in S)
    out -= 0.25 * (2.0 * frob - tan_tr_p * tan_tr_k)
    kLLb = contract(k, L, Lb)
    pLLb = contract(p, L, Lb)
    for A in S:
        out += 0.25 * (
            2.0 * contract(p, A, L) * contract(k, A, Lb)
            + 2.0 * contract(p, A, Lb) * contract(k, A, L)
            - contract(p, A, A) * kLLb
            - pLLb * contract(k, A, A)
        )
    return out


def reconstruct_from_frame(f: NullFrame, comps: dict) -> np.ndarray:
    """Build a symmetric 2-tensor from frame contractions.

    ``comps`` maps unordered label pairs such as "LL", "LLb", "11", "1Lb"
    (1, 2 = S1, S2; Lb = Lbar) to the desired contraction values k_VW.
    Missing pairs default to zero.  Inverse of ``contract`` with frame
    vectors: uses the dual covectors Ltilde = -1/2 m(Lbar), etc.
    """
    lower = {
        "L": -0.5 * MINK @ f.Lbar,
        "Lb": -0.5 * MINK @ f.L,
        "1": MINK @ f.S1,
        "2": MINK @ f.S2,
    }
    labels = ("L", "Lb", "1", "2")
    k = np.zeros((4, 4))
    for i, a in enumerate(labels):
        for b in labels[i:]:
            val = comps.get(a + b, comps.get(b + a, 0.0))
            if val == 0.0:
                continue
            term = np.outer(lower[a], lower[b])
            k += val * (term + term.T) if a != b else val * term
    return k


def random_symmetric(rng, scale: float = 1.0) -> np.ndarray:
    """Random symmetric 2-tensor with entries of the given scale."""
    a = rng.standard_normal((4, 4)) * scale
    return 0.5 * (a + a.T)
