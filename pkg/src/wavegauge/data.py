"""Schwarzschild-exterior initial data in wave coordinates.

The static background in wave coordinates is

    g_tt = -(r - 2M)/(r + 2M),
    g_ij = A(r) w_i w_j + B(r) (delta_ij - w_i w_j),
    A = (r + 2M)/(r - 2M),  B = (r + 2M)^2 / r^2,   w = x/r,

valid for r > 2M.  Closed-form first and second Cartesian derivatives are
provided so the gauge identities can be checked to rounding.  Cauchy data on
a grid is assembled by blending this exterior into flat data across
1/2 <= r <= 1 (quintic C^2 profile), adding an optional interior
perturbation, and then solving the wave-coordinate condition pointwise for
d_t g_00 and d_t g_0i.  The completion uses the same 4th-order stencils as
the evolution/monitoring code, so the discrete gauge residual of built data
vanishes to rounding by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .gauge import MetricJet
from .state import (
    GridSpec,
    MetricState,
    SYM_INDEX,
    diff1,
    diff2,
    full_to_sym,
    sym_to_full,
    unpad,
)


class DataConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Mass and radial layout of the initial data."""

    M: float = 0.01
    r_inner: float = 1.0
    r_outer: float = 8.0

    def __post_init__(self):
        if not (0.0 <= self.M < self.r_inner / 4.0):
            raise DataConfigError("need 0 <= M < r_inner/4 to keep r - 2M positive")
        if self.r_outer <= self.r_inner:
            raise DataConfigError("r_outer must exceed r_inner")


# ---------------------------------------------------------------------------
# closed forms


def _radial_scalars(M: float, r):
    """A, B, a and their first two radial derivatives."""
    rm = r - 2.0 * M
    rp = r + 2.0 * M
    A = rp / rm
    dA = -4.0 * M / rm**2
    ddA = 8.0 * M / rm**3
    B = (rp / r) ** 2
    dB = -4.0 * M * rp / r**3
    ddB = 8.0 * M * (r + 3.0 * M) / r**4
    a = rm / rp
    da = 4.0 * M / rp**2
    dda = -8.0 * M / rp**3
    return A, dA, ddA, B, dB, ddB, a, da, dda


def schwarzschild_wave(M: float, x) -> np.ndarray:
    """Full spacetime Schwarzschild metric in wave coordinates at point(s) x.

    Accepts as x either a 3-vector or an array of shape (..., 3); returns
    (..., 4, 4).  Requires |x| > 2M.
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r <= 2.0 * M):
        raise ValueError("schwarzschild_wave requires |x| > 2M")
    A, _, _, B, _, _, a, _, _ = _radial_scalars(M, r)
    w = x / r[..., None]
    g = np.zeros(x.shape[:-1] + (4, 4))
    g[..., 0, 0] = -a
    P = w[..., :, None] * w[..., None, :]
    Q = np.eye(3) - P
    g[..., 1:, 1:] = A[..., None, None] * P + B[..., None, None] * Q
    return g


def schwarzschild_wave_jet(M: float, x) -> MetricJet:
    """Closed-form 2-jet of the wave-coordinate Schwarzschild metric."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r <= 2.0 * M:
        raise ValueError("schwarzschild_wave_jet requires |x| > 2M")
    A, dA, ddA, B, dB, ddB, a, da, dda = _radial_scalars(M, r)
    w = x / r
    P = np.outer(w, w)
    Q = np.eye(3) - P
    C, dC, ddC = A - B, dA - dB, ddA - ddB

    g = np.zeros((4, 4))
    g[0, 0] = -a
    g[1:, 1:] = B * np.eye(3) + C * P

    dg = np.zeros((4, 4, 4))       # dg[c, m, n] = d_c g_mn (c spatial only)
    ddg = np.zeros((4, 4, 4, 4))

    # d_k g_tt = -a' w_k ; d_l d_k g_tt = -a'' w_l w_k - (a'/r) Q_kl
    for k in range(3):
        dg[k + 1, 0, 0] = -da * w[k]
        for l in range(3):
            ddg[l + 1, k + 1, 0, 0] = -dda * w[l] * w[k] - da * Q[k, l] / r

    # d_k g_ij = B' w_k delta_ij + C' w_k w_i w_j + (C/r)(Q_ik w_j + w_i Q_jk)
    for k in range(3):
        for i in range(3):
            for j in range(3):
                dg[k + 1, i + 1, j + 1] = (
                    dB * w[k] * (1.0 if i == j else 0.0)
                    + dC * w[k] * w[i] * w[j]
                    + (C / r) * (Q[i, k] * w[j] + w[i] * Q[j, k])
                )

    for l in range(3):
        for k in range(3):
            for i in range(3):
                for j in range(3):
                    delta_ij = 1.0 if i == j else 0.0
                    val = (
                        ddB * w[l] * w[k] * delta_ij
                        + dB * Q[k, l] / r * delta_ij
                        + ddC * w[l] * w[k] * w[i] * w[j]
                        + dC / r * (
                            Q[k, l] * w[i] * w[j]
                            + w[k] * Q[i, l] * w[j]
                            + w[k] * w[i] * Q[j, l]
                        )
                        + (dC / r - C / r**2) * w[l] * (Q[i, k] * w[j] + w[i] * Q[j, k])
                        + (C / r**2) * (
                            Q[i, k] * Q[j, l]
                            + Q[i, l] * Q[j, k]
                            - Q[i, l] * w[k] * w[j]
                            - w[i] * Q[k, l] * w[j]
                            - w[i] * Q[j, l] * w[k]
                            - w[i] * w[j] * Q[k, l]
                        )
                    )
                    ddg[l + 1, k + 1, i + 1, j + 1] = val
    return MetricJet(g=g, dg=dg, ddg=ddg)


def schwarzschild_isotropic(M: float, x) -> np.ndarray:
    """Schwarzschild metric in isotropic coordinates (|x| > M)."""
    x = np.asarray(x, dtype=float)
    rho = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(rho <= M):
        raise ValueError("isotropic form requires |x| > M")
    g = np.zeros(x.shape[:-1] + (4, 4))
    g[..., 0, 0] = -(((rho - M) / (rho + M)) ** 2)
    conf = (1.0 + M / rho) ** 4
    for i in range(3):
        g[..., i + 1, i + 1] = conf
    return g


def numeric_jet(metric_fn: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-3) -> MetricJet:
    """Finite-difference 2-jet of any spatial metric closed form.

    4th-order centered differences in the three spatial directions; time
    derivatives are zero (static metrics).  Serves as the independent oracle
    for the hand-differentiated jets.
    """
    x = np.asarray(x, dtype=float)
    g = metric_fn(x)
    dg = np.zeros((4, 4, 4))
    ddg = np.zeros((4, 4, 4, 4))
    eye = np.eye(3)
    w1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
    o1 = [-2, -1, 1, 2]
    for k in range(3):
        acc = sum(w * metric_fn(x + step * o * eye[k]) for w, o in zip(w1, o1))
        dg[k + 1] = acc / step
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    o2 = [-2, -1, 0, 1, 2]
    for k in range(3):
        acc = sum(w * metric_fn(x + step * o * eye[k]) for w, o in zip(w2, o2))
        ddg[k + 1, k + 1] = acc / step**2
    for k in range(3):
        for l in range(k + 1, 3):
            acc = np.zeros((4, 4))
            for wk, ok in zip(w1, o1):
                for wl, ol in zip(w1, o1):
                    acc += wk * wl * metric_fn(x + step * (ok * eye[k] + ol * eye[l]))
            ddg[k + 1, l + 1] = acc / step**2
            ddg[l + 1, k + 1] = ddg[k + 1, l + 1]
    return MetricJet(g=g, dg=dg, ddg=ddg)


# ---------------------------------------------------------------------------
# coordinate change and blending


def smoothstep5(u):
    """Quintic C^2 step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 + u * (-15.0 + 6.0 * u))


def iso_to_wave_radius(rho, M: float):
    """Radial map from isotropic to wave coordinates.

    Pure map r = rho + M^2/rho for rho > 1, identity for rho <= 1/2, and a
    C^2 monotone interpolation between (value and two derivatives match the
    branches at both ends).
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise ValueError("radius must be positive")
    chi = smoothstep5(2.0 * rho - 1.0)
    out = rho + chi * M**2 / rho
    return out if out.ndim else float(out)


def blend_chi(r):
    """Transition profile: 0 for r <= 1/2, 1 for r >= 1."""
    return smoothstep5(2.0 * np.asarray(r, dtype=float) - 1.0)


def lapse_profile(r, M: float):
    """a(r): the Schwarzschild lapse for r > 1 blended to 1 for r <= 1/2."""
    r = np.asarray(r, dtype=float)
    aw = (r - 2.0 * M) / (r + 2.0 * M)
    return 1.0 + blend_chi(r) * (aw - 1.0)


def background_metric(M: float, X, Y, Z, r) -> np.ndarray:
    """Blended background: Schwarzschild-wave outside r >= 1, flat inside r <= 1/2.

    Returns the (..., 4, 4) metric on broadcastable coordinate arrays.
    """
    shape = np.broadcast_shapes(np.shape(X), np.shape(Y), np.shape(Z))
    g = np.zeros(shape + (4, 4))
    g[..., 0, 0] = -lapse_profile(r, M)
    chi = blend_chi(r)
    rm = r - 2.0 * M
    rp = r + 2.0 * M
    A = rp / rm
    B = (rp / r) ** 2
    w = np.zeros(shape + (3,))
    w[..., 0], w[..., 1], w[..., 2] = X / r, Y / r, Z / r
    P = w[..., :, None] * w[..., None, :]
    Q = np.eye(3) - P
    gs = A[..., None, None] * P + B[..., None, None] * Q
    g[..., 1:, 1:] = np.eye(3) + chi[..., None, None] * (gs - np.eye(3))
    return g


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class BumpPerturbation:
    """Compact Gaussian bump in chosen spatial metric components.

    ``components`` maps (i, j) spatial pairs (0-based) to amplitudes; the
    profile is amp * exp(-|x - center|^2 / width^2), optionally with a
    momentum part k_ij of the same shape scaled by ``k_amplitude``.
    """

    components: tuple = (((0, 0), 1e-4),)
    width: float = 0.25
    center: tuple = (0.0, 0.0, 0.0)
    k_amplitude: float = 0.0

    def profile(self, X, Y, Z):
        d2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2 + (Z - self.center[2]) ** 2
        return np.exp(-d2 / self.width**2)

    def spatial_h(self, X, Y, Z) -> np.ndarray:
        prof = self.profile(X, Y, Z)
        out = np.zeros(np.shape(prof) + (3, 3))
        for (i, j), amp in self.components:
            out[..., i, j] += amp * prof
            if i != j:
                out[..., j, i] += amp * prof
        return out

    def spatial_k(self, X, Y, Z) -> np.ndarray:
        return self.k_amplitude * self.spatial_h(X, Y, Z)

    def max_amplitude(self) -> float:
        return max(abs(a) for _, a in self.components)

    def support_radius(self, tol: float = 1e-12) -> float:
        # Gaussian tail: |x - c| where profile drops to tol of the peak
        reach = self.width * np.sqrt(max(np.log(1.0 / tol), 1.0))
        return float(np.linalg.norm(self.center) + reach)


# ---------------------------------------------------------------------------
# Cauchy data


def _spatial_inverse(gblock):
    return np.linalg.inv(gblock)


def complete_time_derivatives(gp, dtg_ij, grid: GridSpec, ng: int = 2):
    """Solve the wave-coordinate condition for d_t g_00 and d_t g_0i.

    Parameters
    ----------
    gp : padded (n+2ng)^3 x 4 x 4 metric on the slice (g_0i must vanish).
    dtg_ij : (n, n, n, 3, 3) given time derivative of the spatial block.
    grid : grid geometry for the unpadded interior.

    Returns (dtg_00, dtg_0i) on the unpadded grid.  Spatial derivatives are
    taken with the same 4th-order stencils used by the evolution monitors,
    which makes the discrete gauge residual of the completed data vanish to
    rounding.
    """
    dx = grid.dx
    g = unpad(gp, ng)
    ginv00 = 1.0 / g[..., 0, 0]
    gi_sp = _spatial_inverse(g[..., 1:, 1:])

    # spatial first derivatives of the needed metric components
    dg = {}
    for m in range(4):
        for n_ in range(m, 4):
            comp = gp[..., m, n_]
            dcomp = [unpad(diff1(comp, ax, dx), ng) for ax in range(3)]
            dg[(m, n_)] = dcomp
            dg[(n_, m)] = dcomp

    # alpha = 0:  (1/2) g^00 dt g_00 = -g^{bi} d_i g_0b + (1/2) g^{ij} dt g_ij
    rhs0 = 0.5 * np.einsum("...ij,...ij->...", gi_sp, dtg_ij)
    for b in range(1, 4):
        for i in range(3):
            rhs0 -= gi_sp[..., b - 1, i] * dg[(0, b)][i]
    dtg_00 = 2.0 * rhs0 / ginv00

    # alpha = i:  g^00 dt g_0i = -g^{bj} d_j g_ib + (1/2) g^{mn} d_i g_mn
    dtg_0i = np.empty(g.shape[:-2] + (3,))
    for i in range(3):
        rhs = 0.5 * ginv00 * dg[(0, 0)][i]
        for k in range(1, 4):
            for l in range(1, 4):
                rhs += 0.5 * gi_sp[..., k - 1, l - 1] * dg[(k, l)][i]
        for b in range(1, 4):
            for j in range(3):
                rhs -= gi_sp[..., b - 1, j] * dg[(i + 1, b)][j]
        dtg_0i[..., i] = rhs / ginv00
    return dtg_00, dtg_0i


def build_cauchy_data(
    cfg: DataConfig,
    grid: GridSpec,
    perturbation: Optional[BumpPerturbation] = None,
) -> MetricState:
    """Assemble wave-coordinate Cauchy data on the grid.

    The slice metric is the blended Schwarzschild background plus the
    optional interior perturbation (which must be supported in r < 1 and
    small enough to keep |h| < 1/4); d_t g_ij = -2 a k_ij, and d_t g_00,
    d_t g_0i are completed from the gauge condition.  With no perturbation
    the returned fields for r > 1 are the exact static metric (the completed
    time derivatives there are at the stencil truncation level).
    """
    ng = 2
    Xp, Yp, Zp, rp = grid.padded_coords(ng)
    gp = background_metric(cfg.M, Xp, Yp, Zp, rp)

    X, Y, Z, r = grid.coords()
    dtg_ij = np.zeros((grid.n, grid.n, grid.n, 3, 3))
    if perturbation is not None:
        if perturbation.support_radius() > cfg.r_inner:
            raise DataConfigError("interior perturbation must be supported in r < r_inner")
        if perturbation.max_amplitude() >= 0.25:
            raise DataConfigError("perturbation violates |h| < 1/4")
        gp[..., 1:, 1:] += perturbation.spatial_h(Xp, Yp, Zp)
        kf = perturbation.spatial_k(X, Y, Z)
        a = lapse_profile(r, cfg.M)
        dtg_ij = -2.0 * a[..., None, None] * kf

    dtg_00, dtg_0i = complete_time_derivatives(gp, dtg_ij, grid, ng)

    g = unpad(gp, ng)
    h = full_to_sym(g - np.diag([-1.0, 1.0, 1.0, 1.0]))
    dth = np.zeros_like(h)
    dth[..., SYM_INDEX[(0, 0)]] = dtg_00
    for i in range(3):
        dth[..., SYM_INDEX[(0, i + 1)]] = dtg_0i[..., i]
    for i in range(3):
        for j in range(i, 3):
            dth[..., SYM_INDEX[(i + 1, j + 1)]] = dtg_ij[..., i, j]

    st = MetricState(t=0.0, h=h, dth=dth, grid=grid, mass=cfg.M)
    st.validate()
    return st


# ---------------------------------------------------------------------------
# constraints


def extrinsic_curvature(state: MetricState) -> np.ndarray:
    """k_ij recovered from d_t g_ij = -2 a k_ij with a = -g_00."""
    g = sym_to_full(state.h) + np.diag([-1.0, 1, 1, 1])
    a = -g[..., 0, 0]
    dtg = sym_to_full(state.dth)[..., 1:, 1:]
    return -dtg / (2.0 * a[..., None, None])


def constraint_residuals(state: MetricState):
    """Hamiltonian and momentum constraint residual fields.

    Hamiltonian: R - (tr k)^2 + |k|^2; momentum: nabla^j k_ij - nabla_i tr k,
    both with the induced spatial metric.  Derivatives use the 4th-order
    stencils with the analytic background continued into the ghost zone, so
    the residuals are defined on the whole grid.
    """
    from .evolve import padded_fields

    grid = state.grid
    dx = grid.dx
    ng = 2
    hp = padded_fields(state, ng)
    gam_p = sym_to_full(hp)[..., 1:, 1:] + np.eye(3)

    gam = unpad(gam_p, ng)
    gaminv = np.linalg.inv(gam)
    k = extrinsic_curvature(state)

    dgam = np.empty(gam.shape[:-2] + (3, 3, 3))       # dgam[..., c, i, j]
    ddgam = np.empty(gam.shape[:-2] + (3, 3, 3, 3))   # ddgam[..., c, d, i, j]
    for i in range(3):
        for j in range(i, 3):
            comp = gam_p[..., i, j]
            d1 = [diff1(comp, ax, dx) for ax in range(3)]
            for c in range(3):
                dgam[..., c, i, j] = unpad(d1[c], ng)
                dgam[..., c, j, i] = dgam[..., c, i, j]
            for c in range(3):
                for d in range(c, 3):
                    if c == d:
                        dd = unpad(diff2(comp, c, dx), ng)
                    else:
                        dd = unpad(diff1(d1[c], d, dx), ng)[...]
                    ddgam[..., c, d, i, j] = dd
                    ddgam[..., d, c, i, j] = dd
                    ddgam[..., c, d, j, i] = dd
                    ddgam[..., d, c, j, i] = dd

    # 3-Christoffels and their derivatives
    bracket = (
        np.einsum("...mdn->...dmn", dgam)
        + np.einsum("...ndm->...dmn", dgam)
        - dgam
    )
    chris = 0.5 * np.einsum("...ld,...dmn->...lmn", gaminv, bracket)
    dginv = -np.einsum("...la,...bad,...dk->...lbk", gaminv, dgam, gaminv)
    dbracket = (
        np.einsum("...amdn->...admn", ddgam)
        + np.einsum("...andm->...admn", ddgam)
        - ddgam
    )
    dchris = 0.5 * (
        np.einsum("...lad,...dmn->...almn", dginv, bracket)
        + np.einsum("...ld,...admn->...almn", gaminv, dbracket)
    )

    # R_ij = d_k chris^k_ij - d_i chris^k_kj + chris^k_km chris^m_ij
    #        - chris^k_im chris^m_kj      (dchris[..., a, l, m, n] = d_a chris^l_mn)
    ric = (
        np.einsum("...kkij->...ij", dchris)
        - np.einsum("...ikkj->...ij", dchris)
        + np.einsum("...kkm,...mij->...ij", chris, chris)
        - np.einsum("...kim,...mkj->...ij", chris, chris)
    )
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    scal = np.einsum("...ij,...ij->...", gaminv, ric)

    trk = np.einsum("...ij,...ij->...", gaminv, k)
    kup = np.einsum("...ia,...jb,...ab->...ij", gaminv, gaminv, k)
    ksq = np.einsum("...ij,...ij->...", kup, k)
    hamiltonian = scal - trk**2 + ksq

    # momentum: gamma^{jl} (d_j k_il - chris^m_{ji} k_ml - chris^m_{jl} k_im) - d_i trk
    dk = np.zeros(k.shape[:-2] + (3, 3, 3))
    kp = extrinsic_padded(state, ng)
    trk_p = np.einsum("...ij,...ij->...", np.linalg.inv(gam_p), kp)
    for i in range(3):
        for j in range(i, 3):
            comp = kp[..., i, j]
            for c in range(3):
                d = unpad(diff1(comp, c, dx), ng)
                dk[..., c, i, j] = d
                dk[..., c, j, i] = d
    dtrk = np.stack([unpad(diff1(trk_p, c, dx), ng) for c in range(3)], axis=-1)

    covdiv = (
        np.einsum("...jl,...jil->...i", gaminv, dk)
        - np.einsum("...jl,...mji,...ml->...i", gaminv, chris, k)
        - np.einsum("...jl,...mjl,...im->...i", gaminv, chris, k)
    )
    momentum = covdiv - dtrk
    return hamiltonian, momentum


def extrinsic_padded(state: MetricState, ng: int = 2) -> np.ndarray:
    """k_ij with the analytic (static) background continued into the ghosts."""
    from .evolve import padded_dth, padded_fields

    hp = sym_to_full(padded_fields(state, ng))
    a = -(hp[..., 0, 0] - 1.0)
    dtg_ij = sym_to_full(padded_dth(state, ng))[..., 1:, 1:]
    return -dtg_ij / (2.0 * a[..., None, None])


# ---------------------------------------------------------------------------
# null cone


def schwarzschild_null_cone(R: float, M: float, r):
    """Outgoing null-cone time t(r) = r - R + 4M ln((r-2M)/(R-2M)).

    Requires r >= R > 2M; always at least r - R.
    """
    r = np.asarray(r, dtype=float)
    if R <= 2.0 * M:
        raise ValueError("null cone requires R > 2M")
    if np.any(r < R):
        raise ValueError("null cone defined for r >= R")
    t = r - R + 4.0 * M * np.log((r - 2.0 * M) / (R - 2.0 * M))
    return t if t.ndim else float(t)
