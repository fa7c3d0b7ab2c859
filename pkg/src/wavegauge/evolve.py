"""Method-of-lines evolution of the reduced system on a 3D box.

The PDE integrated is, in first-order-in-time form,

    d_t h = k,
    d_t k = ( F(h)(dh, dh) - 2 g^{0i} d_i k - g^{ij} d_i d_j h ) / g^{00},

with 4th-order centered spatial stencils and the classic 4-stage explicit
time integrator.  The right-hand side F is the exact g-contracted quadratic
form (identical to the P + Q + G assembly of :mod:`wavegauge.rhs`), so the
evolution solves the true reduced equations with no truncation of the
nonlinearity.

Boundaries: the outer 3-cell shell is frozen at its initial (exact
Schwarzschild) values, justified because the grid invariant keeps the shell
inside the region where the solution equals the static exterior for the
whole run; an optional inner radial mask freezes a ball around the origin
the same way for annulus tests.

The per-point kernel is JIT-compiled (numba) and parallelized over grid
slabs; every point writes only its own output slot, so results are
bit-identical for any thread count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as data_mod
from .state import GridSpec, MetricState, SYM_PAIRS, full_to_sym, sym_to_full, unpad

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = os.environ.get("WAVEGAUGE_NO_NUMBA", "") == ""
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    HAVE_NUMBA = False

_SYM_A = np.array([p[0] for p in SYM_PAIRS], dtype=np.int64)
_SYM_B = np.array([p[1] for p in SYM_PAIRS], dtype=np.int64)
_FULL_IDX = np.zeros((4, 4), dtype=np.int64)
for _c, (_a, _b) in enumerate(SYM_PAIRS):
    _FULL_IDX[_a, _b] = _c
    _FULL_IDX[_b, _a] = _c


class EvolutionError(RuntimeError):
    """Evolution failure carrying the last valid state and diagnostics."""

    def __init__(self, msg, state=None, series=None):
        super().__init__(msg)
        self.state = state
        self.series = series


def set_threads(n: Optional[int]):
    if n is not None and HAVE_NUMBA:
        numba.set_num_threads(max(1, int(n)))


# ---------------------------------------------------------------------------
# ghost padding with the analytic exterior


def padded_fields(state: MetricState, ng: int = 2) -> np.ndarray:
    """h continued into ng ghost layers with the analytic static exterior."""
    n = state.grid.n
    hp = np.zeros((n + 2 * ng, n + 2 * ng, n + 2 * ng, 10))
    sl = (slice(ng, -ng),) * 3
    hp[sl] = state.h
    if state.mass != 0.0:
        Xp, Yp, Zp, rp = state.grid.padded_coords(ng)
        shell = np.ones(hp.shape[:3], dtype=bool)
        shell[sl] = False
        pts = np.stack(np.broadcast_arrays(Xp, Yp, Zp), axis=-1)[shell]
        gs = data_mod.schwarzschild_wave(state.mass, pts)
        hp[shell] = full_to_sym(gs - np.diag([-1.0, 1.0, 1.0, 1.0]))
    return hp


def padded_dth(state: MetricState, ng: int = 2) -> np.ndarray:
    """d_t h continued into the ghosts (zero: the exterior is static)."""
    n = state.grid.n
    dp = np.zeros((n + 2 * ng, n + 2 * ng, n + 2 * ng, 10))
    dp[(slice(ng, -ng),) * 3] = state.dth
    return dp


def evolution_mask(grid: GridSpec, inner_radius: Optional[float] = None,
                   shell_cells: int = 3) -> np.ndarray:
    """True on cells that evolve; the shell (and optional inner ball) freeze."""
    n = grid.n
    mask = np.zeros((n, n, n), dtype=bool)
    s = slice(shell_cells, n - shell_cells)
    mask[s, s, s] = True
    if inner_radius is not None:
        _, _, _, r = grid.coords()
        mask &= r > inner_radius
    return mask


# ---------------------------------------------------------------------------
# JIT kernel


if HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _rhs_pencil(i, h, dth, mask, dx, full_idx, sym_a, sym_b,
                    out_hdot, out_kdot):
        """One i-slab of the pencil-vectorized right-hand side.

        One (i, j) pencil of nk points is processed at a time with the
        k-index innermost in every elementary operation, so the compiler can
        vectorize each small contraction over contiguous memory.  Output
        arrays must arrive zeroed; only masked cells are written.
        """
        n = h.shape[0]
        klo = 3
        khi = n - 3
        nk = khi - klo
        inv12dx = 1.0 / (12.0 * dx)
        inv12dx2 = 1.0 / (12.0 * dx * dx)
        inv144dx2 = 1.0 / (144.0 * dx * dx)
        if True:
            dsp = np.empty((3, 10, nk))
            dkk = np.empty((3, 10, nk))
            dd6 = np.empty((6, 10, nk))       # xx, yy, zz, xy, xz, yz
            aug = np.empty((4, 8, nk))
            fcol = np.empty(nk)
            D1 = np.empty((4, 10, nk))
            X = np.empty((4, 10, nk))
            Z = np.empty((4, 4, 4, nk))
            v = np.empty((4, nk))
            w = np.empty((4, nk))
            zv = np.empty((4, nk))
            yv = np.empty((4, nk))
            accA = np.empty(nk)
            accB = np.empty(nk)
            accC = np.empty(nk)
            accD = np.empty(nk)
            F = np.empty((10, nk))
            smin = 1e300
            for j in range(3, n - 3):
                # ---- stencils (4th order; mixed = nested first derivatives)
                for k in range(nk):
                    kk = k + klo
                    for c in range(10):
                        dsp[0, c, k] = (h[i - 2, j, kk, c] - 8.0 * h[i - 1, j, kk, c]
                                        + 8.0 * h[i + 1, j, kk, c] - h[i + 2, j, kk, c]) * inv12dx
                        dsp[1, c, k] = (h[i, j - 2, kk, c] - 8.0 * h[i, j - 1, kk, c]
                                        + 8.0 * h[i, j + 1, kk, c] - h[i, j + 2, kk, c]) * inv12dx
                        dsp[2, c, k] = (h[i, j, kk - 2, c] - 8.0 * h[i, j, kk - 1, c]
                                        + 8.0 * h[i, j, kk + 1, c] - h[i, j, kk + 2, c]) * inv12dx
                        dkk[0, c, k] = (dth[i - 2, j, kk, c] - 8.0 * dth[i - 1, j, kk, c]
                                        + 8.0 * dth[i + 1, j, kk, c] - dth[i + 2, j, kk, c]) * inv12dx
                        dkk[1, c, k] = (dth[i, j - 2, kk, c] - 8.0 * dth[i, j - 1, kk, c]
                                        + 8.0 * dth[i, j + 1, kk, c] - dth[i, j + 2, kk, c]) * inv12dx
                        dkk[2, c, k] = (dth[i, j, kk - 2, c] - 8.0 * dth[i, j, kk - 1, c]
                                        + 8.0 * dth[i, j, kk + 1, c] - dth[i, j, kk + 2, c]) * inv12dx
                        dd6[0, c, k] = (-h[i - 2, j, kk, c] + 16.0 * h[i - 1, j, kk, c]
                                        - 30.0 * h[i, j, kk, c] + 16.0 * h[i + 1, j, kk, c]
                                        - h[i + 2, j, kk, c]) * inv12dx2
                        dd6[1, c, k] = (-h[i, j - 2, kk, c] + 16.0 * h[i, j - 1, kk, c]
                                        - 30.0 * h[i, j, kk, c] + 16.0 * h[i, j + 1, kk, c]
                                        - h[i, j + 2, kk, c]) * inv12dx2
                        dd6[2, c, k] = (-h[i, j, kk - 2, c] + 16.0 * h[i, j, kk - 1, c]
                                        - 30.0 * h[i, j, kk, c] + 16.0 * h[i, j, kk + 1, c]
                                        - h[i, j, kk + 2, c]) * inv12dx2
                        r_m2 = (h[i - 2, j - 2, kk, c] - 8.0 * h[i - 1, j - 2, kk, c]
                                + 8.0 * h[i + 1, j - 2, kk, c] - h[i + 2, j - 2, kk, c])
                        r_m1 = (h[i - 2, j - 1, kk, c] - 8.0 * h[i - 1, j - 1, kk, c]
                                + 8.0 * h[i + 1, j - 1, kk, c] - h[i + 2, j - 1, kk, c])
                        r_p1 = (h[i - 2, j + 1, kk, c] - 8.0 * h[i - 1, j + 1, kk, c]
                                + 8.0 * h[i + 1, j + 1, kk, c] - h[i + 2, j + 1, kk, c])
                        r_p2 = (h[i - 2, j + 2, kk, c] - 8.0 * h[i - 1, j + 2, kk, c]
                                + 8.0 * h[i + 1, j + 2, kk, c] - h[i + 2, j + 2, kk, c])
                        dd6[3, c, k] = (r_m2 - 8.0 * r_m1 + 8.0 * r_p1 - r_p2) * inv144dx2
                        r_m2 = (h[i - 2, j, kk - 2, c] - 8.0 * h[i - 1, j, kk - 2, c]
                                + 8.0 * h[i + 1, j, kk - 2, c] - h[i + 2, j, kk - 2, c])
                        r_m1 = (h[i - 2, j, kk - 1, c] - 8.0 * h[i - 1, j, kk - 1, c]
                                + 8.0 * h[i + 1, j, kk - 1, c] - h[i + 2, j, kk - 1, c])
                        r_p1 = (h[i - 2, j, kk + 1, c] - 8.0 * h[i - 1, j, kk + 1, c]
                                + 8.0 * h[i + 1, j, kk + 1, c] - h[i + 2, j, kk + 1, c])
                        r_p2 = (h[i - 2, j, kk + 2, c] - 8.0 * h[i - 1, j, kk + 2, c]
                                + 8.0 * h[i + 1, j, kk + 2, c] - h[i + 2, j, kk + 2, c])
                        dd6[4, c, k] = (r_m2 - 8.0 * r_m1 + 8.0 * r_p1 - r_p2) * inv144dx2
                        r_m2 = (h[i, j - 2, kk - 2, c] - 8.0 * h[i, j - 1, kk - 2, c]
                                + 8.0 * h[i, j + 1, kk - 2, c] - h[i, j + 2, kk - 2, c])
                        r_m1 = (h[i, j - 2, kk - 1, c] - 8.0 * h[i, j - 1, kk - 1, c]
                                + 8.0 * h[i, j + 1, kk - 1, c] - h[i, j + 2, kk - 1, c])
                        r_p1 = (h[i, j - 2, kk + 1, c] - 8.0 * h[i, j - 1, kk + 1, c]
                                + 8.0 * h[i, j + 1, kk + 1, c] - h[i, j + 2, kk + 1, c])
                        r_p2 = (h[i, j - 2, kk + 2, c] - 8.0 * h[i, j - 1, kk + 2, c]
                                + 8.0 * h[i, j + 1, kk + 2, c] - h[i, j + 2, kk + 2, c])
                        dd6[5, c, k] = (r_m2 - 8.0 * r_m1 + 8.0 * r_p1 - r_p2) * inv144dx2

                # ---- inverse metric: Gauss-Jordan, diagonal pivots
                # (safe in the |h| < 1/4 regime where g is near-Minkowski)
                for a in range(4):
                    for b in range(4):
                        c = full_idx[a, b]
                        mval = -1.0 if (a == 0 and b == 0) else (1.0 if a == b else 0.0)
                        for k in range(nk):
                            aug[a, b, k] = mval + h[i, j, k + klo, c]
                    for b in range(4, 8):
                        ival = 1.0 if b - 4 == a else 0.0
                        for k in range(nk):
                            aug[a, b, k] = ival
                for col in range(4):
                    for k in range(nk):
                        fcol[k] = 1.0 / aug[col, col, k]
                    for b in range(8):
                        for k in range(nk):
                            aug[col, b, k] *= fcol[k]
                    for row in range(4):
                        if row == col:
                            continue
                        for k in range(nk):
                            fcol[k] = aug[row, col, k]
                        for b in range(8):
                            for k in range(nk):
                                aug[row, b, k] -= fcol[k] * aug[col, b, k]
                gi = aug[:, 4:8, :]

                # ---- first derivatives D1[a, c]
                for c in range(10):
                    for k in range(nk):
                        D1[0, c, k] = dth[i, j, k + klo, c]
                        D1[1, c, k] = dsp[0, c, k]
                        D1[2, c, k] = dsp[1, c, k]
                        D1[3, c, k] = dsp[2, c, k]

                # ---- half-raised blocks
                # X[a, (m n)] = gi[a, A] D1[A, (m n)]   (derivative slot raised)
                for a in range(4):
                    for c in range(10):
                        for k in range(nk):
                            X[a, c, k] = (gi[a, 0, k] * D1[0, c, k]
                                          + gi[a, 1, k] * D1[1, c, k]
                                          + gi[a, 2, k] * D1[2, c, k]
                                          + gi[a, 3, k] * D1[3, c, k])
                # Z[a, b, n] = gi[b, B] D1[a, (B n)]    (first tensor slot raised)
                for a in range(4):
                    for b in range(4):
                        for nn in range(4):
                            c0 = full_idx[0, nn]
                            c1 = full_idx[1, nn]
                            c2 = full_idx[2, nn]
                            c3 = full_idx[3, nn]
                            for k in range(nk):
                                Z[a, b, nn, k] = (gi[b, 0, k] * D1[a, c0, k]
                                                  + gi[b, 1, k] * D1[a, c1, k]
                                                  + gi[b, 2, k] * D1[a, c2, k]
                                                  + gi[b, 3, k] * D1[a, c3, k])

                # ---- trace vectors: v[m] = Z[m, a, a], w[n] = Z[a, a, n]
                for m in range(4):
                    for k in range(nk):
                        v[m, k] = Z[m, 0, 0, k] + Z[m, 1, 1, k] + Z[m, 2, 2, k] + Z[m, 3, 3, k]
                        w[m, k] = Z[0, 0, m, k] + Z[1, 1, m, k] + Z[2, 2, m, k] + Z[3, 3, m, k]
                for a in range(4):
                    for k in range(nk):
                        zv[a, k] = (gi[a, 0, k] * v[0, k] + gi[a, 1, k] * v[1, k]
                                    + gi[a, 2, k] * v[2, k] + gi[a, 3, k] * v[3, k])
                        yv[a, k] = (gi[a, 0, k] * w[0, k] + gi[a, 1, k] * w[1, k]
                                    + gi[a, 2, k] * w[2, k] + gi[a, 3, k] * w[3, k])

                # ---- F for the 10 symmetric pairs
                # accumulate the quadratic contractions directly into F so
                # each Z row is streamed once per (a, b) pass:
                #   F += -1/2 pair + T1 - T2a + T3a(m,n) + T3a(n,m)
                for cp in range(10):
                    for k in range(nk):
                        F[cp, k] = 0.0
                for a in range(4):
                    for b in range(4):
                        for cp in range(10):
                            m = sym_a[cp]
                            nn = sym_b[cp]
                            cab_m = full_idx[b, m]
                            for k in range(nk):
                                F[cp, k] += (-0.5 * Z[m, a, b, k] * Z[nn, b, a, k]
                                             + X[a, cab_m, k] * Z[a, b, nn, k]
                                             - Z[b, a, nn, k] * Z[a, b, m, k]
                                             + Z[m, a, b, k] * Z[a, b, nn, k]
                                             + Z[nn, a, b, k] * Z[a, b, m, k])
                # remaining rank-one and trace pieces
                for cp in range(10):
                    m = sym_a[cp]
                    nn = sym_b[cp]
                    c0m = full_idx[0, m]
                    c1m = full_idx[1, m]
                    c2m = full_idx[2, m]
                    c3m = full_idx[3, m]
                    c0n = full_idx[0, nn]
                    c1n = full_idx[1, nn]
                    c2n = full_idx[2, nn]
                    c3n = full_idx[3, nn]
                    for k in range(nk):
                        sym_d1 = (D1[m, c0n, k] + D1[nn, c0m, k])
                        t3b = yv[0, k] * sym_d1
                        t5a = zv[0, k] * sym_d1
                        sym_d1 = (D1[m, c1n, k] + D1[nn, c1m, k])
                        t3b += yv[1, k] * sym_d1
                        t5a += zv[1, k] * sym_d1
                        sym_d1 = (D1[m, c2n, k] + D1[nn, c2m, k])
                        t3b += yv[2, k] * sym_d1
                        t5a += zv[2, k] * sym_d1
                        sym_d1 = (D1[m, c3n, k] + D1[nn, c3m, k])
                        t3b += yv[3, k] * sym_d1
                        t5a += zv[3, k] * sym_d1
                        F[cp, k] += (0.25 * v[m, k] * v[nn, k]
                                     + w[m, k] * w[nn, k]
                                     - t3b
                                     + 0.5 * t5a
                                     - 0.5 * (v[m, k] * w[nn, k] + v[nn, k] * w[m, k]))

                # ---- assemble the equation on masked cells
                for c in range(10):
                    for k in range(nk):
                        kk = k + klo
                        if not mask[i, j, kk]:
                            continue
                        lap = (gi[1, 1, k] * dd6[0, c, k]
                               + gi[2, 2, k] * dd6[1, c, k]
                               + gi[3, 3, k] * dd6[2, c, k]
                               + 2.0 * (gi[1, 2, k] * dd6[3, c, k]
                                        + gi[1, 3, k] * dd6[4, c, k]
                                        + gi[2, 3, k] * dd6[5, c, k]))
                        adv = (gi[0, 1, k] * dkk[0, c, k]
                               + gi[0, 2, k] * dkk[1, c, k]
                               + gi[0, 3, k] * dkk[2, c, k])
                        out_hdot[i, j, kk, c] = dth[i, j, kk, c]
                        out_kdot[i, j, kk, c] = (F[c, k] - 2.0 * adv - lap) / gi[0, 0, k]
                for k in range(nk):
                    if mask[i, j, k + klo] and abs(gi[0, 0, k]) < smin:
                        smin = abs(gi[0, 0, k])
        return smin

    @njit(cache=True, parallel=True)
    def _rhs_kernel(h, dth, mask, dx, full_idx, sym_a, sym_b,
                    out_hdot, out_kdot, g00_min):
        n = h.shape[0]
        for i in prange(3, n - 3):
            g00_min[i] = _rhs_pencil(i, h, dth, mask, dx, full_idx,
                                     sym_a, sym_b, out_hdot, out_kdot)

    @njit(cache=True, parallel=True)
    def _stage_update(y0a, y0b, ka, kb, c, acc_a, acc_b, w, tmp_a, tmp_b):
        # tmp = y0 + c k;  acc += w k   (single pass, both field groups)
        na = y0a.size
        fa = y0a.reshape(na)
        fka = ka.reshape(na)
        fta = tmp_a.reshape(na)
        faa = acc_a.reshape(na)
        fb = y0b.reshape(na)
        fkb = kb.reshape(na)
        ftb = tmp_b.reshape(na)
        fab = acc_b.reshape(na)
        for p in prange(na):
            fta[p] = fa[p] + c * fka[p]
            faa[p] += w * fka[p]
            ftb[p] = fb[p] + c * fkb[p]
            fab[p] += w * fkb[p]

    @njit(cache=True, parallel=True)
    def _final_update(y0a, y0b, acc_a, acc_b, c, out_a, out_b):
        na = y0a.size
        fa = y0a.reshape(na)
        faa = acc_a.reshape(na)
        foa = out_a.reshape(na)
        fb = y0b.reshape(na)
        fab = acc_b.reshape(na)
        fob = out_b.reshape(na)
        for p in prange(na):
            foa[p] = fa[p] + c * faa[p]
            fob[p] = fb[p] + c * fab[p]


# ---------------------------------------------------------------------------
# reference (pure numpy) right-hand side, used to validate the kernel


def rhs_reference(state: MetricState, mask: np.ndarray):
    """Slow vectorized evaluation of the same right-hand side."""
    from . import rhs as rhs_mod
    from .state import diff1, diff2

    grid = state.grid
    dx = grid.dx
    h_full = sym_to_full(state.h)
    g = h_full + np.diag([-1.0, 1.0, 1.0, 1.0])
    gi = np.linalg.inv(g)

    dh = np.zeros(state.h.shape[:3] + (4, 4, 4))
    dh[..., 0, :, :] = sym_to_full(state.dth)
    ddh_sp = np.zeros(state.h.shape[:3] + (3, 3, 4, 4))
    dk_sp = np.zeros(state.h.shape[:3] + (3, 4, 4))
    for c, (a, b) in enumerate(SYM_PAIRS):
        comp = state.h[..., c]
        d1 = [diff1(comp, ax, dx) for ax in range(3)]
        for ax in range(3):
            dh[..., ax + 1, a, b] = d1[ax]
            dh[..., ax + 1, b, a] = d1[ax]
            dkc = diff1(state.dth[..., c], ax, dx)
            dk_sp[..., ax, a, b] = dkc
            dk_sp[..., ax, b, a] = dkc
        for ax in range(3):
            for ax2 in range(ax, 3):
                dd = diff2(comp, ax, dx) if ax == ax2 else diff1(d1[ax], ax2, dx)
                for (p, q) in ((ax, ax2), (ax2, ax)):
                    ddh_sp[..., p, q, a, b] = dd
                    ddh_sp[..., p, q, b, a] = dd

    F = rhs_mod.F_exact(h_full, dh)
    lap = np.einsum("...pq,...pqmn->...mn", gi[..., 1:, 1:], ddh_sp)
    adv = np.einsum("...p,...pmn->...mn", gi[..., 0, 1:], dk_sp)
    kdot_full = (F - 2.0 * adv - lap) / gi[..., 0, 0][..., None, None]
    hdot = np.where(mask[..., None], state.dth, 0.0)
    kdot = np.where(mask[..., None], full_to_sym(kdot_full), 0.0)
    g00 = np.abs(gi[..., 0, 0])
    gmin = float(np.min(g00[mask])) if np.any(mask) else float(np.min(g00))
    return hdot, kdot, gmin


@dataclass
class EvolveOptions:
    """Switches for the evolution driver."""

    inner_mask_radius: Optional[float] = None
    use_numba: bool = True
    threads: Optional[int] = None
    ko_dissipation: float = 0.0     # 6th-order Kreiss-Oliger strength, 0 = off
    h_max: float = 0.25
    g00_min: float = 0.5


class Evolver:
    """Time stepper bound to a grid, mass, and evolution mask."""

    def __init__(self, grid: GridSpec, mass: float, options: EvolveOptions = None):
        self.grid = grid
        self.mass = mass
        self.options = options or EvolveOptions()
        self.mask = evolution_mask(grid, self.options.inner_mask_radius)
        self._mask_u8 = self.mask.astype(np.uint8)
        self.use_numba = HAVE_NUMBA and self.options.use_numba
        set_threads(self.options.threads)
        shape = (grid.n, grid.n, grid.n, 10)
        # persistent stage buffers; the kernel only writes masked cells, so
        # zero-initialized unmasked entries stay zero across reuse
        self._kbuf = [(np.zeros(shape), np.zeros(shape)) for _ in range(2)]
        self._acc = (np.empty(shape), np.empty(shape))
        self._tmp = (np.empty(shape), np.empty(shape))
        self._kidx = 0

    def _rhs(self, h, dth, reuse=False):
        if self.use_numba:
            if reuse:
                out_h, out_k = self._kbuf[self._kidx]
                self._kidx = 1 - self._kidx
            else:
                out_h = np.zeros_like(h)
                out_k = np.zeros_like(dth)
            g00_min = np.full(self.grid.n, 1e300)
            _rhs_kernel(np.ascontiguousarray(h), np.ascontiguousarray(dth),
                        self._mask_u8, self.grid.dx, _FULL_IDX,
                        _SYM_A, _SYM_B, out_h, out_k, g00_min)
            return out_h, out_k, float(np.min(g00_min))
        st = MetricState(t=0.0, h=h, dth=dth, grid=self.grid, mass=self.mass)
        return rhs_reference(st, self.mask)

    def time_tower(self, state: MetricState, delta: float = 1e-6):
        """(dth, ddth, dddh): time derivatives resolved from the equation.

        The third derivative is the directional derivative of the first-order
        reduction along the state's own motion, evaluated by a centered
        difference in state space.
        """
        _, ddth, _ = self._rhs(state.h, state.dth)
        scale = max(float(np.max(np.abs(state.dth))), 1e-12)
        eps = delta / scale
        _, kp, _ = self._rhs(state.h + eps * state.dth, state.dth + eps * ddth)
        _, km, _ = self._rhs(state.h - eps * state.dth, state.dth - eps * ddth)
        dddh = (kp - km) / (2.0 * eps)
        return state.dth, ddth, dddh

    def step(self, state: MetricState) -> MetricState:
        """One classic 4-stage explicit step; frozen cells stay bit-identical."""
        dt = self.grid.dt
        h0, k0 = state.h, state.dth

        if self.use_numba:
            acc_h, acc_k = self._acc
            tmp_h, tmp_k = self._tmp
            acc_h.fill(0.0)
            acc_k.fill(0.0)
            a1, b1, gmin = self._rhs(h0, k0, reuse=True)
            if gmin < self.options.g00_min:
                raise EvolutionError(f"|g^00| dropped to {gmin:.3g}", state=state)
            _stage_update(h0, k0, a1, b1, 0.5 * dt, acc_h, acc_k, 1.0, tmp_h, tmp_k)
            a2, b2, _ = self._rhs(tmp_h, tmp_k, reuse=True)
            _stage_update(h0, k0, a2, b2, 0.5 * dt, acc_h, acc_k, 2.0, tmp_h, tmp_k)
            a3, b3, _ = self._rhs(tmp_h, tmp_k, reuse=True)
            _stage_update(h0, k0, a3, b3, dt, acc_h, acc_k, 2.0, tmp_h, tmp_k)
            a4, b4, _ = self._rhs(tmp_h, tmp_k, reuse=True)
            h = np.empty_like(h0)
            k = np.empty_like(k0)
            _stage_update(h0, k0, a4, b4, 0.0, acc_h, acc_k, 1.0, tmp_h, tmp_k)
            _final_update(h0, k0, acc_h, acc_k, dt / 6.0, h, k)
        else:
            a1, b1, gmin = self._rhs(h0, k0)
            if gmin < self.options.g00_min:
                raise EvolutionError(f"|g^00| dropped to {gmin:.3g}", state=state)
            a2, b2, _ = self._rhs(h0 + 0.5 * dt * a1, k0 + 0.5 * dt * b1)
            a3, b3, _ = self._rhs(h0 + 0.5 * dt * a2, k0 + 0.5 * dt * b2)
            a4, b4, _ = self._rhs(h0 + dt * a3, k0 + dt * b3)
            h = h0 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            k = k0 + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)

        if self.options.ko_dissipation > 0.0:
            _apply_ko_filter(h, self.mask, self.options.ko_dissipation)
            _apply_ko_filter(k, self.mask, self.options.ko_dissipation)

        new = MetricState(t=state.t + dt, h=h, dth=k, grid=self.grid, mass=self.mass)
        amp = float(np.max(np.abs(h[self.mask])))
        if not np.isfinite(amp):
            raise EvolutionError("non-finite fields", state=state)
        if amp >= self.options.h_max:
            raise EvolutionError(f"|h| reached {amp:.3g} >= 1/4 on the evolved region",
                                 state=state)
        return new


def _apply_ko_filter(fields, mask, eps):
    """6th-order Kreiss-Oliger dissipation, applied in place on masked cells."""
    w = np.array([1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0]) / 64.0
    n = fields.shape[0]
    corr = np.zeros_like(fields)
    for ax in range(3):
        for off, coef in zip(range(-3, 4), w):
            sl_in = [slice(3, n - 3)] * 3
            sl_in[ax] = slice(3 + off, n - 3 + off)
            sl_out = (slice(3, n - 3),) * 3
            corr[sl_out] += coef * fields[tuple(sl_in)]
    fields -= eps * np.where(mask[..., None], corr, 0.0)


def step(state: MetricState, inner_mask_radius: Optional[float] = None,
         **kw) -> MetricState:
    """Single-step convenience wrapper around :class:`Evolver`."""
    ev = Evolver(state.grid, state.mass,
                 EvolveOptions(inner_mask_radius=inner_mask_radius, **kw))
    return ev.step(state)


# ---------------------------------------------------------------------------
# gauge monitor


def gauge_residual_fields(state: MetricState) -> np.ndarray:
    """Grid field Gamma^l computed with the shared 4th-order stencils."""
    from .state import diff1

    ng = 2
    dx = state.grid.dx
    hp = padded_fields(state, ng)
    g = sym_to_full(state.h) + np.diag([-1.0, 1.0, 1.0, 1.0])
    gi = np.linalg.inv(g)

    dg = np.zeros(state.h.shape[:3] + (4, 4, 4))
    dg[..., 0, :, :] = sym_to_full(state.dth)
    for c, (a, b) in enumerate(SYM_PAIRS):
        comp = hp[..., c]
        for ax in range(3):
            d = unpad(diff1(comp, ax, dx), ng)
            dg[..., ax + 1, a, b] = d
            dg[..., ax + 1, b, a] = d

    bracket = (np.einsum("...mdn->...dmn", dg) + np.einsum("...ndm->...dmn", dg) - dg)
    chris = 0.5 * np.einsum("...ld,...dmn->...lmn", gi, bracket)
    return np.einsum("...mn,...lmn->...l", gi, chris)


def gauge_monitor(state: MetricState, mask: Optional[np.ndarray] = None):
    """(L2, Linf) norms of the wave-coordinate residual over the slice."""
    gam = gauge_residual_fields(state)
    if mask is None:
        mask = evolution_mask(state.grid)
    vals = gam[mask]
    dx = state.grid.dx
    l2 = float(np.sqrt(np.sum(vals**2) * dx**3))
    linf = float(np.max(np.abs(vals))) if vals.size else 0.0
    return l2, linf
