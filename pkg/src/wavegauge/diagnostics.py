"""Vector-field diagnostics, energies, decay fits, and run bookkeeping.

The commuting vector fields are the four translations, three rotations,
three boosts, and the scaling field:

    d0..d3,  r12 = -x d_y + y d_x (etc.),  b_i = t d_i + x_i d_t,
    s = t d_t + x^i d_i.

Words of up to two fields applied to grid tensors are evaluated recursively;
time derivatives that arise are resolved through the evolution equation (the
state tower h, d_t h, d_t^2 h, d_t^3 h), and spatial derivatives through the
shared 4th-order stencils.  Energies, weighted tangential integrals, frame
norms of dh, and the light-cone transport residual are all computed from the
same machinery.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dfield
from typing import Optional

import numpy as np

from .state import GridSpec, MetricState, SYM_PAIRS, diff1, sym_to_full, unpad

VECTOR_FIELDS = ("d0", "d1", "d2", "d3", "r12", "r13", "r23", "b1", "b2", "b3", "s")


class UnsupportedOrderError(ValueError):
    pass


def _coefficients(tag: str, grid: GridSpec, t: float):
    """(Z^0, Z^1, Z^2, Z^3) and their time derivatives for one field."""
    X, Y, Z, _ = grid.coords()
    zero = 0.0
    one = 1.0
    if tag == "d0":
        return (one, zero, zero, zero), (zero, zero, zero, zero)
    if tag in ("d1", "d2", "d3"):
        c = [zero, zero, zero, zero]
        c[int(tag[1])] = one
        return tuple(c), (zero, zero, zero, zero)
    if tag == "r12":
        return (zero, Y, -X, zero), (zero, zero, zero, zero)
    if tag == "r13":
        return (zero, Z, zero, -X), (zero, zero, zero, zero)
    if tag == "r23":
        return (zero, zero, Z, -Y), (zero, zero, zero, zero)
    if tag in ("b1", "b2", "b3"):
        i = int(tag[1])
        c = [(X, Y, Z)[i - 1], zero, zero, zero]
        dc = [zero, zero, zero, zero]
        c[i] = t
        dc[i] = one
        return tuple(c), tuple(dc)
    if tag == "s":
        return (t, X, Y, Z), (one, zero, zero, zero)
    raise ValueError(f"unknown vector field {tag!r}")


class WordEvaluator:
    """Cached evaluation of d_t^m Z^word f on the grid.

    ``tower`` holds [f, d_t f, d_t^2 f, d_t^3 f]; words up to length 2 plus
    one explicit time derivative stay inside this tower (the vector-field
    coefficients are at most linear in t, so no deeper entries arise).
    """

    def __init__(self, grid: GridSpec, t: float, tower):
        self.grid = grid
        self.t = t
        self.tower = tower
        self._cache = {}
        self._dcache = {}

    def _diff(self, key, arr, axis):
        dkey = (key, axis)
        if dkey not in self._dcache:
            self._dcache[dkey] = diff1(arr, axis, self.grid.dx)
        return self._dcache[dkey]

    def field(self, word: tuple, m: int = 0):
        word = tuple(word)
        key = (word, m)
        if key in self._cache:
            return self._cache[key]
        if not word:
            if m >= len(self.tower):
                raise UnsupportedOrderError(
                    f"time-derivative order {m} exceeds the state tower")
            out = self.tower[m]
        elif m == 0:
            Z, rest = word[0], word[1:]
            (z0, z1, z2, z3), _ = _coefficients(Z, self.grid, self.t)
            f0 = self.field(rest, 0)
            f1 = self.field(rest, 1)
            out = z0 * f1
            for ax, coef in enumerate((z1, z2, z3)):
                if np.isscalar(coef) and coef == 0.0:
                    continue
                out = out + coef * self._diff((rest, 0), f0, ax)
        elif m == 1:
            Z, rest = word[0], word[1:]
            (z0, z1, z2, z3), (dz0, dz1, dz2, dz3) = _coefficients(Z, self.grid, self.t)
            f1 = self.field(rest, 1)
            f2 = self.field(rest, 2)
            out = dz0 * f1 + z0 * f2
            for ax, (coef, dcoef) in enumerate(((z1, dz1), (z2, dz2), (z3, dz3))):
                if not (np.isscalar(dcoef) and dcoef == 0.0):
                    out = out + dcoef * self._diff((rest, 0), self.field(rest, 0), ax)
                if not (np.isscalar(coef) and coef == 0.0):
                    out = out + coef * self._diff((rest, 1), f1, ax)
        elif m == 2:
            Z, rest = word[0], word[1:]
            (z0, z1, z2, z3), (dz0, dz1, dz2, dz3) = _coefficients(Z, self.grid, self.t)
            out = 2.0 * dz0 * self.field(rest, 2) + z0 * self.field(rest, 3)
            for ax, (coef, dcoef) in enumerate(((z1, dz1), (z2, dz2), (z3, dz3))):
                if not (np.isscalar(dcoef) and dcoef == 0.0):
                    out = out + 2.0 * dcoef * self._diff((rest, 1), self.field(rest, 1), ax)
                if not (np.isscalar(coef) and coef == 0.0):
                    out = out + coef * self._diff((rest, 2), self.field(rest, 2), ax)
        else:
            raise UnsupportedOrderError("words longer than 2 are not supported")
        self._cache[key] = out
        return out


def vector_field_apply(tag: str, f, dtf, grid: GridSpec, t: float):
    """Single application Z f = Z^0 d_t f + Z^i d_i f on a grid field."""
    ev = WordEvaluator(grid, t, [f, dtf])
    return ev.field((tag,), 0)


def words_up_to(order: int):
    if order > 2:
        raise UnsupportedOrderError("vector-field words are capped at order 2")
    words = [()]
    if order >= 1:
        words += [(z,) for z in VECTOR_FIELDS]
    if order >= 2:
        words += [(z1, z2) for z1 in VECTOR_FIELDS for z2 in VECTOR_FIELDS]
    return words


def interior_mask(grid: GridSpec, margin_cells: int, r_min: float = 0.0):
    n = grid.n
    mask = np.zeros((n, n, n), dtype=bool)
    s = slice(margin_cells, n - margin_cells)
    mask[s, s, s] = True
    if r_min > 0.0:
        _, _, _, r = grid.coords()
        mask &= r > r_min
    return mask


def energy_suite(state: MetricState, tower_fn, n_max: int = 0, gamma: float = 0.25):
    """Slice energies E_N and tangential rates dS_N/dt for N <= n_max.

    ``tower_fn`` maps the state to (dth, ddth, dddh) grid arrays (the
    evolver's ``time_tower``).  Returns a dict with instantaneous E_N
    (Riemann sums of |d Z^I h|^2 over the interior) and the S_N integrand
    rate at this slice; the run driver accumulates S_N in time.  A single
    interior margin (set by the deepest word) is used for every N so that
    E_0 <= E_1 <= ... holds exactly.
    """
    grid = state.grid
    dx = grid.dx
    if n_max > 0:
        dth, ddth, dddh = tower_fn(state)
    else:
        dth, ddth, dddh = state.dth, None, None
    margin = 3 + 2 * (n_max + 1)
    mask = interior_mask(grid, margin)
    tmask = interior_mask(grid, margin, r_min=4.0 * dx)

    X, Y, Z, r = grid.coords()
    w_x, w_y, w_z = X / r, Y / r, Z / r
    q = r - state.t
    s_weight = gamma / (1.0 + np.abs(q)) ** (1.0 + 2.0 * gamma)

    e_out = {}
    s_out = {}
    e_accum = 0.0
    s_accum = 0.0
    for order in range(n_max + 1):
        new_words = [w for w in words_up_to(order) if len(w) == order]
        for c in range(10):
            tower = [state.h[..., c], dth[..., c]]
            if ddth is not None:
                tower += [ddth[..., c], dddh[..., c]]
            ev = WordEvaluator(grid, state.t, tower)
            for word in new_words:
                f0 = ev.field(word, 0)
                f1 = ev.field(word, 1)
                dxf = diff1(f0, 0, dx)
                dyf = diff1(f0, 1, dx)
                dzf = diff1(f0, 2, dx)
                e_accum += float(np.sum((f1[mask] ** 2 + dxf[mask] ** 2
                                         + dyf[mask] ** 2 + dzf[mask] ** 2)))
                # tangential pieces: d_s and the angular projections
                dr = w_x * dxf + w_y * dyf + w_z * dzf
                ds = 0.5 * (f1 + dr)
                tan2 = (ds**2 + (dxf - w_x * dr) ** 2 + (dyf - w_y * dr) ** 2
                        + (dzf - w_z * dr) ** 2)
                s_accum += float(np.sum((tan2 * s_weight)[tmask]))
        e_out[order] = e_accum * dx**3
        s_out[order] = s_accum * dx**3
    return e_out, s_out


def grid_frame(grid: GridSpec, mask):
    """Null-frame vector fields (lowered L, Lbar and S1, S2) on masked cells."""
    X, Y, Z, r = grid.coords()
    pts = np.stack(np.broadcast_arrays(X, Y, Z), axis=-1)[mask]
    rr = np.linalg.norm(pts, axis=-1)
    w = pts / rr[:, None]
    e = np.zeros_like(w)
    on_x = np.abs(np.abs(w[:, 0]) - 1.0) < 1e-12
    e[on_x, 1] = 1.0
    e[~on_x, 0] = 1.0
    s1 = e - np.sum(e * w, axis=1)[:, None] * w
    s1 /= np.linalg.norm(s1, axis=1)[:, None]
    s2 = np.cross(w, s1)
    zeros = np.zeros(len(w))
    L = np.column_stack([np.ones(len(w)), w])
    Lb = np.column_stack([np.ones(len(w)), -w])
    S1 = np.column_stack([zeros, s1])
    S2 = np.column_stack([zeros, s2])
    mink = np.diag([-1.0, 1.0, 1.0, 1.0])
    return {"L": L, "Lb": Lb, "S1": S1, "S2": S2,
            "L_low": L @ mink, "Lb_low": Lb @ mink, "w": w, "r": rr}


def dh_frame_norms(state: MetricState, margin: int = 5):
    """(max |dh|_TU, max |dh|_UU) over the interior away from the origin."""
    grid = state.grid
    dx = grid.dx
    mask = interior_mask(grid, margin, r_min=4.0 * dx)
    fr = grid_frame(grid, mask)
    dh = np.zeros((int(mask.sum()), 4, 4, 4))
    dh[:, 0] = sym_to_full(state.dth)[mask]
    for c, (a, b) in enumerate(SYM_PAIRS):
        for ax in range(3):
            d = diff1(state.h[..., c], ax, dx)[mask]
            dh[:, ax + 1, a, b] = d
            dh[:, ax + 1, b, a] = d

    U_list = [fr["L"], fr["Lb"], fr["S1"], fr["S2"]]
    T_list = [fr["L"], fr["S1"], fr["S2"]]
    tu = np.zeros(len(dh))
    uu = np.zeros(len(dh))
    for u in U_list:
        du = np.einsum("pamn,pa->pmn", dh, u)
        for V in U_list:
            dV = np.einsum("pmn,pm->pn", du, V)
            for W in U_list:
                term = np.abs(np.einsum("pn,pn->p", dV, W))
                uu += term
                if V is not fr["Lb"]:
                    tu += term
    return float(np.max(tu)), float(np.max(uu))


def decay_fit(series: dict, t_min: float, t_max: Optional[float] = None):
    """Least-squares decay exponents from a diagnostics series.

    Fits log max|dh| and log max|dh|_TU against log(1 + t) over the window,
    plus the growth exponent of each recorded energy: E ~ (1+t)^p.
    Requires at least five samples in the window.
    """
    t = np.asarray(series["t"])
    sel = t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    if int(sel.sum()) < 5:
        raise ValueError("not enough samples in the fit window")
    logt = np.log1p(t[sel])
    A = np.vstack([logt, np.ones(logt.size)]).T

    def fit(vals):
        vals = np.maximum(np.asarray(vals, dtype=float)[sel], 1e-300)
        coef, *_ = np.linalg.lstsq(A, np.log(vals), rcond=None)
        return float(coef[0])

    out = {}
    if "max_dh" in series:
        out["p_all"] = -fit(series["max_dh"])
    if "max_dh_tu" in series:
        out["p_tu"] = -fit(series["max_dh_tu"])
    for key in series:
        if key.startswith("E"):
            out["growth_" + key] = fit(series[key])
    return out


# ---------------------------------------------------------------------------
# light-cone transport residual


def transport_residual(state: MetricState, tower_fn, r_min: float = 2.0,
                       r_max: Optional[float] = None):
    """Residual and majorant of the outgoing-transport form of the equation.

    Evaluates | (4 d_s - (H_LL / 2 g^LLb) d_q
                - (trbar H + H_LLb) / (2 g^LLb r)) d_q (r h) + r F / (2 g^LLb) |
    componentwise (max over components), together with the tangential
    majorant r |lap_omega h| + |H|_LT r |dbar dh| + |H| (r |dbar^2 h| +
    |dbar h| + |h|/r).  Returns (residual, majorant, mask).
    """
    from . import rhs as rhs_mod

    grid = state.grid
    dx = grid.dx
    margin = 7
    if r_max is None:
        r_max = grid.extent - margin * dx
    mask = interior_mask(grid, margin, r_min=r_min)
    _, _, _, r_full = grid.coords()
    mask &= r_full < r_max
    npts = int(mask.sum())
    fr = grid_frame(grid, mask)
    rr = fr["r"]

    dth, ddth, _ = tower_fn(state)

    h_full = sym_to_full(state.h)
    g = h_full + np.diag([-1.0, 1.0, 1.0, 1.0])
    gi_pts = np.linalg.inv(g[mask])
    mink_inv = np.diag([-1.0, 1.0, 1.0, 1.0])
    H = gi_pts - mink_inv

    H_LL = np.einsum("pab,pa,pb->p", H, fr["L_low"], fr["L_low"])
    H_LLb = np.einsum("pab,pa,pb->p", H, fr["L_low"], fr["Lb_low"])
    gLLb = -0.5 + 0.25 * H_LLb
    Q_w = np.eye(3)[None] - fr["w"][:, :, None] * fr["w"][:, None, :]
    trbarH = np.einsum("pij,pij->p", Q_w, H[:, 1:, 1:])

    # frame norms of H for the majorant
    U_low = [fr["L_low"], fr["Lb_low"], fr["S1"], fr["S2"]]
    T_low = [fr["L_low"], fr["S1"], fr["S2"]]
    H_LT = sum(np.abs(np.einsum("pab,pa,pb->p", H, fr["L_low"], V)) for V in T_low)
    H_UU = sum(np.abs(np.einsum("pab,pa,pb->p", H, U, V))
               for U in U_low for V in U_low)

    # F on masked points
    dh_pts = np.zeros((npts, 4, 4, 4))
    dh_pts[:, 0] = sym_to_full(dth)[mask]
    dh_grids = {}
    for c, (a, b) in enumerate(SYM_PAIRS):
        for ax in range(3):
            dgrid = diff1(state.h[..., c], ax, dx)
            dh_grids[(c, ax)] = dgrid
            dh_pts[:, ax + 1, a, b] = dgrid[mask]
            dh_pts[:, ax + 1, b, a] = dgrid[mask]
    F_pts = rhs_mod.F_exact(h_full[mask], dh_pts)

    X, Y, Z, r_grid = grid.coords()
    wx, wy, wz = X / r_grid, Y / r_grid, Z / r_grid

    residual = np.zeros(npts)
    majorant = np.zeros(npts)
    habs = np.zeros(npts)
    for c, (a, b) in enumerate(SYM_PAIRS):
        hc = state.h[..., c]
        dtc = dth[..., c]
        ddtc = ddth[..., c]
        dx_c = dh_grids[(c, 0)]
        dy_c = dh_grids[(c, 1)]
        dz_c = dh_grids[(c, 2)]
        dr_c = wx * dx_c + wy * dy_c + wz * dz_c
        # u = d_q (r h) = r/2 (d_r h - d_t h) + h/2
        u = 0.5 * r_grid * (dr_c - dtc) + 0.5 * hc
        # d_t u and d_r u
        drdt = wx * diff1(dtc, 0, dx) + wy * diff1(dtc, 1, dx) + wz * diff1(dtc, 2, dx)
        du_t = 0.5 * r_grid * (drdt - ddtc) + 0.5 * dtc
        du_x = diff1(u, 0, dx)
        du_y = diff1(u, 1, dx)
        du_z = diff1(u, 2, dx)
        du_r = wx * du_x + wy * du_y + wz * du_z
        ds_u = 0.5 * (du_t + du_r)
        dq_u = 0.5 * (du_r - du_t)

        texpr = (4.0 * ds_u[mask]
                 - (H_LL / (2.0 * gLLb)) * dq_u[mask]
                 - ((trbarH + H_LLb) / (2.0 * gLLb * rr)) * u[mask]
                 + rr * F_pts[:, a, b] / (2.0 * gLLb))
        residual = np.maximum(residual, np.abs(texpr))

        # majorant pieces
        lap = (diff1(dx_c, 0, dx) + diff1(dy_c, 1, dx) + diff1(dz_c, 2, dx))
        ddr = (wx * (wx * diff1(dx_c, 0, dx) + wy * diff1(dx_c, 1, dx) + wz * diff1(dx_c, 2, dx))
               + wy * (wx * diff1(dy_c, 0, dx) + wy * diff1(dy_c, 1, dx) + wz * diff1(dy_c, 2, dx))
               + wz * (wx * diff1(dz_c, 0, dx) + wy * diff1(dz_c, 1, dx) + wz * diff1(dz_c, 2, dx)))
        lap_omega = lap - ddr - 2.0 / r_grid * dr_c
        dbar_h2 = (0.5 * (dtc + dr_c)) ** 2 + (dx_c - wx * dr_c) ** 2 \
            + (dy_c - wy * dr_c) ** 2 + (dz_c - wz * dr_c) ** 2
        # tangential derivative magnitude of all first derivatives
        dbar_dh2 = np.zeros_like(hc)
        for dfield, dtfield in ((dx_c, diff1(dtc, 0, dx)), (dy_c, diff1(dtc, 1, dx)),
                                (dz_c, diff1(dtc, 2, dx)), (dtc, ddtc)):
            gx = diff1(dfield, 0, dx)
            gy = diff1(dfield, 1, dx)
            gz = diff1(dfield, 2, dx)
            gr = wx * gx + wy * gy + wz * gz
            dbar_dh2 += (0.5 * (dtfield + gr)) ** 2 + (gx - wx * gr) ** 2 \
                + (gy - wy * gr) ** 2 + (gz - wz * gr) ** 2
        dbar2_h2 = np.zeros_like(hc)
        for dfield in (0.5 * (dtc + dr_c), dx_c - wx * dr_c, dy_c - wy * dr_c,
                       dz_c - wz * dr_c):
            gx = diff1(dfield, 0, dx)
            gy = diff1(dfield, 1, dx)
            gz = diff1(dfield, 2, dx)
            gr = wx * gx + wy * gy + wz * gz
            dbar2_h2 += (gx - wx * gr) ** 2 + (gy - wy * gr) ** 2 + (gz - wz * gr) ** 2
        maj_c = (r_grid[mask] * np.abs(lap_omega[mask])
                 + H_LT * r_grid[mask] * np.sqrt(np.maximum(dbar_dh2[mask], 0.0))
                 + H_UU * (r_grid[mask] * np.sqrt(np.maximum(dbar2_h2[mask], 0.0))
                           + np.sqrt(np.maximum(dbar_h2[mask], 0.0))
                           + np.abs(hc[mask]) / r_grid[mask]))
        majorant = np.maximum(majorant, maj_c)
        habs = np.maximum(habs, np.abs(hc[mask]))
    return residual, majorant, mask


# ---------------------------------------------------------------------------
# global Sobolev inequality checks on analytic test functions


class PolyGauss:
    """p(t,x) * exp(-(|x - x0|^2 + (t - t0)^2)/w^2): closed under Z fields.

    The polynomial factor is a dict mapping exponent tuples (et, ex, ey, ez)
    to coefficients; differentiation and multiplication by coordinates stay
    inside the class, so words Z^I of any length are exact.
    """

    def __init__(self, coeffs, center, width):
        self.coeffs = dict(coeffs)
        self.center = tuple(center)   # (t0, x0, y0, z0)
        self.width = float(width)

    @classmethod
    def bump(cls, amplitude=1.0, center=(0.0, 0.0, 0.0, 0.0), width=1.0):
        return cls({(0, 0, 0, 0): amplitude}, center, width)

    def _mul_coord(self, coeffs, axis, shift=0.0):
        out = {}
        for ex, c in coeffs.items():
            e2 = list(ex)
            e2[axis] += 1
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + c
            if shift != 0.0:
                out[ex] = out.get(ex, 0.0) + shift * c
        return out

    def _dpoly(self, coeffs, axis):
        out = {}
        for ex, c in coeffs.items():
            if ex[axis] == 0:
                continue
            e2 = list(ex)
            e2[axis] -= 1
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * ex[axis]
        return out

    def derivative(self, axis):
        """d/dx_axis: product rule with the Gaussian factor."""
        dp = self._dpoly(self.coeffs, axis)
        # d/dx G = -2 (x - c)/w^2 G
        tail = {}
        for ex, c in self.coeffs.items():
            e2 = list(ex)
            e2[axis] += 1
            tail[tuple(e2)] = tail.get(tuple(e2), 0.0) - 2.0 * c / self.width**2
            tail[ex] = tail.get(ex, 0.0) + 2.0 * self.center[axis] * c / self.width**2
        merged = dict(dp)
        for ex, c in tail.items():
            merged[ex] = merged.get(ex, 0.0) + c
        return PolyGauss(merged, self.center, self.width)

    def apply_field(self, tag: str, t: float = None):
        """Apply one of the eleven commuting fields (symbolically in t)."""
        d = [self.derivative(a) for a in range(4)]
        if tag == "d0":
            return d[0]
        if tag in ("d1", "d2", "d3"):
            return d[int(tag[1])]

        def times(pg, axis, sign=1.0):
            out = {}
            for ex, c in pg.coeffs.items():
                e2 = list(ex)
                e2[axis] += 1
                out[tuple(e2)] = out.get(tuple(e2), 0.0) + sign * c
            return PolyGauss(out, pg.center, pg.width)

        if tag == "r12":   # y d_x - x d_y
            return times(d[1], 2)._add(times(d[2], 1, -1.0))
        if tag == "r13":
            return times(d[1], 3)._add(times(d[3], 1, -1.0))
        if tag == "r23":
            return times(d[2], 3)._add(times(d[3], 2, -1.0))
        if tag in ("b1", "b2", "b3"):
            i = int(tag[1])
            return times(d[i], 0)._add(times(d[0], i))
        if tag == "s":
            out = times(d[0], 0)
            for i in (1, 2, 3):
                out = out._add(times(d[i], i))
            return out
        raise ValueError(tag)

    def _add(self, other):
        merged = dict(self.coeffs)
        for ex, c in other.coeffs.items():
            merged[ex] = merged.get(ex, 0.0) + c
        return PolyGauss(merged, self.center, self.width)

    def evaluate(self, t, X, Y, Z):
        """Evaluate on a spatial grid at slice time t."""
        t0, x0, y0, z0 = self.center
        G = np.exp(-(((X - x0) ** 2 + (Y - y0) ** 2 + (Z - z0) ** 2
                      + (t - t0) ** 2) / self.width**2))
        out = np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y), np.shape(Z)))
        for (et, ex, ey, ez), c in self.coeffs.items():
            out += c * (t**et) * (X**ex) * (Y**ey) * (Z**ez)
        return out * G


def sobolev_ratio(bump: PolyGauss, t: float, order: int = 3,
                  grid_pts: int = 48, box: float = None):
    """max |phi| (1+t+|t-r|)(1+|t-r|)^{1/2} / sum_{|I|<=order} ||Z^I phi||_L2.

    The L2 norms are quadratures over a bump-adapted cube at slice time t;
    the test-function algebra is exact, so words of order 3 are available
    even though grid tensors are capped at order 2.
    """
    t0, x0, y0, z0 = bump.center
    if box is None:
        box = 8.0 * bump.width
    ax = np.linspace(-box, box, grid_pts)
    dx = ax[1] - ax[0]
    X, Y, Z = np.meshgrid(ax + x0, ax + y0, ax + z0, indexing="ij", sparse=True)

    total = 0.0
    frontier = [bump]
    norm = np.sqrt(np.sum(bump.evaluate(t, X, Y, Z) ** 2) * dx**3)
    total += norm
    for _ in range(order):
        nxt = []
        for f in frontier:
            for tag in VECTOR_FIELDS:
                g = f.apply_field(tag)
                nxt.append(g)
        for g in nxt:
            total += np.sqrt(np.sum(g.evaluate(t, X, Y, Z) ** 2) * dx**3)
        frontier = nxt

    vals = np.abs(bump.evaluate(t, X, Y, Z))
    r = np.sqrt(np.broadcast_arrays(X**2 + Y**2 + Z**2)[0])
    weight = (1.0 + t + np.abs(t - r)) * np.sqrt(1.0 + np.abs(t - r))
    lhs = float(np.max(vals * weight))
    return lhs / total


# ---------------------------------------------------------------------------
# run bookkeeping


@dataclass
class DiagnosticsSeries:
    """Time series of run diagnostics; column names match the CSV header."""

    columns: tuple = ("t", "E0", "E0_sup", "S0", "gauge_l2", "gauge_linf",
                      "max_dh", "max_dh_tu", "max_h")
    rows: list = dfield(default_factory=list)

    def add(self, **kw):
        self.rows.append([kw.get(c, float("nan")) for c in self.columns])

    def series(self, name):
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows])

    def as_dict(self):
        return {c: self.series(c) for c in self.columns}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def run_evolution(state: MetricState, evolver, t_final: float,
                  diag_stride: int = 10, gamma: float = 0.25,
                  n_energy: int = 0, collect_gauge: bool = True,
                  collect_frames: bool = True,
                  series: Optional[DiagnosticsSeries] = None):
    """March to t_final collecting diagnostics every diag_stride steps.

    S_N is accumulated by the trapezoid rule on the recorded integrand rate;
    E_N_sup tracks the running maximum of the slice energy (the paper-style
    sup-in-time variant).  On an evolution failure the exception carries the
    partial series.
    """
    from .evolve import EvolutionError, gauge_monitor

    if series is None:
        cols = ["t"]
        for N in range(n_energy + 1):
            cols += [f"E{N}", f"E{N}_sup", f"S{N}"]
        cols += ["gauge_l2", "gauge_linf", "max_dh", "max_dh_tu", "max_h"]
        series = DiagnosticsSeries(columns=tuple(cols))
    sup = [0.0] * (n_energy + 1)
    s_accum = [0.0] * (n_energy + 1)
    last = {"t": None, "rate": None}

    def record(st):
        row = {"t": st.t, "max_h": float(np.max(np.abs(st.h[evolver.mask])))}
        e_out, s_rate = energy_suite(st, evolver.time_tower, n_energy, gamma)
        for N in range(n_energy + 1):
            sup[N] = max(sup[N], e_out[N])
            if last["t"] is not None:
                s_accum[N] += 0.5 * (last["rate"][N] + s_rate[N]) * (st.t - last["t"])
            row[f"E{N}"] = e_out[N]
            row[f"E{N}_sup"] = sup[N]
            row[f"S{N}"] = s_accum[N]
        last["t"] = st.t
        last["rate"] = s_rate
        if collect_gauge:
            row["gauge_l2"], row["gauge_linf"] = gauge_monitor(st, evolver.mask)
        if collect_frames:
            row["max_dh_tu"], row["max_dh"] = dh_frame_norms(st)
        series.add(**row)

    record(state)
    step_i = 0
    cur = state
    try:
        while cur.t < t_final - 1e-9:
            cur = evolver.step(cur)
            step_i += 1
            if step_i % diag_stride == 0 or cur.t >= t_final - 1e-9:
                record(cur)
    except EvolutionError as e:
        e.series = series
        raise
    return cur, series


def write_summary(path, config: dict, results: dict, checks: dict):
    """JSON run summary: config echo, fitted quantities, pass/fail flags."""
    payload = {
        "config": {k: repr(v) if not isinstance(v, (int, float, str, bool, type(None)))
                   else v for k, v in sorted(config.items())},
        "results": results,
        "checks": checks,
        "passed": all(bool(v) for v in checks.values()),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
    return payload["passed"]
