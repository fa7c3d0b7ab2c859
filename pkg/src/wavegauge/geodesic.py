"""Causal geodesics in analytic or grid-interpolated metrics.

The integrator is an embedded Dormand-Prince 5(4) pair with two rejection
channels: the usual local truncation estimate and a drift check on the
conserved norm g(V, V) (= -A^2 along an affinely parameterized geodesic).
Metric providers supply g and its first partials at arbitrary points; the
grid provider interpolates a frozen :class:`MetricState` slab with
tensor-product quartic Lagrange polynomials and differentiates the
interpolant itself, matching the 4th-order accuracy of the evolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .frame import MINK
from .state import MetricState, sym_to_full


class ProviderDomainError(ValueError):
    pass


class StepSizeUnderflow(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# metric providers


class MinkowskiProvider:
    def metric(self, x):
        return MINK.copy()

    def dmetric(self, x):
        return np.zeros((4, 4, 4))

    def in_domain(self, x):
        return True


class SchwarzschildProvider:
    """Closed-form wave-coordinate Schwarzschild exterior, r > 2M margin."""

    def __init__(self, M: float, r_min_factor: float = 1.05):
        self.M = M
        self.r_min = 2.0 * M * r_min_factor

    def _check(self, x):
        r = float(np.linalg.norm(x[1:]))
        if r <= self.r_min:
            raise ProviderDomainError(f"left Schwarzschild domain at r = {r:.4g}")

    def metric(self, x):
        from .data import schwarzschild_wave

        self._check(x)
        return schwarzschild_wave(self.M, x[1:])

    def dmetric(self, x):
        from .data import schwarzschild_wave_jet

        self._check(x)
        return schwarzschild_wave_jet(self.M, x[1:]).dg

    def in_domain(self, x):
        return float(np.linalg.norm(x[1:])) > self.r_min


class GridMetricProvider:
    """Tri-quartic interpolation of a frozen metric state (static slab).

    Quartic Lagrange interpolation on the 5^3 nodes nearest the query point;
    first derivatives come from differentiating the Lagrange basis, so the
    conservation-error model matches the 4th-order grid solution.
    """

    def __init__(self, state: MetricState, margin_cells: int = 3):
        self.state = state
        self.grid = state.grid
        self.h_full = sym_to_full(state.h)
        self.margin = margin_cells
        self._ax = self.grid.axis()

    def _locate(self, x):
        dx = self.grid.dx
        n = self.grid.n
        idx = []
        for c in range(3):
            pos = (x[c + 1] + self.grid.extent) / dx
            i0 = int(np.floor(pos)) - 2
            i0 = min(max(i0, 0), n - 5)
            if pos < self.margin or pos > n - 1 - self.margin:
                raise ProviderDomainError("query point left the grid interior")
            idx.append(i0)
        return idx

    def _basis(self, c, i0, xq):
        nodes = self._ax[i0:i0 + 5]
        L = np.ones(5)
        dL = np.zeros(5)
        for a in range(5):
            for b in range(5):
                if b == a:
                    continue
                L[a] *= (xq - nodes[b]) / (nodes[a] - nodes[b])
            s = 0.0
            for b in range(5):
                if b == a:
                    continue
                term = 1.0 / (nodes[a] - nodes[b])
                for cc in range(5):
                    if cc == a or cc == b:
                        continue
                    term *= (xq - nodes[cc]) / (nodes[a] - nodes[cc])
                s += term
            dL[a] = s
        return L, dL

    def metric(self, x):
        g, _ = self._interp(x)
        return g

    def dmetric(self, x):
        _, dg = self._interp(x)
        return dg

    def _interp(self, x):
        i0, j0, k0 = self._locate(x)
        Lx, dLx = self._basis(0, i0, x[1])
        Ly, dLy = self._basis(1, j0, x[2])
        Lz, dLz = self._basis(2, k0, x[3])
        cube = self.h_full[i0:i0 + 5, j0:j0 + 5, k0:k0 + 5]
        g = MINK + np.einsum("i,j,k,ijkmn->mn", Lx, Ly, Lz, cube)
        dg = np.zeros((4, 4, 4))
        dg[1] = np.einsum("i,j,k,ijkmn->mn", dLx, Ly, Lz, cube)
        dg[2] = np.einsum("i,j,k,ijkmn->mn", Lx, dLy, Lz, cube)
        dg[3] = np.einsum("i,j,k,ijkmn->mn", Lx, Ly, dLz, cube)
        return g, dg

    def in_domain(self, x):
        try:
            self._locate(x)
            return True
        except ProviderDomainError:
            return False


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    tau: np.ndarray       # (n,)
    X: np.ndarray         # (n, 4)
    V: np.ndarray         # (n, 4)
    norm: np.ndarray      # (n,) g(V, V)
    A2: float             # conserved -g(V, V) at launch
    truncated: bool = False
    reason: str = ""

    def max_norm_drift(self) -> float:
        return float(np.max(np.abs(self.norm + self.A2)))


def _geodesic_rhs(provider, y):
    x, v = y[:4], y[4:]
    g = provider.metric(x)
    dg = provider.dmetric(x)
    gi = np.linalg.inv(g)
    bracket = np.einsum("mdn->dmn", dg) + np.einsum("ndm->dmn", dg) - dg
    chris = 0.5 * np.einsum("ld,dmn->lmn", gi, bracket)
    acc = -np.einsum("lmn,m,n->l", chris, v, v)
    return np.concatenate([v, acc])


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def _dp_step(provider, y, h):
    k = [np.asarray(_geodesic_rhs(provider, y))]
    for i in range(1, 7):
        yi = y + h * sum(a * kk for a, kk in zip(_DP_A[i], k))
        k.append(np.asarray(_geodesic_rhs(provider, yi)))
    k = np.array(k)
    y5 = y + h * (_DP_B5 @ k)
    y4 = y + h * (_DP_B4 @ k)
    err = float(np.max(np.abs(y5 - y4)))
    return y5, err


def integrate(provider, Y, xi, tau_max: float, tol: float = 1e-10,
              samples: int = 200, stop: Optional[Callable] = None) -> Trajectory:
    """Integrate a causal geodesic from (Y, xi) up to tau_max.

    Steps are rejected when the embedded error estimate or the drift of the
    conserved norm exceeds the tolerance.  The trajectory is sampled at
    ``samples`` uniformly spaced affine-parameter values (steps are clipped
    to land exactly on them).  ``stop(X, V) -> float`` optionally ends the
    run at its first sign change (bisection-refined); the final point is then
    appended.

    Raises on spacelike initial data; leaving the provider domain truncates
    the trajectory with a reason instead of raising.
    """
    Y = np.asarray(Y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g0 = provider.metric(Y)
    norm0 = float(xi @ g0 @ xi)
    if norm0 > 1e-12:
        raise ValueError("initial velocity is spacelike")
    if xi[0] <= 0.0:
        raise ValueError("initial velocity must be future oriented")
    A2 = -norm0

    sample_taus = np.linspace(0.0, tau_max, samples + 1)
    out_tau, out_y = [0.0], [np.concatenate([Y, xi])]
    y = out_y[0].copy()
    tau = 0.0
    next_i = 1
    hstep = tau_max / (20.0 * samples)
    truncated, reason = False, ""
    stop_prev = stop(Y, xi) if stop else None

    while tau < tau_max - 1e-13 and next_i <= samples:
        target = sample_taus[next_i]
        h = min(hstep, target - tau)
        clipped = h >= target - tau - 1e-15
        try:
            ynew, err = _dp_step(provider, y, h)
        except ProviderDomainError as e:
            truncated, reason = True, str(e)
            break
        scale = tol * max(1.0, float(np.max(np.abs(y))))
        gnew = provider.metric(ynew[:4])
        drift = abs(float(ynew[4:] @ gnew @ ynew[4:]) + A2)
        prev_drift = abs(float(y[4:] @ provider.metric(y[:4]) @ y[4:]) + A2)
        ok = err <= scale and (drift - prev_drift) <= 100.0 * scale
        if not ok:
            hstep = max(h * max(0.2, 0.9 * (scale / max(err, 1e-300)) ** 0.2), 1e-14)
            if hstep < 1e-13 * tau_max:
                raise StepSizeUnderflow("step size underflow in geodesic integration")
            continue
        if stop is not None:
            stop_new = stop(ynew[:4], ynew[4:])
            if stop_prev is not None and stop_prev * stop_new < 0.0:
                lo, hi = 0.0, h
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    ymid, _ = _dp_step(provider, y, mid)
                    if stop_prev * stop(ymid[:4], ymid[4:]) < 0.0:
                        hi = mid
                    else:
                        lo = mid
                    if hi - lo < 1e-14 * max(1.0, h):
                        break
                yend, _ = _dp_step(provider, y, hi)
                out_tau.append(tau + hi)
                out_y.append(yend)
                tau = tau_max  # terminate
                break
            stop_prev = stop_new
        y = ynew
        tau += h
        if not clipped:
            hstep = min(h * min(5.0, 0.9 * (scale / max(err, 1e-300)) ** 0.2),
                        tau_max / 10.0)
        if clipped and abs(tau - target) < 1e-13:
            out_tau.append(tau)
            out_y.append(y.copy())
            next_i += 1

    ys = np.array(out_y)
    taus = np.array(out_tau)
    norms = np.empty(len(ys))
    for i, yy in enumerate(ys):
        norms[i] = float(yy[4:] @ provider.metric(yy[:4]) @ yy[4:])
    return Trajectory(tau=taus, X=ys[:, :4], V=ys[:, 4:], norm=norms, A2=A2,
                      truncated=truncated, reason=reason)


# ---------------------------------------------------------------------------
# causality and completeness checks


@dataclass
class CausalReport:
    A: float
    eta0: float
    margins: np.ndarray   # 2|eta^0| - (A + |eta^i|) per i
    ok: bool


def causal_check(eta, g) -> CausalReport:
    """Check A + |eta^i| <= 2 |eta^0| for a g-causal vector eta.

    The inequality holds whenever |h| = |g - m| <= 1/4; spacelike eta is a
    domain error.
    """
    eta = np.asarray(eta, dtype=float)
    q = float(eta @ np.asarray(g) @ eta)
    if q > 1e-14 * max(1.0, float(np.max(np.abs(eta)) ** 2)):
        raise ValueError("eta is spacelike with respect to g")
    A = np.sqrt(max(-q, 0.0))
    margins = 2.0 * abs(eta[0]) - (A + np.abs(eta[1:]))
    return CausalReport(A=A, eta0=eta[0], margins=margins, ok=bool(np.all(margins >= 0)))


@dataclass
class CompletenessReport:
    delta: float
    eps_h: float
    escape: bool
    v0_positive: bool
    affine_span: float
    inconclusive: bool


def completeness_probe(traj: Trajectory, provider) -> CompletenessReport:
    """Fit the coordinate-time growth exponent and check escape.

    delta is defined through t(tau)^(1 - delta) ~ C (1 + v0(0) tau): a
    log-log regression of t against 1 + v0(0) tau over the latter half of
    the trajectory, reported together with eps_h = max |g - m| along the
    path.  Escape requires |X| to increase monotonically over the last
    quarter of the samples.
    """
    inconclusive = traj.truncated
    t = traj.X[:, 0]
    v00 = traj.V[0, 0]
    xi_arg = 1.0 + v00 * traj.tau
    half = len(t) // 2
    mask = slice(half, None)
    tt = np.maximum(t[mask] - t[0] + 1.0, 1e-12)
    A = np.vstack([np.log(xi_arg[mask]), np.ones(len(tt))]).T
    coef, *_ = np.linalg.lstsq(A, np.log(tt), rcond=None)
    slope = coef[0]
    delta = 1.0 - 1.0 / slope if slope > 0 else np.inf

    eps_h = 0.0
    for X in traj.X[:: max(1, len(t) // 50)]:
        eps_h = max(eps_h, float(np.max(np.abs(provider.metric(X) - MINK))))

    rads = np.linalg.norm(traj.X[:, 1:], axis=1)
    last = rads[3 * len(rads) // 4:]
    escape = bool(np.all(np.diff(last) > 0))
    v0_positive = bool(np.all(traj.V[:, 0] > 0))
    return CompletenessReport(delta=float(delta), eps_h=eps_h, escape=escape,
                              v0_positive=v0_positive,
                              affine_span=float(traj.tau[-1]),
                              inconclusive=inconclusive)
