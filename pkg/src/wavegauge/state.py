"""Grid geometry, evolution state, 4th-order stencils, checkpoint format.

Symmetric 2-tensor grid fields are stored as ``(n, n, n, 10)`` arrays with
the component order of ``SYM_PAIRS`` (00, 01, 02, 03, 11, 12, 13, 22, 23, 33).
The cubic grid has ``n`` points per axis on [-extent, extent]; for even n the
coordinate origin falls between grid points, so radial formulas never see
r = 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SYM_PAIRS = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
SYM_INDEX = {p: i for i, p in enumerate(SYM_PAIRS)}
for (_a, _b), _i in list(SYM_INDEX.items()):
    SYM_INDEX[(_b, _a)] = _i

CHECKPOINT_MAGIC = b"WGEV"
CHECKPOINT_VERSION = 1

# 4th-order centered stencil weights
_D1_W = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2_W = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class GridSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Cubic evolution grid: n points per axis on [-extent, extent]."""

    n: int
    extent: float
    dt_factor: float = 0.25
    t_final: float = 1.0

    def __post_init__(self):
        if self.n < 16:
            raise GridSpecError("grid too small (n < 16)")
        if self.dt_factor <= 0.0 or self.dt_factor > 0.25:
            raise GridSpecError("dt_factor must lie in (0, 0.25]")
        if self.dx <= 0.0:
            raise GridSpecError("nonpositive grid spacing")
        margin = 6.0 * self.dx
        if self.extent <= self.t_final + 1.0 + margin:
            raise GridSpecError(
                "extent must exceed t_final + 1 + stencil margin so the outer "
                "boundary stays in the exact-Schwarzschild region"
            )

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / (self.n - 1)

    @property
    def dt(self) -> float:
        return self.dt_factor * self.dx

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.n)

    def coords(self):
        """Sparse meshgrid (X, Y, Z) plus the radius field."""
        ax = self.axis()
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        r = np.sqrt(X * X + Y * Y + Z * Z)
        return X, Y, Z, r

    def padded_coords(self, ng: int = 2):
        dx = self.dx
        ax = np.concatenate(
            [
                self.axis()[0] - dx * np.arange(ng, 0, -1),
                self.axis(),
                self.axis()[-1] + dx * np.arange(1, ng + 1),
            ]
        )
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        return X, Y, Z, np.sqrt(X * X + Y * Y + Z * Z)


@dataclass
class MetricState:
    """Grid fields (h, d_t h) at time t, plus the grid and mass."""

    t: float
    h: np.ndarray     # (n, n, n, 10)
    dth: np.ndarray   # (n, n, n, 10)
    grid: GridSpec
    mass: float = 0.0

    def copy(self) -> "MetricState":
        return MetricState(self.t, self.h.copy(), self.dth.copy(), self.grid, self.mass)

    def validate(self, h_max: float = 0.25):
        if not np.all(np.isfinite(self.h)) or not np.all(np.isfinite(self.dth)):
            raise ValueError("non-finite field values")
        amp = float(np.max(np.abs(self.h)))
        if amp >= h_max:
            raise ValueError(f"|h| = {amp:.3g} exceeds the smallness bound {h_max}")


def sym_to_full(s):
    """(..., 10) symmetric storage -> (..., 4, 4)."""
    s = np.asarray(s)
    out = np.empty(s.shape[:-1] + (4, 4), dtype=s.dtype)
    for idx, (a, b) in enumerate(SYM_PAIRS):
        out[..., a, b] = s[..., idx]
        out[..., b, a] = s[..., idx]
    return out


def full_to_sym(t):
    """(..., 4, 4) -> (..., 10) symmetric storage."""
    t = np.asarray(t)
    out = np.empty(t.shape[:-2] + (10,), dtype=t.dtype)
    for idx, (a, b) in enumerate(SYM_PAIRS):
        out[..., idx] = t[..., a, b]
    return out


def diff1(f, axis: int, dx: float, out=None):
    """4th-order centered first derivative along a spatial axis.

    The two cells nearest each face are left as zero; pad the input if values
    are needed there.
    """
    if out is None:
        out = np.zeros_like(f)
    core = [slice(None)] * f.ndim
    core[axis] = slice(2, -2)
    acc = None
    for k, w in zip(range(-2, 3), _D1_W):
        if w == 0.0:
            continue
        sl = [slice(None)] * f.ndim
        sl[axis] = slice(2 + k, f.shape[axis] - 2 + k)
        term = w * f[tuple(sl)]
        acc = term if acc is None else acc + term
    out[tuple(core)] = acc / dx
    return out


def diff2(f, axis: int, dx: float, out=None):
    """4th-order centered second derivative along a spatial axis."""
    if out is None:
        out = np.zeros_like(f)
    core = [slice(None)] * f.ndim
    core[axis] = slice(2, -2)
    acc = None
    for k, w in zip(range(-2, 3), _D2_W):
        sl = [slice(None)] * f.ndim
        sl[axis] = slice(2 + k, f.shape[axis] - 2 + k)
        term = w * f[tuple(sl)]
        acc = term if acc is None else acc + term
    out[tuple(core)] = acc / (dx * dx)
    return out


def unpad(f, ng: int = 2):
    sl = tuple(slice(ng, -ng) for _ in range(3))
    return f[sl + (Ellipsis,)] if f.ndim > 3 else f[sl]


def write_checkpoint(path, state: MetricState):
    """Flat little-endian binary dump: header then 20 fields in SYM_PAIRS order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, state.grid.n))
        fh.write(struct.pack("<dddd", state.grid.extent, state.grid.dt_factor,
                             state.t, state.mass))
        fh.write(struct.pack("<d", state.grid.t_final))
        for c in range(10):
            fh.write(np.ascontiguousarray(state.h[..., c], dtype="<f8").tobytes())
        for c in range(10):
            fh.write(np.ascontiguousarray(state.dth[..., c], dtype="<f8").tobytes())


def read_checkpoint(path) -> MetricState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a wavegauge checkpoint")
        version, n = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        extent, dt_factor, t, mass = struct.unpack("<dddd", fh.read(32))
        (t_final,) = struct.unpack("<d", fh.read(8))
        grid = GridSpec(n=n, extent=extent, dt_factor=dt_factor, t_final=t_final)
        count = n * n * n
        h = np.empty((n, n, n, 10))
        dth = np.empty((n, n, n, 10))
        for c in range(10):
            h[..., c] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n, n, n)
        for c in range(10):
            dth[..., c] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n, n, n)
    return MetricState(t=t, h=h, dth=dth, grid=grid, mass=mass)
