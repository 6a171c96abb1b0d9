"""Time-varying scalar fields on non-uniform (t, x, y, z) grids.

Each axis is a sorted coordinate array searched by bisection, so spacing
can be arbitrary (log-spaced depth, distorted projected lat/lon). A query
brackets every axis, collapses any axis that hits a stored coordinate
exactly, and blends the remaining 1/2/4/8 spatial neighbours, then blends
the two bracketing time slices.

Missing samples are stored as NaN. Queries that would blend across a hole
raise :class:`MissingDataError` instead of quietly extrapolating.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

MISSING = math.nan
EARTH_RADIUS = 6_371_000.0


class EnvGridError(ValueError):
    pass


class MissingDataError(EnvGridError):
    pass


class Bracket(NamedTuple):
    lo: int
    hi: int
    fraction: float
    out_of_range: bool = False


class AxisIndex:
    """Strictly increasing coordinates with O(log n) bracketing."""

    __slots__ = ("coords", "array")

    def __init__(self, coords: Sequence[float]):
        arr = np.asarray(coords, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise EnvGridError("axis needs at least one coordinate")
        if not np.all(np.isfinite(arr)):
            raise EnvGridError("axis coordinates must be finite")
        if np.any(np.diff(arr) <= 0):
            raise EnvGridError("axis coordinates must be strictly increasing")
        self.array = arr
        self.coords = arr.tolist()

    def __len__(self) -> int:
        return len(self.coords)

    def __repr__(self) -> str:
        return f"AxisIndex(n={len(self)}, [{self.coords[0]}, {self.coords[-1]}])"


def bracket(axis: AxisIndex, q: float) -> Bracket:
    c = axis.coords
    if q <= c[0]:
        return Bracket(0, 0, 0.0, q < c[0])
    if q >= c[-1]:
        n = len(c) - 1
        return Bracket(n, n, 0.0, q > c[-1])
    i = bisect.bisect_left(c, q)
    if c[i] == q:
        return Bracket(i, i, 0.0)
    lo = i - 1
    return Bracket(lo, i, (q - c[lo]) / (c[i] - c[lo]))


def _weights(b: Bracket) -> tuple[tuple[int, float], ...]:
    if b.lo == b.hi:
        return ((b.lo, 1.0),)
    return ((b.lo, 1.0 - b.fraction), (b.hi, b.fraction))


@dataclass
class EnvGrid:
    t: AxisIndex
    x: AxisIndex
    y: AxisIndex
    z: AxisIndex
    values: np.ndarray
    field_name: str = "value"
    missing_marker: float = field(default=MISSING, repr=False)

    def __post_init__(self):
        shape = (len(self.t), len(self.x), len(self.y), len(self.z))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != shape:
            raise EnvGridError(f"values shape {self.values.shape} does not match axes {shape}")
        self._flat = self.values.ravel()
        self._strides = (shape[1] * shape[2] * shape[3], shape[2] * shape[3], shape[3])

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @classmethod
    def from_function(cls, t, x, y, z, fn: Callable, field_name: str = "value") -> "EnvGrid":
        """Sample ``fn(t, x, y, z)`` (numpy broadcasting) on the given axes."""
        T, X, Y, Z = np.meshgrid(t, x, y, z, indexing="ij")
        return cls(AxisIndex(t), AxisIndex(x), AxisIndex(y), AxisIndex(z),
                   np.asarray(fn(T, X, Y, Z), dtype=float) + np.zeros(T.shape), field_name)

    @classmethod
    def constant(cls, value: float, field_name: str = "value") -> "EnvGrid":
        return cls(AxisIndex([0.0]), AxisIndex([0.0]), AxisIndex([0.0]), AxisIndex([0.0]),
                   np.full((1, 1, 1, 1), float(value)), field_name)

    def query(self, t: float, p: Sequence[float]) -> float:
        return self.query_flagged(t, p)[0]

    def query_flagged(self, t: float, p: Sequence[float]) -> tuple[float, bool]:
        """Interpolated value plus a flag set when any axis was clamped."""
        bt = bracket(self.t, t)
        bx = bracket(self.x, p[0])
        by = bracket(self.y, p[1])
        bz = bracket(self.z, p[2])
        st, sx, sy = self._strides
        flat = self._flat
        total = 0.0
        for it, wt in _weights(bt):
            for ix, wx in _weights(bx):
                for iy, wy in _weights(by):
                    base = it * st + ix * sx + iy * sy
                    for iz, wz in _weights(bz):
                        v = flat.item(base + iz)
                        if v != v:
                            raise MissingDataError(self._hole(it, ix, iy, iz))
                        total += wt * wx * wy * wz * v
        oor = bt.out_of_range or bx.out_of_range or by.out_of_range or bz.out_of_range
        return total, oor

    def _hole(self, it: int, ix: int, iy: int, iz: int) -> str:
        return (f"{self.field_name}: no sample at t={self.t.coords[it]}, x={self.x.coords[ix]}, "
                f"y={self.y.coords[iy]}, z={self.z.coords[iz]}")

    def query_many(self, t, points) -> np.ndarray:
        """Vectorised :meth:`query` for arrays of times ``(n,)`` and points ``(n, 3)``."""
        points = np.asarray(points, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), points.shape[:1])
        brackets = [_bracket_many(ax, q) for ax, q in
                    ((self.t, t), (self.x, points[:, 0]), (self.y, points[:, 1]), (self.z, points[:, 2]))]
        (lt, ht, ft), (lx, hx, fx), (ly, hy, fy), (lz, hz, fz) = brackets
        st, sx, sy = self._strides
        flat = self._flat
        out = np.zeros(points.shape[0])
        for it, wt in ((lt, 1.0 - ft), (ht, ft)):
            for ix, wx in ((lx, 1.0 - fx), (hx, fx)):
                wtx = wt * wx
                btx = it * st + ix * sx
                for iy, wy in ((ly, 1.0 - fy), (hy, fy)):
                    wtxy = wtx * wy
                    b = btx + iy * sy
                    out += wtxy * (1.0 - fz) * flat[b + lz]
                    out += wtxy * fz * flat[b + hz]
        if np.isnan(out).any():
            k = int(np.flatnonzero(np.isnan(out))[0])
            raise MissingDataError(
                f"{self.field_name}: query {k} at t={t[k]}, p={points[k].tolist()} touches a missing sample")
        return out


def _bracket_many(axis: AxisIndex, q: np.ndarray):
    c = axis.array
    n = c.size
    if n == 1:
        z = np.zeros(q.shape, dtype=np.intp)
        return z, z, np.zeros(q.shape)
    hi = np.searchsorted(c, q, side="left")
    hi = np.clip(hi, 1, n - 1)
    lo = hi - 1
    clo = c[lo]
    frac = np.clip((q - clo) / (c[hi] - clo), 0.0, 1.0)
    # exact hit on (or clamp to) the upper coordinate collapses onto it
    exact_hi = frac == 1.0
    lo = np.where(exact_hi, hi, lo)
    frac = np.where(exact_hi, 0.0, frac)
    # collapsed axis: make hi == lo so a zero weight never multiplies a hole
    hi = np.where(frac == 0.0, lo, hi)
    return lo, hi, frac


def query(grid: EnvGrid, t: float, p: Sequence[float]) -> float:
    return grid.query(t, p)


@dataclass
class CurrentField:
    """World-frame current components; absent components read as zero."""

    east: EnvGrid | None = None
    north: EnvGrid | None = None
    up: EnvGrid | None = None

    def is_empty(self) -> bool:
        return self.east is None and self.north is None and self.up is None


def current_at(grids: CurrentField | None, t: float, p: Sequence[float]) -> tuple[float, float, float]:
    if grids is None:
        return (0.0, 0.0, 0.0)
    return (
        grids.east.query(t, p) if grids.east is not None else 0.0,
        grids.north.query(t, p) if grids.north is not None else 0.0,
        grids.up.query(t, p) if grids.up is not None else 0.0,
    )


@dataclass(frozen=True)
class Equirectangular:
    """Local tangent-plane projection about ``(lat0, lon0)`` in degrees."""

    lat0: float
    lon0: float

    def forward(self, lat, lon):
        k = math.pi / 180.0
        x = EARTH_RADIUS * (np.asarray(lon) - self.lon0) * k * math.cos(self.lat0 * k)
        y = EARTH_RADIUS * (np.asarray(lat) - self.lat0) * k
        return x, y


def load_env(path: str | Path, projection: Equirectangular | None = None,
             field_name: str | None = None) -> EnvGrid:
    """Read ``t,x,y,z,value`` (or ``t,lat,lon,depth,value`` with a projection)."""
    import pandas as pd

    path = Path(path)
    try:
        df = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise EnvGridError(f"{path}: empty file") from exc
    cols = [str(c).strip().lower() for c in df.columns]
    df.columns = cols
    if len(cols) != 5:
        raise EnvGridError(f"{path}:1: expected 5 columns, header is {cols}")
    geo = cols[:4] == ["t", "lat", "lon", "depth"]
    if cols[:4] != ["t", "x", "y", "z"] and not geo:
        raise EnvGridError(f"{path}:1: header must be t,x,y,z,<field> or t,lat,lon,depth,<field>")
    if geo and projection is None:
        raise EnvGridError(f"{path}: lat/lon columns need an equirectangular projection")
    if df.empty:
        raise EnvGridError(f"{path}: no data rows")
    if not all(pd.api.types.is_numeric_dtype(df[c]) for c in cols) or df.isna().to_numpy().any():
        raw = pd.read_csv(path, dtype=str, skipinitialspace=True)
        bad = raw.apply(pd.to_numeric, errors="coerce").isna().any(axis=1).to_numpy()
        row = int(np.flatnonzero(bad)[0]) if bad.any() else 0
        raise EnvGridError(f"{path}:{row + 2}: unparsable row {raw.iloc[row].tolist()}")
    arr = df.to_numpy(dtype=float)
    t, a, b, c, v = arr.T
    if geo:
        x, y = projection.forward(a, b)
        z = -c
    else:
        x, y, z = a, b, c
    return _grid_from_samples(t, x, y, z, v, field_name or cols[4], str(path))


def _grid_from_samples(t, x, y, z, v, field_name: str, source: str = "") -> EnvGrid:
    axes = [np.unique(col) for col in (t, x, y, z)]
    idx = [np.searchsorted(ax, col) for ax, col in zip(axes, (t, x, y, z))]
    shape = tuple(ax.size for ax in axes)
    lin = np.ravel_multi_index(idx, shape)
    # keep the last occurrence of each cell
    rev_unique, rev_pos = np.unique(lin[::-1], return_index=True)
    if rev_unique.size != lin.size:
        log.warning("%s: %d duplicate coordinates collapsed to the last value",
                    source or field_name, lin.size - rev_unique.size)
    keep = lin.size - 1 - rev_pos
    values = np.full(int(np.prod(shape)), MISSING)
    values[lin[keep]] = v[keep]
    return EnvGrid(*(AxisIndex(ax) for ax in axes), values.reshape(shape), field_name)


def export_env(grid: EnvGrid, path: str | Path) -> int:
    """Write every stored (non-missing) sample as ``t,x,y,z,<field>``. Returns the row count."""
    T, X, Y, Z = np.meshgrid(grid.t.array, grid.x.array, grid.y.array, grid.z.array, indexing="ij")
    v = grid.values
    keep = ~np.isnan(v)
    rows = np.column_stack([T[keep], X[keep], Y[keep], Z[keep], v[keep]])
    with open(path, "w") as fh:
        fh.write(f"t,x,y,z,{grid.field_name}\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.17g")
    return rows.shape[0]
