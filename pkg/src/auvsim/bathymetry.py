"""Tiled seafloor heightmaps streamed through a small LRU cache.

Samples are cell-centred: sample ``(gx, gy)`` of the global lattice sits at
``origin + (g + 0.5) * cell_size``. Tile ``(i, j)`` holds the samples with
``gx // tile_cells == i`` and ``gy // tile_cells == j``. Bilinear lookups
use the four surrounding samples of the *global* lattice, so queries near
a seam may touch (and load) a neighbouring tile and stay continuous.

Tile file layout (little-endian)::

    8s   magic  b"AUVTILE1"
    f64  origin_x
    f64  origin_y
    i64  rows
    i64  cols
    f64  cell_size
    f32  depths[rows * cols]   row-major, row 0 at origin_y (south), z up (negative below sea level)
"""
from __future__ import annotations

import json
import logging
import math
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import VehicleState

log = logging.getLogger(__name__)

MAGIC = b"AUVTILE1"
HEADER = struct.Struct("<8sddqqd")
MANIFEST_FORMAT = "auvsim-tileset-1"


class BathymetryError(Exception):
    pass


class OutOfCoverageError(BathymetryError):
    """Query point lies outside every tile in the manifest."""


class TileLoadError(BathymetryError):
    """A tile listed in the manifest could not be read."""


class GroundingError(BathymetryError):
    def __init__(self, altitude: float, position, vehicle: str | None = None):
        who = f"vehicle {vehicle} " if vehicle else "vehicle "
        super().__init__(f"{who}grounded at {tuple(round(c, 3) for c in position)}, altitude {altitude:.3f} m")
        self.altitude = altitude
        self.position = position
        self.vehicle = vehicle


@dataclass
class Tile:
    origin: tuple[float, float]
    rows: int
    cols: int
    cell_size: float
    depths: np.ndarray  # shape (rows, cols), float32

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float32).reshape(self.rows, self.cols)
        if not np.all(np.isfinite(self.depths)):
            raise BathymetryError("tile depths must be finite")
        self._rows = self.depths.astype(float).tolist()

    def sample(self, row: int, col: int) -> float:
        return self._rows[row][col]


def write_tile(path: str | Path, tile: Tile) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, tile.origin[0], tile.origin[1], tile.rows, tile.cols, tile.cell_size))
        fh.write(tile.depths.astype("<f4").tobytes())


def read_tile(path: str | Path) -> Tile:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise TileLoadError(f"{path}: {exc.strerror}") from exc
    if len(raw) < HEADER.size:
        raise TileLoadError(f"{path}: truncated header")
    magic, ox, oy, rows, cols, cell = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TileLoadError(f"{path}: bad magic {magic!r}")
    body = raw[HEADER.size:]
    if len(body) != 4 * rows * cols:
        raise TileLoadError(f"{path}: expected {rows * cols} depths, found {len(body) // 4}")
    return Tile((ox, oy), rows, cols, cell, np.frombuffer(body, dtype="<f4"))


class TileSet:
    """Manifest of tiles plus the LRU cache of the resident ones."""

    def __init__(self, tiles: dict[tuple[int, int], Path], origin: tuple[float, float],
                 cell_size: float, tile_cells: int, max_resident: int = 9):
        if max_resident < 1:
            raise ValueError("max_resident must be >= 1")
        self.tiles = {tuple(k): Path(v) for k, v in tiles.items()}
        self.origin = (float(origin[0]), float(origin[1]))
        self.cell_size = float(cell_size)
        self.tile_cells = int(tile_cells)
        self.max_resident = max_resident
        self._cache: OrderedDict[tuple[int, int], Tile] = OrderedDict()
        self._lock = threading.Lock()
        self.loads = 0
        self.evictions = 0

    @property
    def tile_size(self) -> float:
        return self.cell_size * self.tile_cells

    @property
    def resident(self) -> list[tuple[int, int]]:
        return list(self._cache)

    @classmethod
    def from_manifest(cls, path: str | Path, max_resident: int = 9) -> "TileSet":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BathymetryError(f"{path}: cannot read manifest ({exc})") from exc
        if doc.get("format") != MANIFEST_FORMAT:
            raise BathymetryError(f"{path}: not a {MANIFEST_FORMAT} manifest")
        tiles = {(int(t["i"]), int(t["j"])): path.parent / t["path"] for t in doc["tiles"]}
        return cls(tiles, tuple(doc["origin"]), doc["cell_size"], doc["tile_cells"], max_resident)

    def write_manifest(self, path: str | Path) -> None:
        path = Path(path)
        entries = []
        for (i, j), p in sorted(self.tiles.items()):
            try:
                rel = str(Path(p).resolve().relative_to(path.parent.resolve()))
            except ValueError:
                rel = str(Path(p).resolve())
            entries.append({"i": i, "j": j, "path": rel})
        doc = {"format": MANIFEST_FORMAT, "origin": list(self.origin), "cell_size": self.cell_size,
               "tile_cells": self.tile_cells, "tiles": entries}
        path.write_text(json.dumps(doc, indent=1))

    @classmethod
    def from_array(cls, depths: np.ndarray, origin: tuple[float, float], cell_size: float,
                   tile_cells: int, directory: str | Path, max_resident: int = 9) -> "TileSet":
        """Split a south-first ``(rows, cols)`` array into tile files plus a manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        depths = np.asarray(depths, dtype=float)
        nrows, ncols = depths.shape
        tiles = {}
        for j in range(math.ceil(nrows / tile_cells)):
            for i in range(math.ceil(ncols / tile_cells)):
                block = depths[j * tile_cells:(j + 1) * tile_cells, i * tile_cells:(i + 1) * tile_cells]
                tile = Tile((origin[0] + i * tile_cells * cell_size, origin[1] + j * tile_cells * cell_size),
                            block.shape[0], block.shape[1], cell_size, block)
                p = directory / f"tile_{i}_{j}.bin"
                write_tile(p, tile)
                tiles[(i, j)] = p
        ts = cls(tiles, origin, cell_size, tile_cells, max_resident)
        ts.write_manifest(directory / "manifest.json")
        return ts

    def _tile(self, key: tuple[int, int]) -> Tile:
        tile = self._cache.get(key)
        if tile is not None:
            self._cache.move_to_end(key)
            return tile
        with self._lock:
            tile = self._cache.get(key)
            if tile is not None:
                return tile
            tile = read_tile(self.tiles[key])
            self.loads += 1
            self._cache[key] = tile
            while len(self._cache) > self.max_resident:
                self._cache.popitem(last=False)
                self.evictions += 1
        return tile

    def _covered(self, gx: int, gy: int) -> bool:
        tc = self.tile_cells
        key = (gx // tc, gy // tc)
        if key not in self.tiles:
            return False
        tile = self._tile(key)
        return gx - key[0] * tc < tile.cols and gy - key[1] * tc < tile.rows

    def _sample(self, gx: int, gy: int) -> float:
        tc = self.tile_cells
        i, j = gx // tc, gy // tc
        return self._tile((i, j)).sample(gy - j * tc, gx - i * tc)

    def depth_at(self, x: float, y: float) -> float:
        """Seafloor z (negative below sea level) by bilinear interpolation."""
        fx = (x - self.origin[0]) / self.cell_size
        fy = (y - self.origin[1]) / self.cell_size
        cx, cy = math.floor(fx), math.floor(fy)
        if not self._covered(cx, cy):
            raise OutOfCoverageError(f"({x:.3f}, {y:.3f}) is outside the tiled region")
        sx, sy = fx - 0.5, fy - 0.5
        gx0, gy0 = math.floor(sx), math.floor(sy)
        tx, ty = sx - gx0, sy - gy0
        xs = [gx0, gx0 + 1]
        ys = [gy0, gy0 + 1]
        wx = (1.0 - tx, tx)
        wy = (1.0 - ty, ty)
        # clamp to the containing sample along edges of the covered region
        for k in (0, 1):
            if wx[k] and not self._covered(xs[k], cy):
                xs[k] = cx
            if wy[k] and not self._covered(cx, ys[k]):
                ys[k] = cy
        total = 0.0
        for a in (0, 1):
            if not wx[a]:
                continue
            for b in (0, 1):
                if not wy[b]:
                    continue
                gx, gy = xs[a], ys[b]
                if not self._covered(gx, gy):
                    gx, gy = cx, cy
                total += wx[a] * wy[b] * self._sample(gx, gy)
        return total


def depth_at(ts: TileSet, x: float, y: float) -> float:
    return ts.depth_at(x, y)


def altitude(ts: TileSet, state: VehicleState, grounding: str = "terminate",
             vehicle: str | None = None) -> float:
    """Height above the seafloor; at or below zero is a grounding event."""
    x, y, z = state.position
    alt = z - ts.depth_at(x, y)
    if alt <= 0.0:
        if grounding == "terminate":
            raise GroundingError(alt, state.position, vehicle)
        log.warning("grounding: %s altitude %.3f m at %s", vehicle or "vehicle", alt, state.position)
    return alt


def read_ascii_grid(path: str | Path) -> tuple[np.ndarray, tuple[float, float], float]:
    """Parse an ESRI ASCII grid. Returns south-first values, lower-left corner, cell size."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not any(line.strip() for line in lines):
        raise BathymetryError(f"{path}: empty input")
    header: dict[str, float] = {}
    n = 0
    for n, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key[0].isalpha():
            if len(parts) != 2:
                raise BathymetryError(f"{path}:{n + 1}: bad header line")
            header[key] = float(parts[1])
        else:
            break
    else:
        n = len(lines)
    missing = {"ncols", "nrows", "cellsize"} - set(header)
    if missing:
        raise BathymetryError(f"{path}: header lacks {sorted(missing)}")
    ncols, nrows, cell = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    if "xllcorner" in header:
        x0, y0 = header["xllcorner"], header.get("yllcorner", 0.0)
    else:
        x0 = header.get("xllcenter", 0.5 * cell) - 0.5 * cell
        y0 = header.get("yllcenter", 0.5 * cell) - 0.5 * cell
    try:
        values = np.array([float(v) for line in lines[n:] for v in line.split()])
    except ValueError as exc:
        raise BathymetryError(f"{path}: non-numeric depth ({exc})") from exc
    if values.size != ncols * nrows:
        raise BathymetryError(f"{path}: expected {ncols * nrows} values, found {values.size}")
    grid = values.reshape(nrows, ncols)[::-1]
    if "nodata_value" in header and np.any(grid == header["nodata_value"]):
        raise BathymetryError(f"{path}: NODATA cells are not supported in tiles")
    return grid, (x0, y0), cell


def ascii_to_tiles(src: str | Path, out_dir: str | Path, tile_cells: int = 256) -> Path:
    grid, origin, cell = read_ascii_grid(src)
    TileSet.from_array(grid, origin, cell, tile_cells, out_dir)
    return Path(out_dir) / "manifest.json"
