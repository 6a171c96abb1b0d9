import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auvsim.bathymetry import (
    BathymetryError,
    GroundingError,
    OutOfCoverageError,
    Tile,
    TileLoadError,
    TileSet,
    altitude,
    ascii_to_tiles,
    read_ascii_grid,
    read_tile,
    write_tile,
)
from auvsim.dynamics import VehicleState

CELL = 10.0


def plane(gx, gy):
    return -50.0 - 0.5 * gx + 0.25 * gy


@pytest.fixture(scope="module")
def tiles(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiles")
    gy, gx = np.mgrid[0:12, 0:10]
    return TileSet.from_array(plane(gx, gy), (100.0, 200.0), CELL, 4, d)


def test_tile_round_trip(tmp_path):
    t = Tile((1.0, 2.0), 2, 3, 5.0, np.arange(6.0).reshape(2, 3))
    write_tile(tmp_path / "t.bin", t)
    again = read_tile(tmp_path / "t.bin")
    assert again.origin == (1.0, 2.0) and again.cell_size == 5.0
    assert np.array_equal(again.depths, t.depths)


def test_corrupt_tile(tmp_path):
    (tmp_path / "t.bin").write_bytes(b"garbage")
    with pytest.raises(TileLoadError):
        read_tile(tmp_path / "t.bin")
    with pytest.raises(TileLoadError):
        read_tile(tmp_path / "missing.bin")


def test_sample_centres_are_exact(tiles):
    for gx in range(10):
        for gy in range(12):
            x = 100.0 + (gx + 0.5) * CELL
            y = 200.0 + (gy + 0.5) * CELL
            assert tiles.depth_at(x, y) == plane(gx, gy)


@given(st.floats(105.0, 195.0), st.floats(205.0, 315.0))
def test_bilinear_reproduces_plane_across_seams(tiles, x, y):
    gx = (x - 100.0) / CELL - 0.5
    gy = (y - 200.0) / CELL - 0.5
    assert tiles.depth_at(x, y) == pytest.approx(plane(gx, gy), abs=1e-9)


@settings(max_examples=50)
@given(st.floats(100.0, 199.99), st.floats(200.0, 319.99))
def test_edges_are_clamped_not_extrapolated(tiles, x, y):
    lo = plane(9, 0)
    hi = plane(0, 11)
    assert lo - 1e-9 <= tiles.depth_at(x, y) <= hi + 1e-9


def test_continuous_at_tile_seam(tiles):
    seam = 100.0 + 4 * CELL
    a = tiles.depth_at(seam - 1e-9, 250.0)
    b = tiles.depth_at(seam + 1e-9, 250.0)
    assert abs(a - b) < 1e-6


def test_out_of_coverage(tiles):
    with pytest.raises(OutOfCoverageError):
        tiles.depth_at(99.0, 250.0)
    with pytest.raises(OutOfCoverageError):
        tiles.depth_at(150.0, 320.5)


def test_lru_evicts(tmp_path):
    gy, gx = np.mgrid[0:8, 0:8]
    ts = TileSet.from_array(plane(gx, gy), (0.0, 0.0), 1.0, 2, tmp_path, max_resident=2)
    centres = [(1.0, 1.0), (3.0, 1.0), (5.0, 1.0)]
    for x, y in centres:
        ts.depth_at(x, y)
    assert ts.loads == 3 and ts.evictions == 1
    assert ts.resident == [(1, 0), (2, 0)]
    ts.depth_at(3.0, 1.0)  # hit, becomes most recent
    assert ts.loads == 3
    ts.depth_at(1.0, 1.0)
    assert ts.resident == [(1, 0), (0, 0)]


def test_manifest_reload(tiles):
    path = next(iter(tiles.tiles.values())).parent / "manifest.json"
    again = TileSet.from_manifest(path)
    assert again.depth_at(150.0, 250.0) == tiles.depth_at(150.0, 250.0)
    with pytest.raises(BathymetryError):
        TileSet.from_manifest(path.parent / "nope.json")


def test_altitude_and_grounding(tiles):
    floor = tiles.depth_at(150.0, 250.0)
    s = VehicleState((150.0, 250.0, floor + 5.0))
    assert altitude(tiles, s) == pytest.approx(5.0)
    low = VehicleState((150.0, 250.0, floor - 0.1))
    with pytest.raises(GroundingError) as err:
        altitude(tiles, low, vehicle="auv")
    assert err.value.vehicle == "auv" and err.value.altitude < 0
    assert altitude(tiles, low, grounding="warn") < 0


ASC = """ncols 3
nrows 2
xllcorner 10
yllcorner 20
cellsize 5
NODATA_value -9999
-1 -2 -3
-4 -5 -6
"""


def test_ascii_grid_orientation(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(ASC)
    grid, origin, cell = read_ascii_grid(p)
    assert origin == (10.0, 20.0) and cell == 5.0
    assert grid.tolist() == [[-4, -5, -6], [-1, -2, -3]]  # south row first


def test_ascii_to_tiles_cell_by_cell(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text(ASC)
    ts = TileSet.from_manifest(ascii_to_tiles(p, tmp_path / "out", tile_cells=2))
    rows = [[-1, -2, -3], [-4, -5, -6]]
    for r, row in enumerate(rows):
        for c, v in enumerate(row):
            x = 10 + (c + 0.5) * 5
            y = 20 + (1 - r + 0.5) * 5
            assert ts.depth_at(x, y) == v


def test_ascii_errors(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text("")
    with pytest.raises(BathymetryError, match="empty"):
        read_ascii_grid(p)
    p.write_text(ASC.replace("-6", "-9999"))
    with pytest.raises(BathymetryError, match="NODATA"):
        read_ascii_grid(p)
    p.write_text(ASC.replace("-6\n", "\n"))
    with pytest.raises(BathymetryError, match="expected 6"):
        read_ascii_grid(p)
