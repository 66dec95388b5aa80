"""Coordinate math, study-area gridding and great-circle distances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, overload

import numpy as np

EARTH_RADIUS_KM = 6371.0
# length of one degree of latitude on the sphere above: 2*pi*R/360
KM_PER_DEGREE = 111.195

GRID_CSV_HEADER = [
    "row", "col", "min_lat", "min_lon", "max_lat", "max_lon",
    "centroid_lat", "centroid_lon",
]


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        GeoPoint(self.min_lat, self.min_lon)
        GeoPoint(self.max_lat, self.max_lon)
        if not self.min_lat < self.max_lat:
            raise ValueError(f"degenerate bbox: min_lat {self.min_lat} >= max_lat {self.max_lat}")
        if not self.min_lon < self.max_lon:
            raise ValueError(f"degenerate bbox: min_lon {self.min_lon} >= max_lon {self.max_lon}")

    @property
    def mid_lat(self) -> float:
        return 0.5 * (self.min_lat + self.max_lat)

    def contains(self, p: GeoPoint) -> bool:
        """Closed containment test (all four edges inclusive)."""
        return (self.min_lat <= p.lat <= self.max_lat
                and self.min_lon <= p.lon <= self.max_lon)


@dataclass(frozen=True)
class GridSpec:
    """Square grid cells of a given area; the side is ``sqrt(area)``."""

    cell_area_km2: float = 30.0

    def __post_init__(self):
        if not (self.cell_area_km2 > 0 and math.isfinite(self.cell_area_km2)):
            raise ValueError(f"cell_area_km2 must be positive, got {self.cell_area_km2}")

    @property
    def cell_side_km(self) -> float:
        return math.sqrt(self.cell_area_km2)


@dataclass(frozen=True)
class GridCell:
    row: int
    col: int
    bbox: BoundingBox
    centroid: GeoPoint

    @property
    def key(self) -> tuple[int, int]:
        return (self.row, self.col)


class Grid(Sequence[GridCell]):
    """Row-major list of cells tiling a bounding box.

    Behaves as a read-only list of :class:`GridCell` (row 0 is the southern
    edge, col 0 the western edge) and keeps the step sizes around so that
    point lookup is O(1).
    """

    def __init__(self, bbox: BoundingBox, spec: GridSpec, lat_step: float,
                 lon_step: float, n_rows: int, n_cols: int,
                 cells: list[GridCell]):
        self.bbox = bbox
        self.spec = spec
        self.lat_step = lat_step
        self.lon_step = lon_step
        self.n_rows = n_rows
        self.n_cols = n_cols
        self._cells = cells
        self._index = {c.key: i for i, c in enumerate(cells)}

    @overload
    def __getitem__(self, i: int) -> GridCell: ...
    @overload
    def __getitem__(self, i: slice) -> list[GridCell]: ...

    def __getitem__(self, i):
        return self._cells[i]

    def __len__(self) -> int:
        return len(self._cells)

    def __iter__(self) -> Iterator[GridCell]:
        return iter(self._cells)

    def __repr__(self) -> str:
        return (f"Grid({self.n_rows}x{self.n_cols} cells, "
                f"side={self.spec.cell_side_km:.3f} km, bbox={self.bbox})")

    def at(self, row: int, col: int) -> GridCell:
        return self._cells[self._index[(row, col)]]

    def centroids(self) -> np.ndarray:
        """(n_cells, 2) array of centroid (lat, lon) in degrees."""
        return np.array([(c.centroid.lat, c.centroid.lon) for c in self._cells])


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points."""
    return float(haversine_km(a.lat, a.lon, b.lat, b.lon))


def haversine_km(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in km; inputs broadcast like numpy arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    # rounding can push h a hair above 1 for antipodal points
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def _n_steps(span: float, step: float) -> int:
    # tolerance keeps an exact multiple of the step from spawning a sliver cell
    return max(1, int(math.ceil(span / step - 1e-9)))


def make_grid(bbox: BoundingBox, spec: GridSpec = GridSpec()) -> Grid:
    """Partition ``bbox`` into square cells of ``spec.cell_area_km2``.

    Degree steps use the local-cosine approximation at the bbox's middle
    latitude. Cells on the north and east edges are clipped to the bbox, so
    the union of cells is exactly the input box.

    Raises:
        ValueError: if the bbox is too close to a pole for the cosine
            approximation (cos(mid_lat) <= 0).
    """
    side = spec.cell_side_km
    cos_mid = math.cos(math.radians(bbox.mid_lat))
    if cos_mid <= 1e-12:
        raise ValueError(f"bbox mid latitude {bbox.mid_lat} too close to a pole")
    lat_step = side / KM_PER_DEGREE
    lon_step = side / (KM_PER_DEGREE * cos_mid)
    n_rows = _n_steps(bbox.max_lat - bbox.min_lat, lat_step)
    n_cols = _n_steps(bbox.max_lon - bbox.min_lon, lon_step)

    lat_edges = [bbox.min_lat + i * lat_step for i in range(n_rows)] + [bbox.max_lat]
    lon_edges = [bbox.min_lon + j * lon_step for j in range(n_cols)] + [bbox.max_lon]

    cells = []
    for r in range(n_rows):
        for c in range(n_cols):
            cb = BoundingBox(lat_edges[r], lon_edges[c], lat_edges[r + 1], lon_edges[c + 1])
            centroid = GeoPoint(0.5 * (cb.min_lat + cb.max_lat), 0.5 * (cb.min_lon + cb.max_lon))
            cells.append(GridCell(r, c, cb, centroid))
    return Grid(bbox, spec, lat_step, lon_step, n_rows, n_cols, cells)


def _in_cell(cell: GridCell, p: GeoPoint, top: bool, right: bool) -> bool:
    b = cell.bbox
    lat_ok = b.min_lat <= p.lat and (p.lat < b.max_lat or (top and p.lat == b.max_lat))
    lon_ok = b.min_lon <= p.lon and (p.lon < b.max_lon or (right and p.lon == b.max_lon))
    return lat_ok and lon_ok


def cell_containing(grid: Sequence[GridCell], p: GeoPoint) -> GridCell | None:
    """Return the unique cell containing ``p``, or None if ``p`` is off-grid.

    Edges are lower-inclusive and upper-exclusive, except that the topmost
    row and rightmost column also own the grid's outer north/east edge.
    """
    if isinstance(grid, Grid):
        if not grid.bbox.contains(p):
            return None
        r0 = min(int((p.lat - grid.bbox.min_lat) / grid.lat_step), grid.n_rows - 1)
        c0 = min(int((p.lon - grid.bbox.min_lon) / grid.lon_step), grid.n_cols - 1)
        # float division may land one cell off at a shared edge
        for r in (r0, r0 - 1, r0 + 1):
            for c in (c0, c0 - 1, c0 + 1):
                if 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
                    cell = grid.at(r, c)
                    if _in_cell(cell, p, r == grid.n_rows - 1, c == grid.n_cols - 1):
                        return cell
        return None

    if not grid:
        return None
    max_row = max(c.row for c in grid)
    max_col = max(c.col for c in grid)
    for cell in grid:
        if _in_cell(cell, p, cell.row == max_row, cell.col == max_col):
            return cell
    return None


def cell_area_km2(cell: GridCell) -> float:
    """Approximate spherical area of a cell from its edge lengths."""
    b = cell.bbox
    height = haversine_km(b.min_lat, b.min_lon, b.max_lat, b.min_lon)
    mid = 0.5 * (b.min_lat + b.max_lat)
    width = haversine_km(mid, b.min_lon, mid, b.max_lon)
    return float(height * width)


def write_grid_csv(grid: Iterable[GridCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_CSV_HEADER)
        for c in grid:
            b = c.bbox
            w.writerow([c.row, c.col, repr(b.min_lat), repr(b.min_lon), repr(b.max_lat),
                        repr(b.max_lon), repr(c.centroid.lat), repr(c.centroid.lon)])


def read_grid_csv(path) -> list[GridCell]:
    cells = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GRID_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(GRID_CSV_HEADER)}")
        for rec in reader:
            bbox = BoundingBox(float(rec["min_lat"]), float(rec["min_lon"]),
                               float(rec["max_lat"]), float(rec["max_lon"]))
            cells.append(GridCell(int(rec["row"]), int(rec["col"]), bbox,
                                  GeoPoint(float(rec["centroid_lat"]), float(rec["centroid_lon"]))))
    return cells
