"""
Gridding a study area and counting sightings per cell
=====================================================

A synthetic world stands in for a real sightings file. We lay a grid of
roughly 30 km^2 cells over its bounding box, drop the sightings into their
cells and look at how skewed the per-cell counts are.
"""

import tempfile
from pathlib import Path

import numpy as np

from sdmfusion.geo import GeoPoint, GridSpec, cell_containing, haversine_distance, make_grid
from sdmfusion.occurrence import aggregate_counts, load_occurrences
from sdmfusion.testkit import WorldConfig, generate_world

# One degree of longitude on the equator, the unit every cell size derives from.
print("1 deg at the equator: %.3f km" % haversine_distance(GeoPoint(0, 0), GeoPoint(0, 1)))

out = Path(tempfile.mkdtemp())
world = generate_world(WorldConfig(lam=20.0, dispersion=0.8), seed=3, out_dir=out)
print("wrote", len(world.records), "sightings to", out / "occurrences.csv")

# Reading the file back goes through the same validation a real export would.
loaded = load_occurrences(out / "occurrences.csv")
print("rejected rows:", len(loaded.rejected))

grid = make_grid(world.config.bbox, GridSpec(cell_area_km2=30.0))
print(grid)

# Points on a shared edge belong to the upper/right cell, so each point has one owner.
corner = grid.at(3, 4).bbox
owner = cell_containing(grid, GeoPoint(corner.max_lat, corner.max_lon))
print("point on the NE corner of cell (3, 4) lands in", owner.key)

agg = aggregate_counts(loaded.records, grid)
counts = np.array([s.count for s in agg.samples])
print("cells with sightings: %d of %d" % (len(counts), len(grid)))
print("count quartiles:", np.percentile(counts, [25, 50, 75]), "max:", counts.max())
