import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdmfusion.geo import BoundingBox, GeoPoint, GridCell, haversine_distance, make_grid
from sdmfusion.occurrence import CellSample
from sdmfusion.pseudoabsence import (PseudoAbsenceConfig, distance_criteria, generate_pseudo_absences,
                                     landcover_map, random_selection, read_pseudoabsence_keys,
                                     write_pseudoabsences_csv)
from sdmfusion.raster import LANDCOVER, RasterPatch

DEG = 1.0 / 111.195  # one km of longitude at the equator, in degrees


def _cell(col, km_east):
    lon = km_east * DEG
    return GridCell(0, col, BoundingBox(-0.001, lon - 0.001, 0.001, lon + 0.001), GeoPoint(0.0, lon))


def _layout(candidate_km, candidate_class, presence_class=5, country="AU"):
    presence_cell, candidate = _cell(0, 0.0), _cell(1, candidate_km)
    presences = [CellSample(presence_cell, 3, country)]
    landcover = {presence_cell.key: presence_class, candidate.key: candidate_class}
    return [presence_cell, candidate], presences, landcover


EXHAUSTIVE = PseudoAbsenceConfig(ratio=math.inf)


class TestProposed:
    def test_near_and_same_class_accepted(self):
        grid, pres, lc = _layout(5.0, 5)
        res = generate_pseudo_absences(grid, pres, lc, EXHAUSTIVE)
        assert [p.cell.key for p in res] == [(0, 1)]
        p = res.points[0]
        assert p.distance_km == pytest.approx(5.0, abs=1e-3)
        assert (p.landcover_class, p.country, p.anchor_presence) == (5, "AU", GeoPoint(0.0, 0.0))

    def test_too_far_rejected(self):
        grid, pres, lc = _layout(15.0, 5)
        res = generate_pseudo_absences(grid, pres, lc, EXHAUSTIVE)
        assert len(res) == 0 and res.status == "empty"

    def test_other_class_rejected(self):
        grid, pres, lc = _layout(5.0, 3)
        assert len(generate_pseudo_absences(grid, pres, lc, EXHAUSTIVE)) == 0

    def test_threshold_follows_presence_country(self):
        grid, pres, lc = _layout(15.0, 5, country="SA")
        assert len(generate_pseudo_absences(grid, pres, lc, EXHAUSTIVE)) == 1

    def test_threshold_is_inclusive(self):
        grid, pres, lc = _layout(10.0, 5)
        d = haversine_distance(grid[0].centroid, grid[1].centroid)
        cfg = PseudoAbsenceConfig(thresholds_km={"AU": d}, ratio=math.inf)
        assert len(generate_pseudo_absences(grid, pres, lc, cfg)) == 1
        cfg = PseudoAbsenceConfig(thresholds_km={"AU": d * (1 - 1e-12)}, ratio=math.inf)
        assert len(generate_pseudo_absences(grid, pres, lc, cfg)) == 0

    def test_no_presences(self):
        with pytest.raises(ValueError, match="presence"):
            generate_pseudo_absences([_cell(0, 0)], [], {}, EXHAUSTIVE)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            PseudoAbsenceConfig(thresholds_km={"NZ": 5.0})
        with pytest.raises(ValueError):
            PseudoAbsenceConfig(ratio=0.0)


class TestDistanceCriteria:
    def test_any_class_within_threshold(self):
        grid, pres, lc = _layout(5.0, 3)
        assert len(distance_criteria(grid, pres, EXHAUSTIVE, lc)) == 1

    def test_too_far(self):
        grid, pres, lc = _layout(15.0, 3)
        assert len(distance_criteria(grid, pres, EXHAUSTIVE, lc)) == 0


def _world(seed):
    rng = np.random.default_rng(seed)
    grid = make_grid(BoundingBox(-30.0, 150.0, -29.6, 150.5))
    keys = [c.key for c in grid]
    idx = rng.choice(len(grid), size=12, replace=False)
    pres = [CellSample(grid[int(i)], int(rng.integers(1, 20)), ["AU", "SA", "CR"][int(rng.integers(3))])
            for i in np.sort(idx)]
    lc = {k: int(rng.integers(0, 3)) for k in keys}
    return grid, pres, lc


class TestOnRandomWorlds:
    @given(st.integers(0, 10_000))
    def test_predicates_and_subset(self, seed):
        grid, pres, lc = _world(seed)
        proposed = generate_pseudo_absences(grid, pres, lc, EXHAUSTIVE)
        dist = distance_criteria(grid, pres, EXHAUSTIVE, lc)
        pres_keys = {p.key for p in pres}
        thresholds = EXHAUSTIVE.thresholds_km
        for p in proposed:
            nearest = min(pres, key=lambda s: haversine_distance(s.cell.centroid, p.cell.centroid))
            d = haversine_distance(nearest.cell.centroid, p.cell.centroid)
            assert 0 < d <= thresholds[nearest.country]
            assert lc[p.cell.key] == lc[nearest.key] == p.landcover_class
            assert p.cell.key not in pres_keys
        for p in dist:
            assert p.distance_km <= thresholds[p.country]
        assert proposed.keys <= dist.keys

    @given(st.integers(0, 10_000), st.floats(0.1, 3.0))
    def test_size_bound(self, seed, ratio):
        grid, pres, lc = _world(seed)
        cfg = PseudoAbsenceConfig(ratio=ratio, seed=seed)
        for res in (generate_pseudo_absences(grid, pres, lc, cfg), distance_criteria(grid, pres, cfg, lc)):
            assert len(res) == min(res.n_eligible, math.floor(ratio * len(pres)))
            assert (res.status == "short") == (0 < res.n_eligible < res.n_requested)


class TestRandomSelection:
    def test_ten_from_fifty(self):
        grid = make_grid(BoundingBox(0.0, 0.0, 0.3, 0.3))[:60]
        pres = [CellSample(c, 1, "AU") for c in grid[:10]]
        res = random_selection(grid, pres, PseudoAbsenceConfig(seed=3))
        assert len(res) == 10 and res.status == "ok"
        assert not res.keys & {p.key for p in pres}
        assert random_selection(grid, pres, PseudoAbsenceConfig(seed=3)).keys == res.keys
        assert random_selection(grid, pres, PseudoAbsenceConfig(seed=4)).keys != res.keys

    def test_no_free_cells_warns(self):
        grid = make_grid(BoundingBox(0.0, 0.0, 0.1, 0.1))
        pres = [CellSample(c, 1, "AU") for c in grid]
        with pytest.warns(RuntimeWarning, match="presence-free"):
            res = random_selection(grid, pres)
        assert len(res) == 0 and res.status == "empty"

    def test_short(self):
        grid = make_grid(BoundingBox(0.0, 0.0, 0.1, 0.1))
        pres = [CellSample(c, 1, "AU") for c in grid[:-2]]
        with pytest.warns(RuntimeWarning):
            res = random_selection(grid, pres)
        assert len(res) == 2 and res.status == "short"


class TestIo:
    def test_csv(self, tmp_path):
        grid, pres, lc = _world(1)
        res = distance_criteria(grid, pres, EXHAUSTIVE, lc)
        path = tmp_path / "pa.csv"
        write_pseudoabsences_csv(res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "row,col,country,distance_km,landcover_class,strategy"
        assert all(line.endswith(",distance") for line in lines[1:])
        assert read_pseudoabsence_keys(path) == [(p.cell.key, p.country) for p in res]

    def test_landcover_map(self):
        patch = RasterPatch((LANDCOVER,), np.array([[[4, 4], [1, 2]]], dtype=float))
        assert landcover_map([((0, 0), patch)]) == {(0, 0): 4}
