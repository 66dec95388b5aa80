"""Pseudo-absence generation.

Three strategies share one output type:

``proposed``
    presence-free cells whose centroid lies within the country's distance
    threshold of the nearest presence cell *and* whose dominant landcover
    class matches that presence cell's class;
``distance``
    the distance predicate alone;
``random``
    a uniform draw over all presence-free cells.

Accepted candidates are subsampled (seeded, without replacement) down to
``floor(ratio * n_presences)``. Pass ``ratio=math.inf`` to keep them all.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .geo import GeoPoint, GridCell, haversine_km
from .occurrence import COUNTRIES, CellSample
from .raster import RasterPatch, dominant_class

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS_KM = {"AU": 10.0, "SA": 20.0, "CR": 28.0}
PSEUDOABSENCE_HEADER = ["row", "col", "country", "distance_km", "landcover_class", "strategy"]

OK = "ok"
SHORT = "short"  # fewer eligible candidates than requested
EMPTY = "empty"


@dataclass(frozen=True)
class PseudoAbsenceConfig:
    thresholds_km: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS_KM))
    ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for country, t in self.thresholds_km.items():
            if country not in COUNTRIES:
                raise ValueError(f"threshold for unknown country {country!r}")
            if not t > 0:
                raise ValueError(f"threshold for {country} must be positive, got {t}")
        if not self.ratio > 0:
            raise ValueError(f"ratio must be positive, got {self.ratio}")


@dataclass(frozen=True)
class PseudoAbsencePoint:
    cell: GridCell
    anchor_presence: GeoPoint
    distance_km: float
    landcover_class: int
    country: str


@dataclass
class PseudoAbsenceResult:
    """Selected points plus the bookkeeping needed to audit the selection.

    ``n_candidates`` presence-free cells were examined, ``n_eligible`` passed
    the strategy's predicates and ``n_requested`` were asked for.
    """

    strategy: str
    points: list[PseudoAbsencePoint]
    n_candidates: int
    n_eligible: int
    n_requested: int | None
    status: str

    def __iter__(self) -> Iterator[PseudoAbsencePoint]:
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def keys(self) -> set[tuple[int, int]]:
        return {p.cell.key for p in self.points}


def _validate(presences: Sequence[CellSample]):
    if not presences:
        raise ValueError("need at least one presence cell")


def _free_cells(grid: Sequence[GridCell], presences: Sequence[CellSample]) -> list[GridCell]:
    occupied = {p.key for p in presences}
    return [c for c in grid if c.key not in occupied]


def _nearest_presence(free: list[GridCell], presences: Sequence[CellSample]):
    """Index of, and distance to, the nearest presence centroid for each free cell."""
    if not free:
        return np.zeros(0, dtype=int), np.zeros(0)
    cand = np.array([(c.centroid.lat, c.centroid.lon) for c in free])
    pres = np.array([(p.cell.centroid.lat, p.cell.centroid.lon) for p in presences])
    nearest = np.empty(len(free), dtype=int)
    dist = np.empty(len(free))
    # chunked to bound memory on country-sized grids
    for start in range(0, len(free), 2048):
        block = cand[start:start + 2048]
        d = haversine_km(block[:, None, 0], block[:, None, 1], pres[None, :, 0], pres[None, :, 1])
        nearest[start:start + 2048] = np.argmin(d, axis=1)
        dist[start:start + 2048] = d[np.arange(len(block)), nearest[start:start + 2048]]
    return nearest, dist


def _n_requested(cfg: PseudoAbsenceConfig, n_presences: int) -> int | None:
    if math.isinf(cfg.ratio):
        return None
    return int(math.floor(cfg.ratio * n_presences))


def _subsample(eligible: list[int], n_requested: int | None, seed: int) -> list[int]:
    if n_requested is None or len(eligible) <= n_requested:
        return list(eligible)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(eligible), size=n_requested, replace=False)
    return [eligible[i] for i in np.sort(picked)]


def _status(n_eligible: int, n_requested: int | None) -> str:
    if n_eligible == 0:
        return EMPTY
    if n_requested is not None and n_eligible < n_requested:
        return SHORT
    return OK


def _filtered(strategy: str, grid, presences, landcover, cfg, use_landcover: bool):
    _validate(presences)
    free = _free_cells(grid, presences)
    nearest, dist = _nearest_presence(free, presences)
    eligible = []
    for i, cell in enumerate(free):
        anchor = presences[nearest[i]]
        threshold = cfg.thresholds_km[anchor.country]
        if not 0.0 < dist[i] <= threshold:
            continue
        if use_landcover and landcover[cell.key] != landcover[anchor.key]:
            continue
        eligible.append(i)

    n_req = _n_requested(cfg, len(presences))
    chosen = _subsample(eligible, n_req, cfg.seed)
    points = [PseudoAbsencePoint(free[i], presences[nearest[i]].cell.centroid, float(dist[i]),
                                 int(landcover[free[i].key]) if landcover is not None else -1,
                                 presences[nearest[i]].country)
              for i in chosen]
    status = _status(len(eligible), n_req)
    logger.info("%s: %d free cells, %d eligible, %d selected (%s)",
                strategy, len(free), len(eligible), len(points), status)
    return PseudoAbsenceResult(strategy, points, len(free), len(eligible), n_req, status)


def generate_pseudo_absences(grid: Sequence[GridCell], presences: Sequence[CellSample],
                             landcover: Mapping[tuple[int, int], int],
                             cfg: PseudoAbsenceConfig = PseudoAbsenceConfig()) -> PseudoAbsenceResult:
    """Distance-and-landcover filtered pseudo-absences.

    ``landcover`` maps every cell key ``(row, col)`` to that cell's dominant
    class. Distances are haversine between cell centroids; the threshold is
    the one of the nearest presence cell's country, with ``0 < d <= X``.
    A result with ``status == "empty"`` means no candidate passed.
    """
    return _filtered("proposed", grid, presences, landcover, cfg, use_landcover=True)


def distance_criteria(grid: Sequence[GridCell], presences: Sequence[CellSample],
                      cfg: PseudoAbsenceConfig = PseudoAbsenceConfig(),
                      landcover: Mapping[tuple[int, int], int] | None = None) -> PseudoAbsenceResult:
    """Distance-only baseline. ``landcover`` is used solely to label the output."""
    return _filtered("distance", grid, presences, landcover, cfg, use_landcover=False)


def random_selection(grid: Sequence[GridCell], presences: Sequence[CellSample],
                     cfg: PseudoAbsenceConfig = PseudoAbsenceConfig(),
                     landcover: Mapping[tuple[int, int], int] | None = None) -> PseudoAbsenceResult:
    """Uniform draw over presence-free cells, no predicates.

    Warns (and returns every free cell) when fewer free cells exist than
    requested.
    """
    _validate(presences)
    free = _free_cells(grid, presences)
    n_req = _n_requested(cfg, len(presences))
    chosen = _subsample(list(range(len(free))), n_req, cfg.seed)
    status = _status(len(free), n_req)
    if status != OK:
        warnings.warn(f"random_selection: only {len(free)} presence-free cells for "
                      f"{n_req} requested pseudo-absences", RuntimeWarning, stacklevel=2)
    nearest, dist = _nearest_presence([free[i] for i in chosen], presences)
    points = [PseudoAbsencePoint(free[i], presences[nearest[j]].cell.centroid, float(dist[j]),
                                 int(landcover[free[i].key]) if landcover is not None else -1,
                                 presences[nearest[j]].country)
              for j, i in enumerate(chosen)]
    return PseudoAbsenceResult("random", points, len(free), len(free), n_req, status)


STRATEGIES = {
    "proposed": lambda grid, pres, lc, cfg: generate_pseudo_absences(grid, pres, lc, cfg),
    "distance": lambda grid, pres, lc, cfg: distance_criteria(grid, pres, cfg, lc),
    "random": lambda grid, pres, lc, cfg: random_selection(grid, pres, cfg, lc),
}


def as_samples(result: PseudoAbsenceResult) -> list[CellSample]:
    """Zero-count, absence-labelled samples for the selected cells."""
    return [CellSample(p.cell, 0, p.country) for p in result.points]


def write_pseudoabsences_csv(result: PseudoAbsenceResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PSEUDOABSENCE_HEADER)
        for p in result.points:
            w.writerow([p.cell.row, p.cell.col, p.country, repr(p.distance_km),
                        p.landcover_class, result.strategy])


def read_pseudoabsence_keys(path) -> list[tuple[tuple[int, int], str]]:
    """``((row, col), country)`` pairs from a pseudo-absence CSV."""
    with open(path, newline="") as fh:
        return [((int(r["row"]), int(r["col"])), r["country"]) for r in csv.DictReader(fh)]


def landcover_map(patches: Iterable[tuple[tuple[int, int], RasterPatch]]) -> dict[tuple[int, int], int]:
    """Dominant class per cell from ``(key, landcover patch)`` pairs."""
    return {k: dominant_class(p) for k, p in patches}
