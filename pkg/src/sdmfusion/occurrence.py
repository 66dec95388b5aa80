"""Citizen-science sightings: loading, per-cell aggregation, train/test split."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .covariates import CovariateVector
from .geo import GeoPoint, GridCell, cell_containing
from .raster import RasterPatch

logger = logging.getLogger(__name__)

COUNTRIES = ("AU", "SA", "CR")
MODALITIES = ("RGB", "LC", "NDVI")
OCCURRENCE_HEADER = ["species", "lat", "lon", "timestamp", "country"]
SAMPLES_HEADER = ["row", "col", "country", "count"]


@dataclass(frozen=True)
class OccurrenceRecord:
    species: str
    location: GeoPoint
    timestamp: str
    country: str

    def __post_init__(self):
        if self.country not in COUNTRIES:
            raise ValueError(f"unknown country {self.country!r}; expected one of {COUNTRIES}")


@dataclass(frozen=True)
class CellSample:
    """One grid cell with its label and (optionally attached) inputs.

    ``origin`` is ``"original"`` for observed cells and pseudo-absences and
    ``"oversampled"`` for copies appended by the balancing step.
    """

    cell: GridCell
    count: int
    country: str
    covariates: CovariateVector | None = None
    patches: dict[str, RasterPatch] = field(default_factory=dict, compare=False)
    label_presence: bool | None = None
    origin: str = "original"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError(f"negative count {self.count}")
        if self.country not in COUNTRIES:
            raise ValueError(f"unknown country {self.country!r}")
        if self.label_presence is None:
            object.__setattr__(self, "label_presence", self.count > 0)
        if self.label_presence != (self.count > 0):
            raise ValueError("label_presence must equal count > 0")

    @property
    def key(self) -> tuple[int, int]:
        return self.cell.key

    def with_inputs(self, covariates: CovariateVector | None = None,
                    patches: dict[str, RasterPatch] | None = None) -> "CellSample":
        return replace(self,
                       covariates=covariates if covariates is not None else self.covariates,
                       patches=dict(patches) if patches is not None else dict(self.patches))


class LoadResult(NamedTuple):
    records: list[OccurrenceRecord]
    rejected: list[tuple[int, str]]  # (line number in file, reason)


def load_occurrences(path, max_bad_fraction: float = 0.5) -> LoadResult:
    """Read an occurrence CSV with header ``species,lat,lon,timestamp,country``.

    Malformed rows are collected in ``rejected`` with their 1-based line
    number (the header is line 1) instead of aborting the load.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        ValueError: on a wrong header, or when more than ``max_bad_fraction``
            of the data rows are malformed.
    """
    path = Path(path)
    records: list[OccurrenceRecord] = []
    rejected: list[tuple[int, str]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OCCURRENCE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(OCCURRENCE_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(OCCURRENCE_HEADER):
                    raise ValueError(f"expected {len(OCCURRENCE_HEADER)} fields, got {len(row)}")
                species, lat, lon, ts, country = (x.strip() for x in row)
                records.append(OccurrenceRecord(species, GeoPoint(float(lat), float(lon)), ts, country))
            except ValueError as exc:
                rejected.append((lineno, str(exc)))
    n_rows = len(records) + len(rejected)
    if n_rows and len(rejected) / n_rows > max_bad_fraction:
        raise ValueError(f"{path}: {len(rejected)} of {n_rows} rows malformed "
                         f"(first: line {rejected[0][0]}: {rejected[0][1]})")
    for lineno, reason in rejected:
        logger.warning("%s:%d rejected: %s", path, lineno, reason)
    return LoadResult(records, rejected)


def write_occurrences(records: Iterable[OccurrenceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OCCURRENCE_HEADER)
        for r in records:
            w.writerow([r.species, repr(r.location.lat), repr(r.location.lon), r.timestamp, r.country])


class Aggregation(NamedTuple):
    samples: list[CellSample]
    n_outside: int


def _majority_country(countries: Counter) -> str:
    # ties resolved by the fixed COUNTRIES order
    return max(COUNTRIES, key=lambda c: (countries.get(c, 0), -COUNTRIES.index(c)))


def aggregate_counts(records: Sequence[OccurrenceRecord], grid: Sequence[GridCell]) -> Aggregation:
    """Count sightings per cell.

    Only cells with at least one sighting are returned, in grid order. A
    cell's country is the most common country among its sightings.
    Sightings outside the grid are tallied in ``n_outside``.
    """
    per_cell: dict[tuple[int, int], Counter] = {}
    cells: dict[tuple[int, int], GridCell] = {}
    n_outside = 0
    for rec in records:
        cell = cell_containing(grid, rec.location)
        if cell is None:
            n_outside += 1
            continue
        cells[cell.key] = cell
        per_cell.setdefault(cell.key, Counter())[rec.country] += 1
    if n_outside:
        logger.warning("%d of %d records fall outside the grid", n_outside, len(records))
    order = {c.key: i for i, c in enumerate(grid)}
    keys = sorted(per_cell, key=order.__getitem__)
    samples = [CellSample(cells[k], sum(per_cell[k].values()), _majority_country(per_cell[k]))
               for k in keys]
    return Aggregation(samples, n_outside)


def split_train_test(samples: Sequence, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Seeded uniform shuffle split; ``len(train) == round(ratio * N)``.

    Relative order of the input is preserved inside each part.
    """
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n_train = int(np.floor(ratio * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def write_samples_csv(samples: Iterable[CellSample], path, with_origin: bool = False) -> None:
    """Aggregated samples as ``row,col,country,count`` (plus ``origin``)."""
    header = SAMPLES_HEADER + (["origin"] if with_origin else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in samples:
            row = [s.cell.row, s.cell.col, s.country, s.count]
            w.writerow(row + ([s.origin] if with_origin else []))


def read_samples_csv(path, grid: Sequence[GridCell]) -> list[CellSample]:
    """Inverse of :func:`write_samples_csv`; cells are looked up in ``grid``."""
    by_key = {c.key: c for c in grid}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [h for h in SAMPLES_HEADER if h not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for rec in reader:
            key = (int(rec["row"]), int(rec["col"]))
            if key not in by_key:
                raise ValueError(f"{path}: cell {key} not in grid")
            out.append(CellSample(by_key[key], int(rec["count"]), rec["country"],
                                  origin=rec.get("origin") or "original"))
    return out
