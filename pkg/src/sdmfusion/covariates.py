"""TerraClimate-style per-cell covariate vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

# Fixed feature order. Extra features are appended by name after these.
TERRACLIMATE_FEATURES = (
    "tmax", "tmin", "pet", "ppt", "vap", "vpd", "soil", "ws", "q", "pdsi",
)


@dataclass(frozen=True)
class CovariateVector:
    values: tuple[float, ...]
    names: tuple[str, ...] = TERRACLIMATE_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.values) != len(self.names):
            raise ValueError(f"{len(self.values)} values for {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate covariate names in {self.names}")
        if not all(np.isfinite(self.values)):
            raise ValueError("covariate values must be finite")

    @classmethod
    def from_mapping(cls, m: Mapping[str, float]) -> "CovariateVector":
        """Standard features first (in canonical order), extras after in given order."""
        missing = [n for n in TERRACLIMATE_FEATURES if n not in m]
        if missing:
            raise ValueError(f"missing covariates: {missing}")
        extras = [k for k in m if k not in TERRACLIMATE_FEATURES]
        names = TERRACLIMATE_FEATURES + tuple(extras)
        return cls(tuple(m[n] for n in names), names)

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))


def covariate_matrix(vectors) -> tuple[np.ndarray, tuple[str, ...]]:
    """Stack vectors sharing one name order into an (N, F) matrix."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no covariate vectors")
    names = vectors[0].names
    for v in vectors:
        if v.names != names:
            raise ValueError("covariate vectors disagree on feature names")
    return np.array([v.values for v in vectors], dtype=float), names


def write_covariates_csv(rows: Mapping[tuple[int, int], CovariateVector], path) -> None:
    """CSV ``row,col,<feature...>``, one line per cell, sorted by (row, col)."""
    keys = sorted(rows)
    names = rows[keys[0]].names if keys else TERRACLIMATE_FEATURES
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", *names])
        for k in keys:
            w.writerow([k[0], k[1], *(repr(v) for v in rows[k].values)])


def read_covariates_csv(path) -> dict[tuple[int, int], CovariateVector]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["row", "col"]:
            raise ValueError(f"{path}: header must start with row,col")
        names = tuple(header[2:])
        for rec in reader:
            out[(int(rec[0]), int(rec[1]))] = CovariateVector(tuple(float(x) for x in rec[2:]), names)
    return out
