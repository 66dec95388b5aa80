"""Random-forest importance ranking and recursive feature elimination."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .covariates import TERRACLIMATE_FEATURES, CovariateVector  # noqa: F401  (re-export)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 8
    max_features: int | None = None  # None: ceil(F / 3)
    bootstrap: bool = True
    seed: int = 0


@dataclass
class ForestModel:
    estimator: RandomForestRegressor
    importances: np.ndarray
    constant: float | None = None  # set when y is constant

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.constant is not None:
            return np.full(len(X), self.constant)
        return self.estimator.predict(X)


def fit_random_forest(X, y, n_trees: int = 100, max_depth: int | None = 8, seed: int = 0,
                      max_features: int | None = None, bootstrap: bool = True) -> ForestModel:
    """Bootstrap CART regression forest with variance-reduction splits.

    Importance of a feature is its total variance reduction across all
    splits, normalised to sum to 1. Constant ``y`` gives all-zero
    importances and a mean predictor.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"X must be (N, F) matching y, got {X.shape} and {y.shape}")
    n, f = X.shape
    if n < 2 or f < 1:
        raise ValueError(f"need N >= 2 and F >= 1, got N={n}, F={f}")
    mf = max_features if max_features is not None else max(1, math.ceil(f / 3))
    est = RandomForestRegressor(n_estimators=n_trees, max_depth=max_depth, max_features=min(mf, f),
                                bootstrap=bootstrap, random_state=seed, n_jobs=1)
    if np.all(y == y[0]):
        return ForestModel(est, np.zeros(f), constant=float(y[0]))
    est.fit(X, y)
    imp = np.asarray(est.feature_importances_, dtype=float)
    total = imp.sum()
    imp = imp / total if total > 0 else np.zeros(f)
    return ForestModel(est, imp)


@dataclass
class ImportanceReport:
    """Final ranking of the retained features, plus what RFE dropped.

    ``eliminated`` lists dropped features in the order they were removed.
    """

    ranking: list[tuple[str, float]]
    eliminated: list[str] = field(default_factory=list)

    @property
    def retained(self) -> list[str]:
        return [name for name, _ in self.ranking]


def _ranked(names: Sequence[str], imp: np.ndarray) -> list[tuple[str, float]]:
    order = sorted(range(len(names)), key=lambda i: (-imp[i], i))
    return [(names[i], float(imp[i])) for i in order]


def rfe(X, y, keep: int, names: Sequence[str] | None = None,
        forest: ForestConfig = ForestConfig()) -> ImportanceReport:
    """Refit the forest and drop the least important feature until ``keep`` remain.

    Ties in importance drop the later feature (by current column order).
    """
    X = np.asarray(X, dtype=float)
    f = X.shape[1]
    names = list(names) if names is not None else [f"x{i}" for i in range(f)]
    if len(names) != f:
        raise ValueError(f"{len(names)} names for {f} features")
    if not 1 <= keep <= f:
        raise ValueError(f"keep must be in [1, {f}], got {keep}")
    active = list(range(f))
    eliminated: list[str] = []
    while True:
        model = fit_random_forest(X[:, active], y, forest.n_trees, forest.max_depth, forest.seed,
                                  forest.max_features, forest.bootstrap)
        if len(active) == keep:
            return ImportanceReport(_ranked([names[i] for i in active], model.importances), eliminated)
        imp = model.importances
        worst = min(range(len(active)), key=lambda j: (imp[j], -j))
        eliminated.append(names[active.pop(worst)])


def write_report_csv(report: ImportanceReport, path) -> None:
    """``rank,feature,importance``; eliminated features follow the retained
    ones (last dropped first) with an empty importance."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "importance"])
        for rank, (name, score) in enumerate(report.ranking, start=1):
            w.writerow([rank, name, repr(score)])
        for rank, name in enumerate(reversed(report.eliminated), start=len(report.ranking) + 1):
            w.writerow([rank, name, ""])
