"""Small end-to-end experiments on synthetic worlds.

Each experiment builds a world from a seed, runs one comparison with the
library's own components and returns plain numbers, so the same code backs
the demo scripts and the acceptance tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .balance import OversampleConfig, adaptive_oversample, class_weights
from .fusion import FusionConfig, FusionModel, TrainConfig, build_dataset, predict, train
from .geo import BoundingBox
from .metrics import mae, roc_auc
from .occurrence import split_train_test
from .pseudoabsence import STRATEGIES, PseudoAbsenceConfig
from .raster import AugmentationConfig
from .testkit import WorldConfig, generate_world

# Observers favour the first five landcover classes and never survey the rest,
# so a zero count next to a sighting in a favoured landscape is a real absence.
PSEUDOABSENCE_WORLD = WorldConfig(
    bbox=BoundingBox(-30.0, 150.0, -28.5, 151.5),
    beta={"tmax": 3.0, "ppt": 2.25, "soil": -1.75},
    intercept=-1.0,
    lam=5.0,
    visit_prob=(0.9,) * 5 + (0.0,) * 5,
)

# Heavy-tailed counts: most cells hold a handful of frogs, a few hold hundreds.
BALANCING_WORLD = WorldConfig(
    bbox=BoundingBox(-30.0, 150.0, -28.5, 151.5),
    beta={"tmax": 1.8, "ppt": 1.35, "soil": -1.05},
    intercept=-2.0,
    lam=100.0,
    dispersion=0.7,
)


@dataclass
class PseudoAbsenceOutcome:
    """Held-out AUC per strategy plus the share of each strategy's points
    that were in fact occupied."""

    auc: dict[str, float]
    contamination: dict[str, float]
    n_presences: int
    n_points: dict[str, int] = field(default_factory=dict)


def pseudoabsence_experiment(seed: int, world: WorldConfig = PSEUDOABSENCE_WORLD,
                             strategies=("proposed", "random"), modality: str = "LC",
                             epochs: int = 20) -> PseudoAbsenceOutcome:
    """Train one presence classifier per pseudo-absence strategy.

    Training data are the observed presences of world ``seed`` plus that
    strategy's pseudo-absences (ratio 1). Every classifier is scored on a
    second, independently drawn world (seed + 1000) labelled by its true
    occupancy, so the test set carries no observation bias.
    """
    w = generate_world(world, seed)
    held_out = generate_world(world, seed + 1000)
    presences = w.presence_samples()
    test = build_dataset([held_out.sample(c.key, held_out.true_counts[c.key]) for c in held_out.grid],
                         modality, "classification")
    auc, contamination, n_points = {}, {}, {}
    for name in strategies:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # short random draws are expected
            result = STRATEGIES[name](w.grid, presences, w.landcover, PseudoAbsenceConfig(seed=seed))
        absences = [w.sample(p.cell.key, 0) for p in result.points]
        data = build_dataset(presences + absences, modality, "classification")
        model = FusionModel.create(FusionConfig(image_shape=data.images.shape[1:], task="classification",
                                                seed=seed))
        out = train(model, data, TrainConfig(epochs=epochs, seed=seed,
                                             augmentation=AugmentationConfig(seed=seed)))
        auc[name] = roc_auc(test.targets, predict(out.model, test.images, test.tabular))
        contamination[name] = float(np.mean([w.true_counts[p.cell.key] > 0 for p in result.points]))
        n_points[name] = len(result.points)
    return PseudoAbsenceOutcome(auc, contamination, len(presences), n_points)


@dataclass
class BalancingOutcome:
    mae_balanced: float
    mae_raw: float
    n_train: int
    n_train_balanced: int
    n_test: int


def balancing_experiment(seed: int, world: WorldConfig = BALANCING_WORLD, modality: str = "NDVI",
                         epochs: int = 30) -> BalancingOutcome:
    """Count regression with and without the balancing stack.

    Presence cells are split 80:20 first; only the training part is
    oversampled. The balanced arm adds cluster-stratified copies, per-country
    loss weights and log targets. The raw arm trains the same network on the
    untouched training cells with plain counts. Both report test MAE on raw
    counts.
    """
    w = generate_world(world, seed)
    train_cells, test_cells = split_train_test(w.presence_samples(), 0.8, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # small bins may get fewer clusters
        balanced = adaptive_oversample(train_cells, OversampleConfig(seed=seed))
    test = build_dataset(test_cells, modality)
    arms = {
        "balanced": (balanced, True, class_weights(balanced)),
        "raw": (train_cells, False, None),
    }
    scores = {}
    for name, (samples, log_target, weights) in arms.items():
        data = build_dataset(samples, modality)
        model = FusionModel.create(FusionConfig(image_shape=data.images.shape[1:], task="regression",
                                                log_target=log_target, seed=seed))
        out = train(model, data, TrainConfig(epochs=epochs, seed=seed, class_weights=weights))
        scores[name] = mae(test.targets, predict(out.model, test.images, test.tabular))
    return BalancingOutcome(scores["balanced"], scores["raw"], len(train_cells), len(balanced), len(test_cells))


def rfe_recovery_data(seed: int, n: int = 400, n_decoys: int = 8, noise: float = 0.1):
    """Regression data with two informative columns followed by decoys.

    ``y = sin(2 x0) + x1**2 + noise``; decoys are independent normals.

    Returns:
        ``(X, y, names)`` where the informative names are ``"x0"`` and ``"x1"``.
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2 + n_decoys))
    y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + noise * rng.normal(size=n)
    names = ["x0", "x1"] + [f"decoy{i}" for i in range(n_decoys)]
    return X, y, names
