"""Synthetic worlds with known ground truth, and brute-force oracles.

A world is a grid over a bounding box with smooth random covariate fields,
a landcover map derived partly from those fields, a suitability surface
``s = logistic(intercept + beta . z)`` over the standardised covariates
``z``, and true counts ``~ Poisson(lam * s)``. Setting ``dispersion`` to a
gamma shape ``k`` multiplies each cell's rate by an independent
``Gamma(k, 1/k)`` draw, giving overdispersed (negative binomial) counts
with a heavier tail.

Observation can be biased on purpose. With ``n_hubs`` set, only cells
within ``hub_radius_km`` of a randomly placed observer hub can be surveyed;
``visit_prob`` additionally gives, per landcover class, the chance that a
reachable cell is surveyed (observers favour some landscapes). Each frog in
a surveyed cell is detected with ``detect_prob``. Sightings are emitted only
for surveyed cells, so unsurveyed cells with frogs look exactly like true
absences in the occurrence file.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .covariates import TERRACLIMATE_FEATURES, CovariateVector, write_covariates_csv
from .geo import BoundingBox, GeoPoint, Grid, GridSpec, haversine_km, make_grid, write_grid_csv
from .occurrence import COUNTRIES, CellSample, OccurrenceRecord, write_occurrences
from .raster import LANDCOVER, N_LANDCOVER_CLASSES, RasterPatch, dominant_class, ndvi, patch_path, write_patch

# (mean, spread) of each covariate in plausible TerraClimate units
_COVARIATE_SCALES = {
    "tmax": (26.0, 4.0), "tmin": (13.0, 3.5), "pet": (120.0, 25.0), "ppt": (80.0, 35.0),
    "vap": (1.6, 0.4), "vpd": (1.2, 0.3), "soil": (60.0, 25.0), "ws": (3.5, 1.0),
    "q": (20.0, 10.0), "pdsi": (0.0, 2.0),
}

# per-class (red, green, blue, nir) reflectance signatures
_SPECTRA = np.array([
    [0.03, 0.05, 0.08, 0.02],   # 0 water
    [0.04, 0.08, 0.04, 0.45],   # 1 trees
    [0.08, 0.12, 0.06, 0.35],   # 2 grass
    [0.06, 0.10, 0.08, 0.30],   # 3 flooded vegetation
    [0.10, 0.13, 0.07, 0.38],   # 4 crops
    [0.09, 0.11, 0.07, 0.28],   # 5 scrub
    [0.25, 0.24, 0.22, 0.28],   # 6 built area
    [0.30, 0.27, 0.22, 0.33],   # 7 bare ground
    [0.80, 0.82, 0.85, 0.70],   # 8 snow/ice
    [0.50, 0.50, 0.52, 0.52],   # 9 clouds
])

_SPECIES = ("Litoria fallax", "Crinia signifera", "Limnodynastes peronii", "Amietia delalandii",
            "Smilisca baudinii")


@dataclass(frozen=True)
class WorldConfig:
    bbox: BoundingBox = BoundingBox(-30.0, 150.0, -29.0, 151.0)
    cell_area_km2: float = 30.0
    country_fractions: tuple[float, float, float] = (0.82, 0.11, 0.07)
    beta: Mapping[str, float] = field(default_factory=lambda: {"tmax": 1.2, "ppt": 0.9, "soil": -0.7})
    intercept: float = 0.0
    lam: float = 20.0
    smoothness: float = 3.0
    landcover_noise: float = 0.6
    landcover_purity: float = 0.75
    patch_size: int = 8
    pixel_noise: float = 0.02
    n_hubs: int | None = None
    hub_radius_km: float = 20.0
    detect_prob: float = 1.0
    visit_prob: tuple[float, ...] | None = None
    dispersion: float | None = None

    def __post_init__(self):
        if self.dispersion is not None and self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.visit_prob is not None and (len(self.visit_prob) != N_LANDCOVER_CLASSES
                                            or not all(0 <= v <= 1 for v in self.visit_prob)):
            raise ValueError(f"visit_prob needs {N_LANDCOVER_CLASSES} probabilities in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.detect_prob <= 1:
            raise ValueError("detect_prob must be in [0, 1]")
        if len(self.country_fractions) != 3 or min(self.country_fractions) < 0 or sum(self.country_fractions) <= 0:
            raise ValueError("country_fractions must be three non-negative numbers")
        unknown = set(self.beta) - set(TERRACLIMATE_FEATURES)
        if unknown:
            raise ValueError(f"beta names unknown covariates {sorted(unknown)}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")


@dataclass
class SyntheticWorld:
    config: WorldConfig
    seed: int
    grid: Grid
    countries: dict[tuple[int, int], str]
    covariates: dict[tuple[int, int], CovariateVector]
    landcover: dict[tuple[int, int], int]
    suitability: dict[tuple[int, int], float]
    true_counts: dict[tuple[int, int], int]
    observed_counts: dict[tuple[int, int], int]
    visited: dict[tuple[int, int], bool]
    patches: dict[tuple[int, int], dict[str, RasterPatch]]
    records: list[OccurrenceRecord]

    def sample(self, key: tuple[int, int], count: int | None = None) -> CellSample:
        """Cell sample with covariates and patches attached (observed count by default)."""
        c = self.observed_counts[key] if count is None else count
        return CellSample(self.grid.at(*key), c, self.countries[key], self.covariates[key],
                          dict(self.patches[key]))

    def presence_samples(self) -> list[CellSample]:
        return [self.sample(c.key) for c in self.grid if self.observed_counts[c.key] > 0]

    def write(self, out_dir) -> dict[str, Path]:
        """Write occurrences, covariates, grid, ground truth and patch files."""
        out = Path(out_dir)
        (out / "patches").mkdir(parents=True, exist_ok=True)
        paths = {
            "occurrences": out / "occurrences.csv",
            "covariates": out / "covariates.csv",
            "grid": out / "world_grid.csv",
            "truth": out / "truth.csv",
            "patches": out / "patches",
        }
        write_occurrences(self.records, paths["occurrences"])
        write_covariates_csv(self.covariates, paths["covariates"])
        write_grid_csv(self.grid, paths["grid"])
        with open(paths["truth"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "country", "landcover", "suitability", "true_count",
                        "observed_count", "visited"])
            for c in self.grid:
                k = c.key
                w.writerow([k[0], k[1], self.countries[k], self.landcover[k], repr(self.suitability[k]),
                            self.true_counts[k], self.observed_counts[k], int(self.visited[k])])
        for c in self.grid:
            for modality, patch in self.patches[c.key].items():
                write_patch(patch, patch_path(paths["patches"], c.row, c.col, modality))
        return paths


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = rng.normal(size=shape)
    if sigma > 0:
        f = ndimage.gaussian_filter(f, sigma, mode="reflect")
    sd = f.std()
    return (f - f.mean()) / (sd if sd > 0 else 1.0)


def _country_of_col(col: int, n_cols: int, fractions) -> str:
    cum = np.cumsum(fractions) / np.sum(fractions)
    pos = (col + 0.5) / n_cols
    return COUNTRIES[min(int(np.searchsorted(cum, pos, side="right")), 2)]


def generate_world(config: WorldConfig = WorldConfig(), seed: int = 0, out_dir=None) -> SyntheticWorld:
    """Build a world deterministically from ``seed`` and optionally write it."""
    rng = np.random.default_rng(seed)
    grid = make_grid(config.bbox, GridSpec(config.cell_area_km2))
    shape = (grid.n_rows, grid.n_cols)

    z = {name: _smooth_field(rng, shape, config.smoothness) for name in TERRACLIMATE_FEATURES}
    lin = np.full(shape, float(config.intercept))
    for name, b in config.beta.items():
        lin += b * z[name]
    suit = expit(lin)

    latent = 0.6 * z["soil"] + 0.6 * z["ppt"] + config.landcover_noise * _smooth_field(rng, shape, config.smoothness)
    edges = np.quantile(latent, np.linspace(0, 1, N_LANDCOVER_CLASSES + 1)[1:-1])
    lc_class = np.digitize(latent, edges)

    rate = config.lam * suit
    if config.dispersion is not None:
        rate = rate * rng.gamma(config.dispersion, 1.0 / config.dispersion, shape)
    true = rng.poisson(rate)

    centroids = grid.centroids().reshape(shape + (2,))
    if config.n_hubs is None:
        visited = np.ones(shape, dtype=bool)
    else:
        hubs = rng.choice(len(grid), size=min(config.n_hubs, len(grid)), replace=False)
        hub_pts = grid.centroids()[hubs]
        d = haversine_km(centroids[..., 0, None], centroids[..., 1, None], hub_pts[:, 0], hub_pts[:, 1])
        visited = d.min(axis=-1) <= config.hub_radius_km
    if config.visit_prob is not None:
        visited &= rng.random(shape) < np.asarray(config.visit_prob)[lc_class]
    observed = np.where(visited, rng.binomial(true, config.detect_prob), 0)

    p = config.patch_size
    countries, covs, landcover, suitability, tc, oc, vis, patches = {}, {}, {}, {}, {}, {}, {}, {}
    records: list[OccurrenceRecord] = []
    for cell in grid:
        r, c = cell.key
        k = cell.key
        countries[k] = _country_of_col(c, grid.n_cols, config.country_fractions)
        covs[k] = CovariateVector(tuple(_COVARIATE_SCALES[n][0] + _COVARIATE_SCALES[n][1] * z[n][r, c]
                                        for n in TERRACLIMATE_FEATURES))

        base = lc_class[r, c]
        mixed = rng.random((p, p)) >= config.landcover_purity
        lc = np.where(mixed, rng.integers(0, N_LANDCOVER_CLASSES, (p, p)), base).astype(float)
        lc_patch = RasterPatch((LANDCOVER,), lc[None])
        landcover[k] = dominant_class(lc_patch)

        refl = _SPECTRA[lc.astype(int)].transpose(2, 0, 1).copy()
        refl[3] += 0.04 * z["ppt"][r, c]
        refl += rng.normal(0.0, config.pixel_noise, refl.shape)
        rgb = RasterPatch(("red", "green", "blue", "nir"), np.clip(refl, 0.0, 1.0))
        patches[k] = {"RGB": rgb, "LC": lc_patch, "NDVI": ndvi(rgb)}

        suitability[k] = float(suit[r, c])
        tc[k] = int(true[r, c])
        oc[k] = int(observed[r, c])
        vis[k] = bool(visited[r, c])
        b = cell.bbox
        for _ in range(oc[k]):
            lat = b.min_lat + rng.random() * (b.max_lat - b.min_lat)
            lon = b.min_lon + rng.random() * (b.max_lon - b.min_lon)
            day = int(rng.integers(0, 3 * 365))
            ts = (np.datetime64("2017-01-01") + np.timedelta64(day, "D")).astype(str)
            records.append(OccurrenceRecord(_SPECIES[int(rng.integers(len(_SPECIES)))],
                                            GeoPoint(lat, lon), f"{ts}T00:00:00Z", countries[k]))

    world = SyntheticWorld(config, seed, grid, countries, covs, landcover, suitability, tc, oc, vis,
                           patches, records)
    if out_dir is not None:
        world.write(out_dir)
    return world


# -- oracles -------------------------------------------------------------------------

def simplex_lattice(step: float, dim: int = 3) -> np.ndarray:
    """All points of the simplex lattice with spacing ``step`` (step must divide 1)."""
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} does not divide 1")
    pts = [c for c in itertools.product(range(n + 1), repeat=dim - 1) if sum(c) <= n]
    return np.array([(*c, n - sum(c)) for c in pts], dtype=float) / n


@dataclass
class LatticeOptimum:
    weights: np.ndarray
    mae: float
    n_evaluated: int


def oracle_simplex_grid(preds, truth, step: float = 0.01) -> LatticeOptimum:
    """Exhaustive MAE minimum over the simplex lattice."""
    P = np.asarray(preds, dtype=float)
    y = np.asarray(truth, dtype=float).ravel()
    lattice = simplex_lattice(step, P.shape[1])
    best_w, best = None, math.inf
    for start in range(0, len(lattice), 512):
        block = lattice[start:start + 512]
        maes = np.abs(y[:, None] - P @ block.T).mean(axis=0)
        j = int(np.argmin(maes))
        if maes[j] < best:
            best, best_w = float(maes[j]), block[j]
    return LatticeOptimum(best_w, best, len(lattice))


def ensemble_instance(seed: int, n: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Random three-model prediction matrix and truth for weight fitting.

    Truth is a skewed count vector; each model sees it through its own bias,
    scale and noise level, so no single column dominates.
    """
    rng = np.random.default_rng(seed)
    truth = rng.gamma(2.0, 20.0, n)
    cols = []
    for _ in range(3):
        bias = rng.normal(0.0, 10.0)
        scale = rng.uniform(0.6, 1.4)
        cols.append(np.maximum(scale * truth + bias + rng.normal(0.0, rng.uniform(5.0, 25.0), n), 0.0))
    return np.column_stack(cols), truth


def brute_force_assignment(X, centroids) -> np.ndarray:
    """Nearest centroid per point by explicit double loop."""
    X = np.asarray(X, dtype=float)
    C = np.asarray(centroids, dtype=float)
    out = np.empty(len(X), dtype=int)
    for i, x in enumerate(X):
        best, arg = math.inf, -1
        for j, c in enumerate(C):
            d = float(sum((a - b) ** 2 for a, b in zip(x, c)))
            if d < best:
                best, arg = d, j
        out[i] = arg
    return out


def numerical_gradient(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fun`` at ``x`` (one coordinate at a time)."""
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = fun(x)
        x.flat[i] = old - h
        down = fun(x)
        x.flat[i] = old
        g.flat[i] = (up - down) / (2.0 * h)
    return g


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries.

    The floor keeps entries that sit below the roundoff noise of a central
    difference (about machine epsilon * |loss| / h, i.e. 1e-10 for h = 1e-5)
    from dominating the maximum.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
