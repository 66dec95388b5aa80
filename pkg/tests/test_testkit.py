import hashlib
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logit

from sdmfusion.covariates import TERRACLIMATE_FEATURES
from sdmfusion.geo import BoundingBox, cell_containing
from sdmfusion.occurrence import load_occurrences
from sdmfusion.testkit import (
    WorldConfig,
    brute_force_assignment,
    generate_world,
    oracle_simplex_grid,
    simplex_lattice,
)

SMALL = BoundingBox(-30.0, 150.0, -29.6, 150.4)


def tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestWorld:
    def test_zero_rate_means_no_occurrences(self):
        w = generate_world(WorldConfig(bbox=SMALL, lam=0.0), 0)
        assert w.records == []
        assert sum(w.true_counts.values()) == 0

    def test_zero_beta_gives_flat_suitability(self):
        w = generate_world(WorldConfig(bbox=SMALL, beta={}), 1)
        np.testing.assert_array_equal(list(w.suitability.values()), 0.5)

    def test_suitability_in_open_interval(self):
        w = generate_world(WorldConfig(bbox=SMALL, beta={"tmax": 8.0}), 2)
        s = np.array(list(w.suitability.values()))
        assert np.all((s > 0) & (s < 1))

    def test_conservation_with_full_visitation(self):
        w = generate_world(WorldConfig(bbox=SMALL), 3)
        assert len(w.records) == sum(w.true_counts.values())
        assert w.observed_counts == w.true_counts

    def test_records_match_observed_under_bias(self):
        cfg = WorldConfig(bbox=SMALL, n_hubs=2, hub_radius_km=8.0, detect_prob=0.5,
                          visit_prob=(0.8,) * 5 + (0.2,) * 5)
        w = generate_world(cfg, 4)
        assert len(w.records) == sum(w.observed_counts.values())
        assert all(w.observed_counts[k] <= w.true_counts[k] for k in w.true_counts)
        assert all(w.observed_counts[k] == 0 for k, v in w.visited.items() if not v)
        assert not all(w.visited.values())

    def test_records_fall_in_their_cell(self):
        w = generate_world(WorldConfig(bbox=SMALL), 5)
        counts = {}
        for r in w.records:
            key = cell_containing(w.grid, r.location).key
            counts[key] = counts.get(key, 0) + 1
            assert r.country == w.countries[key]
        assert counts == {k: v for k, v in w.observed_counts.items() if v > 0}

    def test_beta_recoverable_from_suitability(self):
        beta = {"tmax": 1.5, "ppt": -0.8, "pdsi": 0.4}
        w = generate_world(WorldConfig(bbox=SMALL, beta=beta, intercept=-0.3), 6)
        X = np.array([w.covariates[c.key].as_array() for c in w.grid])
        Z = (X - X.mean(axis=0)) / X.std(axis=0)
        y = logit(np.array([w.suitability[c.key] for c in w.grid]))
        coef, *_ = np.linalg.lstsq(np.column_stack([np.ones(len(Z)), Z]), y, rcond=None)
        expected = [beta.get(n, 0.0) for n in TERRACLIMATE_FEATURES]
        np.testing.assert_allclose(coef[1:], expected, atol=1e-8)

    def test_dispersion_widens_counts(self):
        plain = generate_world(WorldConfig(bbox=SMALL, lam=50.0), 7)
        wide = generate_world(WorldConfig(bbox=SMALL, lam=50.0, dispersion=0.5), 7)
        def dispersion_index(w):
            c = np.array(list(w.true_counts.values()), dtype=float)
            s = np.array(list(w.suitability.values()))
            return np.mean((c - 50 * s) ** 2 / (50 * s))
        assert dispersion_index(wide) > 3 * dispersion_index(plain)

    @pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(detect_prob=1.5), dict(dispersion=0.0),
                                    dict(visit_prob=(0.5,) * 9), dict(visit_prob=(2.0,) * 10),
                                    dict(beta={"elevation": 1.0}), dict(patch_size=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            WorldConfig(**kw)


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        cfg = WorldConfig(bbox=SMALL, n_hubs=2)
        generate_world(cfg, 11, tmp_path / "a")
        generate_world(cfg, 11, tmp_path / "b")
        a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
        assert a == b
        assert "occurrences.csv" in a

    def test_different_seed_differs(self, tmp_path):
        generate_world(WorldConfig(bbox=SMALL), 1, tmp_path / "a")
        generate_world(WorldConfig(bbox=SMALL), 2, tmp_path / "b")
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")

    def test_written_occurrences_load_back(self, tmp_path):
        w = generate_world(WorldConfig(bbox=SMALL), 12, tmp_path)
        back = load_occurrences(tmp_path / "occurrences.csv")
        assert len(back.records) == len(w.records)


class TestOracles:
    def test_half_step_lattice(self):
        pts = simplex_lattice(0.5)
        assert len(pts) == 6
        np.testing.assert_allclose(pts.sum(axis=1), 1.0)

    def test_perfect_model(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 50, 30)
        P = np.column_stack([y + 5, y, y * 2])
        opt = oracle_simplex_grid(P, y, 0.1)
        np.testing.assert_allclose(opt.weights, (0, 1, 0), atol=1e-12)
        assert opt.mae == pytest.approx(0.0, abs=1e-12)

    def test_lattice_not_better_than_continuum(self):
        from sdmfusion.ensemble import optimize_weights
        from sdmfusion.testkit import ensemble_instance
        P, y = ensemble_instance(5, 100)
        assert oracle_simplex_grid(P, y, 0.1).mae >= optimize_weights(P, y).mae - 1e-9

    def test_brute_force_assignment(self):
        X = np.array([[0.0, 0.0], [10.0, 10.0], [4.9, 5.0]])
        C = np.array([[0.0, 0.0], [10.0, 10.0]])
        np.testing.assert_array_equal(brute_force_assignment(X, C), [0, 1, 0])
