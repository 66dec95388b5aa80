import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmfusion.ensemble import (
    INITIAL_WEIGHTS,
    EnsembleWeights,
    ensemble_predict,
    optimize_weights,
    project_to_simplex,
    read_weights_csv,
    write_weights_csv,
)
from sdmfusion.metrics import mae
from sdmfusion.testkit import ensemble_instance, oracle_simplex_grid, simplex_lattice


class TestWeights:
    def test_valid(self):
        assert EnsembleWeights((0.3, 0.3, 0.4)).w == (0.3, 0.3, 0.4)

    @pytest.mark.parametrize("w", [(0.5, 0.5, 0.5), (-0.1, 0.6, 0.5), (1.2, -0.2, 0.0)])
    def test_invalid(self, w):
        with pytest.raises(ValueError):
            EnsembleWeights(w)


class TestPredict:
    def test_initial_weights_example(self):
        assert ensemble_predict(EnsembleWeights(INITIAL_WEIGHTS), (10, 20, 30)) == pytest.approx(21.0)

    def test_vertex_returns_that_model(self):
        assert ensemble_predict((1, 0, 0), (7.5, 20, 30)) == 7.5

    def test_equal_weights_mean(self):
        assert ensemble_predict((1 / 3, 1 / 3, 1 / 3), (1, 2, 6)) == pytest.approx(3.0)

    def test_unnormalised_weights(self):
        assert ensemble_predict((3, 3, 4), (10, 20, 30)) == pytest.approx(21.0)

    def test_matrix_input(self):
        P = np.array([[10, 20, 30], [0, 0, 10]])
        np.testing.assert_allclose(ensemble_predict((0.3, 0.3, 0.4), P), [21.0, 4.0])

    def test_zero_weights(self):
        with pytest.raises(ValueError):
            ensemble_predict((0, 0, 0), (1, 2, 3))


class TestProjection:
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
    def test_lands_on_simplex(self, v):
        w = project_to_simplex(np.array(v))
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)

    def test_fixed_point(self):
        w = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(project_to_simplex(w), w)

    def test_is_nearest_lattice_point_or_better(self):
        v = np.array([0.9, 0.4, -0.2])
        w = project_to_simplex(v)
        lattice = simplex_lattice(0.05)
        assert np.linalg.norm(v - w) <= np.min(np.linalg.norm(lattice - v, axis=1)) + 1e-12


class TestOptimize:
    def test_perfect_column(self):
        P, y = ensemble_instance(3)
        P[:, 1] = y
        res = optimize_weights(P, y)
        np.testing.assert_allclose(res.weights.w, (0, 1, 0), atol=1e-6)
        assert res.mae == pytest.approx(0.0, abs=1e-6)

    def test_identical_models(self):
        _, y = ensemble_instance(4)
        col = y + np.random.default_rng(0).normal(0, 5, len(y))
        P = np.column_stack([col, col, col])
        res = optimize_weights(P, y)
        assert res.mae == pytest.approx(mae(y, col), abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_lattice_oracle(self, seed):
        P, y = ensemble_instance(seed)
        res = optimize_weights(P, y, seed=seed)
        assert res.mae <= oracle_simplex_grid(P, y, 0.01).mae + 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_beats_vertices_and_start(self, seed):
        P, y = ensemble_instance(seed)
        res = optimize_weights(P, y)
        for w in [*np.eye(3), INITIAL_WEIGHTS]:
            assert res.mae <= mae(y, P @ np.asarray(w)) + 1e-12

    def test_subgradient_alone_stays_close(self):
        P, y = ensemble_instance(11)
        res = optimize_weights(P, y, polish=False)
        assert res.mae <= oracle_simplex_grid(P, y, 0.01).mae * 1.01

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(5, 60))
    def test_simplex_and_monotone_history(self, seed, n):
        P, y = ensemble_instance(seed, n)
        res = optimize_weights(P, y)
        w = res.weights.as_array()
        assert np.all((w >= 0) & (w <= 1))
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))
        assert res.mae == pytest.approx(mae(y, P @ w))

    @settings(max_examples=15)
    @given(st.integers(0, 10_000), st.permutations([0, 1, 2]))
    def test_permutation_symmetry(self, seed, perm):
        P, y = ensemble_instance(seed, 80)
        base = optimize_weights(P, y, seed=1)
        permuted = optimize_weights(P[:, perm], y, seed=1)
        assert permuted.mae == pytest.approx(base.mae, abs=1e-6)
        # the L1 optimum is unique for continuous noise, so weights follow the columns
        np.testing.assert_allclose(permuted.weights.as_array(), base.weights.as_array()[perm], atol=1e-4)

    def test_rejects_nan(self):
        P, y = ensemble_instance(0, 10)
        P[3, 2] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            optimize_weights(P, y)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            optimize_weights(np.ones((4, 3)), np.ones(5))


class TestOracle:
    def test_lattice_size(self):
        assert len(simplex_lattice(0.5)) == 6
        assert len(simplex_lattice(0.01)) == 5151

    def test_lattice_rejects_non_divisor(self):
        with pytest.raises(ValueError):
            simplex_lattice(0.3)


def test_weights_csv_round_trip(tmp_path):
    w = EnsembleWeights((0.1, 0.6, 0.3))
    write_weights_csv(w, tmp_path / "weights.csv")
    assert (tmp_path / "weights.csv").read_text().splitlines()[0] == "model,weight"
    names, back = read_weights_csv(tmp_path / "weights.csv")
    assert names == ("RGB", "LC", "NDVI")
    assert back == w
