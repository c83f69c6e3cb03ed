"""Metrics, prediction interfaces, grid search, and phase portraits."""

import numpy as np
import pytest

from koopfuse.datasets import build_snapshots, split, standardize
from koopfuse.dictionary import IdentityDictionary, make_monomial
from koopfuse.errors import ConfigError, ZeroVarianceError
from koopfuse.evaluation import (
    MetricsRecord, evaluate_model, grid_search, phase_portrait, predict_n_step,
    predict_one_step, predict_output, r_squared,
)
from koopfuse.solvers import KoopmanModel, TrainConfig, finite_closure_theoretical_model
from koopfuse.spectral import apply_affine_transform
from koopfuse.systems import Trajectory, generate_dataset, make_system

MONOMIAL_EXPONENTS = [(2, 0), (1, 1), (3, 0)]


def _benchmark_trajs(n_traj=20, seed=7):
    spec = make_system("finite-closure")
    return generate_dataset(spec, n_traj, [(5, 10), (5, 10)], 30, seed=seed)


class TestRSquared:
    def test_perfect(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert r_squared(a, a) == 1.0

    def test_zero_prediction(self):
        a = np.array([1.0, -2.0, 3.0])
        assert r_squared(a, np.zeros(3)) == pytest.approx(0.0)

    def test_hand_case(self):
        assert r_squared(np.array([1.0, 1.0]), np.array([2.0, 0.0])) == pytest.approx(0.0)

    def test_can_be_negative(self):
        assert r_squared(np.array([1.0]), np.array([3.0])) < 0

    def test_not_mean_centered(self):
        # constant actual with a wrong constant prediction is well-defined
        # under this formula (unlike the centered definition)
        a = np.full(4, 2.0)
        assert r_squared(a, np.full(4, 1.0)) == pytest.approx(0.75)

    def test_all_zero_rejected(self):
        with pytest.raises(ZeroVarianceError):
            r_squared(np.zeros(3), np.ones(3))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            r_squared(np.zeros(3), np.zeros(4))

    def test_one_iff_equal(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=20)
        b = a.copy()
        b[3] += 1e-5
        assert r_squared(a, a) == 1.0
        assert r_squared(a, b) < 1.0


class TestPredictions:
    def setup_method(self):
        self.model = finite_closure_theoretical_model()

    def test_one_step_exact(self):
        np.testing.assert_allclose(predict_one_step(self.model, np.array([1.0, 1.0])),
                                   [0.9, -2.1], atol=1e-8)

    def test_fixed_point(self):
        np.testing.assert_allclose(predict_one_step(self.model, np.zeros(2)),
                                   np.zeros(2), atol=1e-12)

    def test_identity_model(self):
        model = KoopmanModel(K=np.eye(2), W_h=np.zeros((1, 2)),
                             dictionary=IdentityDictionary(2))
        x = np.array([3.0, -4.0])
        np.testing.assert_allclose(predict_one_step(model, x), x)

    def test_output_exact(self):
        assert predict_output(self.model, np.array([2.0, 3.0]))[0] == pytest.approx(6.0, abs=1e-8)

    def test_zero_output_map(self):
        model = KoopmanModel(K=np.eye(2), W_h=np.zeros((1, 2)),
                             dictionary=IdentityDictionary(2))
        assert predict_output(model, np.array([5.0, 5.0]))[0] == 0.0

    def test_n_step_one_matches_one_step(self):
        x = np.array([1.5, -0.5])
        np.testing.assert_allclose(predict_n_step(self.model, x, 1)[0],
                                   predict_one_step(self.model, x))

    def test_n_step_tracks_truth(self):
        tr = _benchmark_trajs(1)[0]
        pred = predict_n_step(self.model, tr.states[0], 30)
        actual = tr.states[1:]
        assert np.linalg.norm(pred - actual) / np.linalg.norm(actual) < 1e-6

    def test_relift_differs_for_inexact_models(self):
        # a truncated dictionary cannot close exactly; K-power and re-lift
        # rollouts then diverge from each other
        snaps = build_snapshots(_benchmark_trajs(10))
        from koopfuse.solvers import fit_edmd_model
        model = fit_edmd_model(snaps, make_monomial(2, [(0, 2)]))
        x0 = np.array([7.0, 7.0])
        a = predict_n_step(model, x0, 10, relift=False)
        b = predict_n_step(model, x0, 10, relift=True)
        assert np.max(np.abs(a - b)) > 1e-6

    def test_relift_equals_kpower_for_linear_identity(self):
        model = KoopmanModel(K=np.array([[0.9, 0.1], [0.0, 0.8]]),
                             W_h=np.zeros((1, 2)), dictionary=IdentityDictionary(2))
        x0 = np.array([1.0, 2.0])
        np.testing.assert_array_equal(predict_n_step(model, x0, 8),
                                      predict_n_step(model, x0, 8, relift=True))


class TestEvaluateModel:
    def test_perfect_model(self):
        rec = evaluate_model(finite_closure_theoretical_model(), _benchmark_trajs(5))
        assert rec.r2_x_1step == pytest.approx(1.0, abs=1e-9)
        assert rec.r2_x_nstep == pytest.approx(1.0, abs=1e-9)
        assert rec.r2_y == pytest.approx(1.0, abs=1e-9)

    def test_metric_coordinates_invariant(self):
        # a raw-coordinate model and its affine-lifted twin (which carries
        # the transform) report identical metrics on the same raw data
        trajs = _benchmark_trajs(5)
        _, tf = standardize(build_snapshots(_benchmark_trajs(50, seed=1)))
        raw = finite_closure_theoretical_model()
        twin = apply_affine_transform(raw, tf)
        rec_a = evaluate_model(raw, trajs)
        rec_b = evaluate_model(twin, trajs)
        assert rec_a.r2_x_1step == pytest.approx(rec_b.r2_x_1step, abs=1e-8)
        assert rec_a.r2_x_nstep == pytest.approx(rec_b.r2_x_nstep, abs=1e-8)
        assert rec_a.r2_y == pytest.approx(rec_b.r2_y, abs=1e-8)

    def test_horizon_limits_rollout(self):
        rec = evaluate_model(finite_closure_theoretical_model(), _benchmark_trajs(3),
                             horizon=5)
        assert rec.horizon == 5

    def test_record_round_trip(self):
        rec = MetricsRecord(0.5, 0.4, 0.3, model_id="m", dataset_id="d", horizon=7)
        d = rec.to_dict()
        assert d["r2_x_1step"] == 0.5 and d["horizon"] == 7


class TestGridSearch:
    def _data(self):
        trajs = _benchmark_trajs(12, seed=3)
        tr, va, te = split(trajs, seed=3)
        std_tr, tf = standardize(build_snapshots(tr))
        from koopfuse.datasets import apply_transform
        std_va = apply_transform(build_snapshots(va), tf)
        return std_tr, std_va, va, tf

    def test_single_cell(self):
        std_tr, std_va, va, tf = self._data()
        cfg = TrainConfig(learning_rate=0.05, epochs=30, seed=0)
        best, results = grid_search("direct", {"n_x": [1], "n_xl": [1], "n_xn": [2]},
                                    std_tr, std_va, cfg, transform=tf,
                                    val_trajectories=va)
        assert len(results) == 1
        assert best is not None
        assert results[0]["error"] is None

    def test_selection_is_deterministic(self):
        std_tr, std_va, va, tf = self._data()
        grid = {"n_x": [1, 2], "n_xl": [1], "n_xn": [2]}
        cfg = TrainConfig(learning_rate=0.05, epochs=30, seed=0)
        b1, r1 = grid_search("direct", grid, std_tr, std_va, cfg, transform=tf,
                             val_trajectories=va)
        cfg = TrainConfig(learning_rate=0.05, epochs=30, seed=0)
        b2, r2 = grid_search("direct", grid, std_tr, std_va, cfg, transform=tf,
                             val_trajectories=va)
        np.testing.assert_array_equal(b1.K, b2.K)
        assert [row["score"] for row in r1] == [row["score"] for row in r2]

    def test_best_not_dominated(self):
        std_tr, std_va, va, tf = self._data()
        grid = {"n_x": [1, 2], "n_xl": [1], "n_xn": [2, 3]}
        cfg = TrainConfig(learning_rate=0.05, epochs=30, seed=0)
        best, results = grid_search("direct", grid, std_tr, std_va, cfg,
                                    transform=tf, val_trajectories=va)
        best_score = max(row["score"] for row in results if row["score"] is not None)
        rec = evaluate_model(best, va)
        assert rec.r2_x_1step + rec.r2_y == pytest.approx(best_score)

    def test_unknown_algorithm(self):
        std_tr, std_va, va, tf = self._data()
        with pytest.raises(ConfigError):
            grid_search("magic", {"n_x": [1]}, std_tr, std_va, TrainConfig())

    def test_empty_grid(self):
        std_tr, std_va, va, tf = self._data()
        with pytest.raises(ConfigError):
            grid_search("direct", {"n_x": []}, std_tr, std_va, TrainConfig())

    def test_cell_failures_recorded_not_fatal(self):
        std_tr, std_va, va, tf = self._data()
        cfg = TrainConfig(learning_rate=0.05, epochs=10, seed=0)
        # n_x = -1 is an invalid width and must fail inside its cell only
        best, results = grid_search("direct", {"n_x": [1, -1], "n_xl": [1], "n_xn": [2]},
                                    std_tr, std_va, cfg, transform=tf,
                                    val_trajectories=va)
        errors = [row["error"] for row in results]
        assert any(e is not None for e in errors)
        assert best is not None


class TestPhasePortrait:
    def test_true_simulator(self):
        trajs = _benchmark_trajs(5)
        model = finite_closure_theoretical_model()
        result = phase_portrait(model, [t.states[0] for t in trajs], 30, trajs)
        assert result["portrait_r2"] == pytest.approx(1.0, abs=1e-9)
        assert len(result["rollouts"]) == 5

    def test_dissipating_model_scores_low(self):
        # a contraction map cannot track the reference portrait
        trajs = _benchmark_trajs(5)
        model = KoopmanModel(K=0.1 * np.eye(2), W_h=np.zeros((1, 2)),
                             dictionary=IdentityDictionary(2))
        result = phase_portrait(model, [t.states[0] for t in trajs], 30, trajs)
        assert result["portrait_r2"] < 0.7
