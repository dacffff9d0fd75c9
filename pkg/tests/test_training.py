"""Optimizer, schedule, early stopping, and evaluation protocol."""

import math

import numpy as np
import pytest

from hierfc.autodiff import Tensor
from hierfc.data import SplitSpec, TimePanel, default_covariates, standardize
from hierfc.hierarchy import aggregate_bottom_up, build_tree
from hierfc.model import ModelConfig, ModelParams, init_params
from hierfc.representatives import build_z, select_representatives
from hierfc.training import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    clip_global_norm,
    evaluate,
    train,
)


def scalar_params(x0: float) -> ModelParams:
    return ModelParams(tensors={"x": Tensor(np.array([x0]), requires_grad=True)})


class TestAdam:
    def test_zero_gradient_no_move_but_counts(self):
        params = scalar_params(3.0)
        state = AdamState.init(params)
        adam_step(params, {"x": np.zeros(1)}, state, lr=0.5)
        assert params["x"].data[0] == 3.0
        assert state.step == 1

    def test_reference_trace_on_quadratic(self):
        # frozen scalar Adam trace for f(x)=x^2, x0=1, lr=0.1
        expected = [
            0.9000000005,
            0.8004122286917928,
            0.7015862729460303,
            0.603939060573746,
            0.507963659264342,
        ]
        params = scalar_params(1.0)
        state = AdamState.init(params)
        for step in range(5):
            g = 2.0 * params["x"].data
            adam_step(params, {"x": g.copy()}, state, lr=0.1)
            assert params["x"].data[0] == pytest.approx(expected[step], abs=1e-15)

    def test_constant_gradient_update_approaches_lr(self):
        params = scalar_params(0.0)
        state = AdamState.init(params)
        lr = 0.03
        for _ in range(300):
            adam_step(params, {"x": np.array([3.5])}, state, lr=lr)
        before = params["x"].data[0]
        adam_step(params, {"x": np.array([3.5])}, state, lr=lr)
        assert abs(before - params["x"].data[0]) == pytest.approx(lr, rel=1e-6)

    def test_non_finite_gradient_aborts(self):
        params = scalar_params(1.0)
        state = AdamState.init(params)
        with pytest.raises(TrainingError, match="non-finite"):
            adam_step(params, {"x": np.array([np.nan])}, state, lr=0.1)


class TestClip:
    def test_large_gradients_scaled_to_max(self):
        grads = {"a": np.full(4, 10.0), "b": np.full(9, 10.0)}
        norm, clipped = clip_global_norm(grads, 10.0)
        assert clipped and norm > 10.0
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert total == pytest.approx(10.0)

    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.3, -0.4])}
        norm, clipped = clip_global_norm(grads, 10.0)
        assert not clipped
        assert norm == pytest.approx(0.5)
        assert np.array_equal(grads["a"], np.array([0.3, -0.4]))


class TestSchedule:
    def test_decay_example(self):
        tc = TrainConfig(initial_lr=1.0, decay_rate=0.5, decay_interval_epochs=6,
                         epochs=40, patience=10)
        assert tc.lr_at(13) == pytest.approx(0.25)
        assert tc.lr_at(1) == 1.0
        assert tc.lr_at(5) == 1.0
        assert tc.lr_at(6) == 0.5
        assert tc.lr_at(12) == 0.25

    def test_patience_bound(self):
        with pytest.raises(TrainingError, match="patience"):
            TrainConfig(initial_lr=0.1, epochs=5, patience=6)

    def test_positivity(self):
        with pytest.raises(TrainingError, match="positive"):
            TrainConfig(initial_lr=-0.1)


def build_setup(T=46, seed=0, mode="full", lambda_e=0.01, constant=False):
    tree = build_tree([("b1", "a"), ("b2", "a"), ("c1", "b1"), ("c2", "b1"), ("c3", "b2")])
    rng = np.random.default_rng(seed)
    n_leaves = len(tree.leaves)
    if constant:
        leaves = np.tile(rng.uniform(2, 5, size=n_leaves), (T, 1))
    else:
        t = np.arange(T)[:, None]
        leaves = (
            2.0
            + np.sin(2 * np.pi * t / 7.0 + rng.uniform(0, 6, size=n_leaves))
            + 0.1 * rng.normal(size=(T, n_leaves))
        )
    values = aggregate_bottom_up(leaves, tree, "mean")
    panel = TimePanel(
        values=values,
        covariates=default_covariates([str(i + 1) for i in range(T)]),
        time_index=[str(i + 1) for i in range(T)],
        tree=tree,
    )
    split = SplitSpec(T - 16, (T - 15, T - 8), (T - 7, T), 1)
    panel = standardize(panel, split)
    reps = select_representatives(panel, R=2, train_end=split.train_end)
    z = build_z(panel, reps)
    config = ModelConfig(
        H=6, F=2, K=2, R=2, D=panel.D, n_series=panel.N,
        enc_hidden=3, dec_hidden=3, lambda_e=lambda_e, mode=mode,
    )
    return panel, split, z, config


class TestTrain:
    def test_determinism_identical_histories(self):
        results = []
        for _ in range(2):
            panel, split, z, config = build_setup(seed=1)
            params = init_params(config, seed=5)
            tc = TrainConfig(initial_lr=0.01, epochs=3, patience=3,
                             batch_size=64, seed=9)
            results.append(train(params, config, tc, panel, split, z))
        a, b = results
        assert len(a.history) == len(b.history)
        for ra, rb in zip(a.history, b.history):
            assert ra.train_loss == rb.train_loss
            assert ra.val_mean_wape == rb.val_mean_wape
            assert ra.lr == rb.lr
        for k in a.params.tensors:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_best_checkpoint_is_history_minimum(self):
        panel, split, z, config = build_setup(seed=2)
        params = init_params(config, seed=3)
        tc = TrainConfig(initial_lr=0.02, epochs=5, patience=5, batch_size=64, seed=4)
        result = train(params, config, tc, panel, split, z)
        vals = [r.val_mean_wape for r in result.history]
        assert result.best_val_mean_wape == pytest.approx(min(vals))
        assert result.history[result.best_epoch - 1].val_mean_wape == pytest.approx(
            min(vals)
        )

    def test_early_stop_consistency(self):
        # huge lr makes validation worsen fast; the stop rule must fire
        # exactly patience epochs after the best
        panel, split, z, config = build_setup(seed=3)
        params = init_params(config, seed=6)
        tc = TrainConfig(initial_lr=5.0, epochs=12, patience=2, batch_size=256, seed=7)
        result = train(params, config, tc, panel, split, z)
        if result.stopped_early:
            assert len(result.history) == result.best_epoch + tc.patience
        else:
            assert len(result.history) == tc.epochs

    def test_restored_params_reproduce_best_val(self):
        panel, split, z, config = build_setup(seed=4)
        params = init_params(config, seed=8)
        tc = TrainConfig(initial_lr=0.02, epochs=4, patience=4, batch_size=64, seed=5)
        result = train(params, config, tc, panel, split, z)
        rep = evaluate(result.params, config, panel, split, z, segment="val")
        assert rep.mean_wape == pytest.approx(result.best_val_mean_wape, rel=1e-12)

    def test_history_csv_shape(self):
        panel, split, z, config = build_setup(seed=5)
        params = init_params(config, seed=1)
        tc = TrainConfig(initial_lr=0.01, epochs=2, patience=2, batch_size=64, seed=2)
        result = train(params, config, tc, panel, split, z)
        lines = result.history_csv().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_mean_wape,lr"
        assert len(lines) == 1 + len(result.history)
        assert lines[1].startswith("1,")


class TestEvaluate:
    def test_perfect_oracle_zero_errors(self):
        # constant series: zero-initialized params predict the standardized
        # zero exactly, which inverse-transforms to the constant truth
        panel, split, z, config = build_setup(seed=6, constant=True, lambda_e=0.0)
        params = init_params(config, seed=0)
        for t in params.tensors.values():
            t.data[:] = 0.0
        rep = evaluate(params, config, panel, split, z, segment="test")
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in rep.wape_by_level.values())
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in rep.smape_by_level.values())

    def test_level_structure_and_mean(self):
        panel, split, z, config = build_setup(seed=7)
        params = init_params(config, seed=2)
        rep = evaluate(params, config, panel, split, z, segment="test")
        assert rep.levels == [0, 1, 2]
        finite = [v for v in rep.wape_by_level.values() if math.isfinite(v)]
        assert rep.mean_wape == pytest.approx(float(np.mean(finite)))

    def test_metric_scale_raw_vs_rescaled(self):
        panel, split, z, config = build_setup(seed=8)
        params = init_params(config, seed=3)
        rescaled = evaluate(params, config, panel, split, z, "test", "rescaled")
        raw = evaluate(params, config, panel, split, z, "test", "raw")
        # leaf level is identical (|L(p)|=1); root differs only by a common
        # factor so its WAPE matches too; the Mean can differ through SMAPE
        lv = max(rescaled.levels)
        assert rescaled.wape_by_level[lv] == pytest.approx(raw.wape_by_level[lv])
        assert rescaled.wape_by_level[0] == pytest.approx(raw.wape_by_level[0])

    def test_unknown_scale(self):
        panel, split, z, config = build_setup(seed=9)
        params = init_params(config, seed=4)
        with pytest.raises(TrainingError, match="scale"):
            evaluate(params, config, panel, split, z, "test", "log")
