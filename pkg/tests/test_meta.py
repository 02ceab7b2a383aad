import numpy as np
import pytest

from shifteval.meta import (
    ContextVector,
    EvalPair,
    MetaConfig,
    MetaError,
    TaskDataset,
    adapt_unseen,
    calibrate_interval,
    inner_adapt,
    meta_train,
    predict,
)

from conftest import TINY_CONFIG, make_pair, synth_tasks


class TestDataTypes:
    def test_pair_rejects_out_of_range_metric(self):
        with pytest.raises(MetaError, match="outside"):
            make_pair((1.0, 1.0, 1.0), 1.2)

    def test_task_rejects_foreign_pairs(self):
        p = make_pair((1.0, 1.0, 1.0), 0.5, model_id="other")
        with pytest.raises(MetaError, match="match"):
            TaskDataset("m0", [p])
        with pytest.raises(MetaError, match="empty"):
            TaskDataset("m0", [])

    def test_context_rejects_non_finite(self):
        with pytest.raises(MetaError, match="non-finite"):
            ContextVector("m0", np.array([1.0, np.nan]))


class TestMetaTrain:
    def test_learns_the_synthetic_response(self, tiny_state):
        # Training must clearly beat the constant-mean predictor.
        val = synth_tasks(n_models=3, n_pairs=15, seed=1)
        truths = np.array([p.true_metric for t in val for p in t.pairs])
        const_mae = np.mean(np.abs(truths - truths.mean()))
        assert min(tiny_state.val_mae_log) < 0.5 * const_mae

    def test_best_snapshot_is_log_minimum(self, tiny_state):
        assert tiny_state.val_mae_log[tiny_state.best_epoch] == pytest.approx(
            min(tiny_state.val_mae_log)
        )
        assert set(tiny_state.contexts) == {"m0", "m1", "m2"}

    def test_deterministic_given_seed(self):
        train = synth_tasks(n_models=2, n_pairs=20, seed=3)
        val = synth_tasks(n_models=2, n_pairs=10, seed=4)
        cfg = MetaConfig(ctx_dim=8, hidden=(8,), epochs=5, patience=5, b_train=8, b_val=8, seed=5)
        a = meta_train(train, val, cfg)
        b = meta_train(train, val, cfg)
        for wa, wb in zip(a.params.weights, b.params.weights):
            assert np.array_equal(wa, wb)
        for mid in a.contexts:
            assert np.array_equal(a.contexts[mid].values, b.contexts[mid].values)
        assert a.val_mae_log == b.val_mae_log

    def test_id_mismatch_rejected(self):
        train = synth_tasks(n_models=2, n_pairs=5, seed=0)
        val = synth_tasks(n_models=3, n_pairs=5, seed=1)
        with pytest.raises(MetaError, match="same model ids"):
            meta_train(train, val, TINY_CONFIG)


class TestInnerAdapt:
    def test_trace_shape_and_monotone(self, tiny_state):
        pairs = synth_tasks(n_models=1, n_pairs=30, seed=9)[0].pairs
        ctx = ContextVector("m0", np.zeros(TINY_CONFIG.ctx_dim))
        adapted, trace = inner_adapt(
            tiny_state.params, ctx, pairs, alpha=1.0, steps=4, normalizer=tiny_state.normalizer
        )
        assert len(trace) == 5
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert adapted.values.shape == (TINY_CONFIG.ctx_dim,)

    def test_zero_steps_returns_input(self, tiny_state):
        pairs = synth_tasks(n_models=1, n_pairs=10, seed=9)[0].pairs
        ctx = ContextVector("m0", np.ones(TINY_CONFIG.ctx_dim) * 0.1)
        adapted, trace = inner_adapt(
            tiny_state.params, ctx, pairs, alpha=1.0, steps=0, normalizer=tiny_state.normalizer
        )
        assert np.array_equal(adapted.values, ctx.values)
        assert len(trace) == 1

    def test_rejects_bad_inputs(self, tiny_state):
        ctx = ContextVector("m0", np.zeros(TINY_CONFIG.ctx_dim))
        with pytest.raises(MetaError, match="empty"):
            inner_adapt(tiny_state.params, ctx, [], 1.0, 1, tiny_state.normalizer)
        pairs = synth_tasks(n_models=1, n_pairs=5, seed=9)[0].pairs
        with pytest.raises(MetaError, match=">= 0"):
            inner_adapt(tiny_state.params, ctx, pairs, 1.0, -1, tiny_state.normalizer)


class TestAdaptUnseen:
    def test_improves_over_zero_context(self, tiny_state):
        # An unseen model with a visible offset from the pool.
        unseen = synth_tasks(n_models=1, n_pairs=60, seed=20, offsets=[0.12])[0]
        holdout = synth_tasks(n_models=1, n_pairs=40, seed=21, offsets=[0.12])[0]
        ctx, trace = adapt_unseen(tiny_state, unseen.pairs, model_id="u0", seed=0)
        zero = ContextVector("u0", np.zeros(TINY_CONFIG.ctx_dim))
        adapted_mae = np.mean(
            [abs(predict(tiny_state, ctx, p.descriptor) - p.true_metric) for p in holdout.pairs]
        )
        zero_mae = np.mean(
            [abs(predict(tiny_state, zero, p.descriptor) - p.true_metric) for p in holdout.pairs]
        )
        assert adapted_mae < zero_mae
        assert len(trace) == TINY_CONFIG.adapt_steps + 1

    def test_zero_steps_short_circuits(self, tiny_state):
        unseen = synth_tasks(n_models=1, n_pairs=10, seed=22)[0]
        ctx, trace = adapt_unseen(tiny_state, unseen.pairs, steps=0, model_id="u")
        assert np.array_equal(ctx.values, np.zeros(TINY_CONFIG.ctx_dim))
        assert trace == []

    def test_deterministic_given_seed(self, tiny_state):
        unseen = synth_tasks(n_models=1, n_pairs=50, seed=23)[0]
        a, ta = adapt_unseen(tiny_state, unseen.pairs, seed=4)
        b, tb = adapt_unseen(tiny_state, unseen.pairs, seed=4)
        assert np.array_equal(a.values, b.values)
        assert ta == tb

    def test_rejects_empty(self, tiny_state):
        with pytest.raises(MetaError, match="no adaptation pairs"):
            adapt_unseen(tiny_state, [])


class TestPredictAndCalibrate:
    def test_predict_in_unit_interval(self, tiny_state):
        ctx = tiny_state.contexts["m0"]
        sd = make_pair((0.5, 1.0, 0.3), 0.5).descriptor
        est = predict(tiny_state, ctx, sd)
        assert isinstance(est, float)
        assert 0.0 < est < 1.0

    def test_halfwidth_is_residual_quantile(self, tiny_state):
        # Oracle: compute the residual rank by hand.
        ctx = tiny_state.contexts["m0"]
        pairs = synth_tasks(n_models=1, n_pairs=29, seed=30)[0].pairs
        delta = calibrate_interval(tiny_state, ctx, pairs, alpha=0.1)
        residuals = np.sort(
            [abs(predict(tiny_state, ctx, p.descriptor) - p.true_metric) for p in pairs]
        )
        # n = 29: rank ceil(30 * 0.9) = 27.
        assert delta == pytest.approx(residuals[26])

    def test_coverage_on_exchangeable_data(self, tiny_state):
        # Split-conformal guarantee: coverage >= 1 - alpha in expectation.
        ctx = tiny_state.contexts["m1"]
        pool = synth_tasks(n_models=1, n_pairs=400, seed=31, offsets=[0.0])[0].pairs
        calib, test = pool[:200], pool[200:]
        delta = calibrate_interval(tiny_state, ctx, calib, alpha=0.1)
        covered = [
            abs(predict(tiny_state, ctx, p.descriptor) - p.true_metric) <= delta for p in test
        ]
        assert np.mean(covered) >= 0.85

    def test_insufficient_pairs_rejected(self, tiny_state):
        ctx = tiny_state.contexts["m0"]
        pairs = synth_tasks(n_models=1, n_pairs=5, seed=32)[0].pairs
        with pytest.raises(MetaError, match="insufficient"):
            calibrate_interval(tiny_state, ctx, pairs, alpha=0.1)
        with pytest.raises(MetaError, match="alpha"):
            calibrate_interval(tiny_state, ctx, pairs, alpha=1.5)
