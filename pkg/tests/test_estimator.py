import numpy as np
import pytest
from sklearn.base import clone

from shifteval.estimator import MetaAccuracyEstimator
from shifteval.meta import ContextVector

from conftest import make_pair, synth_tasks


def small_estimator():
    return MetaAccuracyEstimator(
        ctx_dim=16,
        hidden=(16, 8),
        epochs=30,
        patience=10,
        alpha_outer=5e-3,
        batch_size=16,
        seed=0,
    )


@pytest.fixture(scope="module")
def fitted():
    est = small_estimator()
    est.fit(synth_tasks(n_models=3, n_pairs=40, seed=0), synth_tasks(n_models=3, n_pairs=15, seed=1))
    return est


class TestSklearnContract:
    def test_get_set_params_roundtrip(self):
        est = small_estimator()
        params = est.get_params()
        assert params["ctx_dim"] == 16
        est.set_params(adapt_steps=5)
        assert est.adapt_steps == 5

    def test_clone_preserves_hyperparameters(self):
        est = small_estimator()
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "state_")

    def test_not_fitted_errors(self):
        est = small_estimator()
        sd = make_pair((1.0, 1.0, 1.0), 0.5).descriptor
        with pytest.raises(RuntimeError, match="not fitted"):
            est.predict(sd)
        with pytest.raises(RuntimeError, match="not fitted"):
            est.adapt([make_pair((1.0, 1.0, 1.0), 0.5)])


class TestFitPredict:
    def test_fit_returns_self_and_sets_state(self, fitted):
        assert hasattr(fitted, "state_")
        assert set(fitted.state_.contexts) == {"m0", "m1", "m2"}

    def test_predict_shapes_and_range(self, fitted):
        sds = [make_pair((0.5 * i, 1.0, 0.3), 0.5).descriptor for i in range(1, 5)]
        out = fitted.predict(sds)
        assert out.shape == (4,)
        assert np.all((out > 0.0) & (out < 1.0))
        single = fitted.predict(sds[0])
        assert single.shape == (1,)
        assert single[0] == out[0]

    def test_predict_with_trained_context(self, fitted):
        sd = make_pair((1.0, 2.0, 0.5), 0.5).descriptor
        default = fitted.predict(sd)[0]
        trained = fitted.predict(sd, context=fitted.state_.contexts["m2"])[0]
        assert 0.0 < trained < 1.0
        if fitted.state_.contexts["m2"].values.any():
            assert trained != default

    def test_auto_validation_split(self):
        est = small_estimator()
        est.fit(synth_tasks(n_models=2, n_pairs=30, seed=5))
        assert hasattr(est, "state_")

    def test_adapt_then_calibrate(self, fitted):
        unseen = synth_tasks(n_models=1, n_pairs=60, seed=20, offsets=[0.1])[0]
        ctx = fitted.adapt(unseen.pairs, model_id="u0", seed=0)
        assert isinstance(ctx, ContextVector)
        assert len(fitted.adaptation_trace_) == fitted.adapt_steps + 1
        calib = synth_tasks(n_models=1, n_pairs=30, seed=21, offsets=[0.1])[0]
        delta = fitted.calibrate(calib.pairs, ctx, alpha=0.1)
        assert delta >= 0.0
        test = synth_tasks(n_models=1, n_pairs=40, seed=22, offsets=[0.1])[0]
        preds = fitted.predict([p.descriptor for p in test.pairs], context=ctx)
        truths = np.array([p.true_metric for p in test.pairs])
        coverage = np.mean(np.abs(preds - truths) <= delta)
        assert coverage >= 0.7
