import numpy as np
import pytest
from sklearn.base import clone

from shifteval.baselines import (
    BankEntry,
    BaselineError,
    DescriptorBank,
    RetrievalBaseline,
    knn_estimate,
    topk_estimate,
)


def bank_from(rows):
    return DescriptorBank(
        entries=[
            BankEntry(np.asarray(v, dtype=np.float64), a, "m", f"w{i}")
            for i, (v, a) in enumerate(rows)
        ]
    )


class TestKnnEstimate:
    def test_two_nearest_mean(self):
        # Entries at distances 0.1, 0.2, 9 from the query; k=2 averages
        # the closer two metrics: (0.8 + 0.6) / 2 = 0.7.
        bank = bank_from(
            [
                ([0.1, 0.0, 0.0], 0.8),
                ([0.2, 0.0, 0.0], 0.6),
                ([9.0, 0.0, 0.0], 0.0),
            ]
        )
        assert knn_estimate([0.0, 0.0, 0.0], bank, k=2) == pytest.approx(0.7)

    def test_full_bank_is_global_mean(self):
        rng = np.random.default_rng(0)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0, 1, 7)]
        bank = bank_from(rows)
        expect = np.mean([a for _, a in rows])
        assert knn_estimate(rng.standard_normal(3), bank, k=7) == pytest.approx(expect)

    def test_duplicate_query_exact(self):
        bank = bank_from([([1.0, 2.0, 3.0], 0.42), ([5.0, 5.0, 5.0], 0.9)])
        assert knn_estimate([1.0, 2.0, 3.0], bank, k=1) == 0.42

    def test_joint_rescale_invariance(self):
        rng = np.random.default_rng(1)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0, 1, 6)]
        q = rng.standard_normal(3)
        a = knn_estimate(q, bank_from(rows), k=3)
        scaled = [(3.7 * v, m) for v, m in rows]
        b = knn_estimate(3.7 * q, bank_from(scaled), k=3)
        assert a == pytest.approx(b)

    def test_within_bank_metric_range(self):
        rng = np.random.default_rng(2)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0.2, 0.8, 10)]
        bank = bank_from(rows)
        metrics = [a for _, a in rows]
        for k in (1, 3, 10):
            est = knn_estimate(rng.standard_normal(3), bank, k=k)
            assert min(metrics) <= est <= max(metrics)

    def test_permutation_invariant_with_ties(self):
        # Two entries equidistant from the query; the workload_id
        # tie-break makes the answer independent of bank order.
        rows = [
            ([1.0, 0.0, 0.0], 0.2),
            ([-1.0, 0.0, 0.0], 0.8),
            ([0.0, 5.0, 0.0], 0.5),
        ]
        bank1 = DescriptorBank(
            entries=[BankEntry(np.array(v), a, "m", f"w{i}") for i, (v, a) in enumerate(rows)]
        )
        bank2 = DescriptorBank(entries=list(reversed(bank1.entries)))
        assert knn_estimate([0.0, 0.0, 0.0], bank1, k=1) == knn_estimate(
            [0.0, 0.0, 0.0], bank2, k=1
        )

    def test_errors(self):
        bank = bank_from([([0.0, 0.0, 0.0], 0.5)])
        with pytest.raises(BaselineError, match="out of range"):
            knn_estimate([0.0, 0.0, 0.0], bank, k=2)
        with pytest.raises(BaselineError, match="out of range"):
            knn_estimate([0.0, 0.0, 0.0], bank, k=0)
        with pytest.raises(BaselineError, match="empty"):
            knn_estimate([0.0, 0.0, 0.0], DescriptorBank(entries=[]), k=1)


class TestTopkEstimate:
    def test_cosine_alignment(self):
        bank = bank_from([([2.0, 0.0, 0.0], 0.9), ([0.0, 3.0, 0.0], 0.1)])
        assert topk_estimate([1.0, 0.0, 0.0], bank, k=1) == pytest.approx(0.9)

    def test_full_bank_is_global_mean(self):
        rng = np.random.default_rng(3)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0, 1, 5)]
        bank = bank_from(rows)
        expect = np.mean([a for _, a in rows])
        assert topk_estimate(rng.standard_normal(3), bank, k=5) == pytest.approx(expect)

    def test_query_scale_invariance(self):
        rng = np.random.default_rng(4)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0, 1, 8)]
        bank = bank_from(rows)
        q = rng.standard_normal(3)
        assert topk_estimate(q, bank, k=3) == pytest.approx(topk_estimate(10.0 * q, bank, k=3))

    def test_per_entry_scale_invariance(self):
        rng = np.random.default_rng(5)
        rows = [(rng.standard_normal(3), float(a)) for a in rng.uniform(0, 1, 8)]
        q = rng.standard_normal(3)
        a = topk_estimate(q, bank_from(rows), k=3)
        scales = rng.uniform(0.5, 5.0, len(rows))
        b = topk_estimate(q, bank_from([(s * v, m) for s, (v, m) in zip(scales, rows)]), k=3)
        assert a == pytest.approx(b)

    def test_zero_vectors_rank_last(self):
        bank = bank_from([([0.0, 0.0, 0.0], 0.99), ([0.0, 1.0, 0.0], 0.3)])
        # The zero entry gets similarity -1, so even an orthogonal
        # nonzero entry (similarity 0) beats it.
        assert topk_estimate([1.0, 0.0, 0.0], bank, k=1) == pytest.approx(0.3)


class TestRetrievalBaseline:
    def test_sklearn_roundtrip(self):
        est = RetrievalBaseline(method="topk", k=3)
        assert est.get_params() == {"method": "topk", "k": 3}
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_fit_predict_matches_functions(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((12, 3))
        y = rng.uniform(0, 1, 12)
        q = rng.standard_normal((4, 3))
        knn = RetrievalBaseline(method="knn", k=4).fit(X, y)
        expect = [knn_estimate(row, knn.bank_, 4) for row in q]
        assert np.allclose(knn.predict(q), expect)
        topk = RetrievalBaseline(method="topk", k=2).fit(X, y)
        expect = [topk_estimate(row, topk.bank_, 2) for row in q]
        assert np.allclose(topk.predict(q), expect)

    def test_single_query_promoted(self):
        rng = np.random.default_rng(7)
        est = RetrievalBaseline(k=1).fit(rng.standard_normal((5, 3)), rng.uniform(0, 1, 5))
        out = est.predict(np.zeros(3))
        assert out.shape == (1,)

    def test_not_fitted(self):
        with pytest.raises(BaselineError, match="not fitted"):
            RetrievalBaseline().predict(np.zeros(3))

    def test_shape_mismatch(self):
        with pytest.raises(BaselineError, match="disagree"):
            RetrievalBaseline().fit(np.zeros((3, 3)), np.zeros(4))
