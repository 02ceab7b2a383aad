"""Retrieval baselines over normalized shift descriptors.

KNN averages the true metrics of the k nearest bank entries (Euclidean
distance); Top-k does the same under cosine similarity. Ties are broken
by (score, workload_id) so results are independent of bank order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

__all__ = [
    "BankEntry",
    "DescriptorBank",
    "knn_estimate",
    "topk_estimate",
    "RetrievalBaseline",
]

DEFAULT_K = 5


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class BankEntry:
    vector: np.ndarray  # normalized 3-vector
    true_metric: float
    model_id: str
    workload_id: str


@dataclass
class DescriptorBank:
    entries: list[BankEntry]

    def __len__(self) -> int:
        return len(self.entries)


def _check_query(query, bank: DescriptorBank, k: int) -> np.ndarray:
    if not bank.entries:
        raise BaselineError("empty bank")
    if not 1 <= k <= len(bank.entries):
        raise BaselineError(f"k={k} out of range for bank of size {len(bank.entries)}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    return q


def _top_mean(scores: np.ndarray, bank: DescriptorBank, k: int, largest: bool) -> float:
    keyed = sorted(
        range(len(scores)),
        key=lambda i: (-scores[i] if largest else scores[i], bank.entries[i].workload_id),
    )
    chosen = keyed[:k]
    return float(np.mean([bank.entries[i].true_metric for i in chosen]))


def knn_estimate(query, bank: DescriptorBank, k: int = DEFAULT_K) -> float:
    """Mean metric of the k Euclidean-nearest bank entries."""
    q = _check_query(query, bank, k)
    dists = np.array([np.linalg.norm(e.vector - q) for e in bank.entries])
    return _top_mean(dists, bank, k, largest=False)


def topk_estimate(query, bank: DescriptorBank, k: int = DEFAULT_K) -> float:
    """Mean metric of the k most cosine-similar bank entries.

    Zero vectors (query or entry) get similarity -1.
    """
    q = _check_query(query, bank, k)
    qn = np.linalg.norm(q)
    sims = np.empty(len(bank.entries))
    for i, e in enumerate(bank.entries):
        en = np.linalg.norm(e.vector)
        if qn == 0.0 or en == 0.0:
            sims[i] = -1.0
        else:
            sims[i] = float(e.vector @ q) / (en * qn)
    return _top_mean(sims, bank, k, largest=True)


class RetrievalBaseline(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper: fit on (vectors, metrics), predict metrics.

    ``method`` is "knn" (Euclidean) or "topk" (cosine).
    """

    def __init__(self, method: str = "knn", k: int = DEFAULT_K):
        self.method = method
        self.k = k

    def fit(self, X, y, model_ids=None, workload_ids=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise BaselineError("X and y shapes disagree")
        n = X.shape[0]
        model_ids = model_ids if model_ids is not None else [""] * n
        workload_ids = workload_ids if workload_ids is not None else [f"{i:06d}" for i in range(n)]
        self.bank_ = DescriptorBank(
            entries=[
                BankEntry(X[i], float(y[i]), model_ids[i], workload_ids[i]) for i in range(n)
            ]
        )
        return self

    def predict(self, X):
        if not hasattr(self, "bank_"):
            raise BaselineError("baseline not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        fn = knn_estimate if self.method == "knn" else topk_estimate
        if self.method not in ("knn", "topk"):
            raise BaselineError(f"unknown method {self.method!r}")
        return np.array([fn(row, self.bank_, self.k) for row in X])
