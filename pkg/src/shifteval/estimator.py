"""sklearn-style front door for the meta-learned accuracy estimator.

Hyperparameters live in ``__init__`` (so ``get_params``/``set_params``
and ``clone`` work), fitting produces trailing-underscore attributes, and
prediction consumes raw shift descriptors. The functional API in
``meta`` remains the primitive layer; this class just packages it for
pipeline-style use.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .descriptors import ShiftDescriptor
from .meta import (
    ContextVector,
    EvalPair,
    MetaConfig,
    TaskDataset,
    adapt_unseen,
    calibrate_interval,
    meta_train,
    predict,
)

__all__ = ["MetaAccuracyEstimator"]


class MetaAccuracyEstimator(BaseEstimator):
    """Label-free dataset-level accuracy estimator for unseen models."""

    def __init__(
        self,
        alpha_inner: float = 1e-2,
        alpha_outer: float = 1e-4,
        batch_size: int = 64,
        epochs: int = 100,
        patience: int = 10,
        adapt_steps: int = 3,
        adapt_lr: float = 5e-2,
        ctx_dim: int = 512,
        hidden: tuple[int, ...] = (256, 128, 64),
        dropout: float = 0.2,
        weight_decay: float = 1e-3,
        seed: int = 0,
        val_fraction: float = 0.25,
    ):
        self.alpha_inner = alpha_inner
        self.alpha_outer = alpha_outer
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.adapt_steps = adapt_steps
        self.adapt_lr = adapt_lr
        self.ctx_dim = ctx_dim
        self.hidden = hidden
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.seed = seed
        self.val_fraction = val_fraction

    def _config(self) -> MetaConfig:
        return MetaConfig(
            alpha_inner=self.alpha_inner,
            alpha_outer=self.alpha_outer,
            b_train=self.batch_size,
            b_val=self.batch_size,
            b_adapt=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            adapt_steps=self.adapt_steps,
            adapt_lr=self.adapt_lr,
            ctx_dim=self.ctx_dim,
            hidden=tuple(self.hidden),
            dropout=self.dropout,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def fit(self, train_tasks: list[TaskDataset], val_tasks: list[TaskDataset] | None = None):
        """Meta-train over the reference pool.

        Without explicit validation tasks, each task's pairs are split by
        a seeded shuffle using ``val_fraction``.
        """
        if val_tasks is None:
            rng = np.random.default_rng(self.seed)
            split_train, split_val = [], []
            for task in train_tasks:
                idx = rng.permutation(len(task.pairs))
                n_val = max(1, int(len(idx) * self.val_fraction))
                val_idx, train_idx = idx[:n_val], idx[n_val:]
                split_train.append(
                    TaskDataset(task.model_id, [task.pairs[i] for i in train_idx])
                )
                split_val.append(TaskDataset(task.model_id, [task.pairs[i] for i in val_idx]))
            train_tasks, val_tasks = split_train, split_val
        self.state_ = meta_train(train_tasks, val_tasks, self._config())
        return self

    def adapt(
        self, pairs: list[EvalPair], model_id: str = "unseen", seed: int = 0
    ) -> ContextVector:
        """Fit a fresh context for an unseen model from labeled pairs."""
        self._check_fitted()
        ctx, trace = adapt_unseen(self.state_, pairs, model_id=model_id, seed=seed)
        self.adaptation_trace_ = trace
        return ctx

    def predict(self, descriptors, context: ContextVector | None = None) -> np.ndarray:
        """Point estimates in (0, 1) for raw shift descriptors."""
        self._check_fitted()
        if context is None:
            context = ContextVector(model_id="zero", values=np.zeros(self.ctx_dim))
        if isinstance(descriptors, ShiftDescriptor):
            descriptors = [descriptors]
        return np.array([predict(self.state_, context, sd) for sd in descriptors])

    def calibrate(
        self, calib_pairs: list[EvalPair], context: ContextVector, alpha: float = 0.1
    ) -> float:
        """Split-conformal half-width for the given context."""
        self._check_fitted()
        return calibrate_interval(self.state_, context, calib_pairs, alpha)

    def _check_fitted(self) -> None:
        if not hasattr(self, "state_"):
            raise RuntimeError("estimator is not fitted")
