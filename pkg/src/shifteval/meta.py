"""Episodic meta-training, context adaptation, and conformal calibration.

Training treats each reference model as a task: an inner phase takes one
gradient step on that model's context vector (shared parameters frozen),
then an outer phase updates the shared parameters on validation batches
(all contexts frozen). An unseen model gets a fresh zero context adapted
with a few plain gradient steps, after which predictions are label-free.
Uncertainty comes from a split-conformal residual quantile.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptors import (
    DescriptorNormalizer,
    ShiftDescriptor,
    apply_normalizer,
    fit_normalizer,
)
from .network import (
    EvaluatorParams,
    NetDims,
    OptimizerState,
    adamw_step,
    backward,
    forward,
    init_params,
    rmse_loss,
)

__all__ = [
    "EvalPair",
    "TaskDataset",
    "ContextVector",
    "MetaConfig",
    "MetaState",
    "PredictionReport",
    "meta_train",
    "inner_adapt",
    "adapt_unseen",
    "predict",
    "calibrate_interval",
]


class MetaError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    """One (shift descriptor, true metric) supervision pair."""

    descriptor: ShiftDescriptor
    true_metric: float
    model_id: str
    workload_id: str

    def __post_init__(self):
        if not 0.0 <= self.true_metric <= 1.0:
            raise MetaError(f"true_metric {self.true_metric} outside [0, 1]")


@dataclass
class TaskDataset:
    """All supervision pairs of one reference model."""

    model_id: str
    pairs: list[EvalPair]

    def __post_init__(self):
        if not self.pairs:
            raise MetaError("empty task")
        for p in self.pairs:
            if p.model_id != self.model_id:
                raise MetaError("pair model_id does not match task")


@dataclass(frozen=True)
class ContextVector:
    model_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise MetaError("non-finite context")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MetaConfig:
    alpha_inner: float = 0.1
    alpha_outer: float = 5e-3
    b_train: int = 64
    b_val: int = 64
    b_adapt: int = 64
    epochs: int = 300
    patience: int = 40
    adapt_steps: int = 3
    adapt_lr: float = 1.0
    ctx_dim: int = 512
    hidden: tuple[int, ...] = (256, 128, 64)
    dropout: float = 0.2
    weight_decay: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    outer_optimizer: str = "adamw"  # "adamw" or "gd" (plain gradient descent)
    outer_step_per_episode: bool = True

    def net_dims(self) -> NetDims:
        return NetDims(sd_dim=3, ctx_dim=self.ctx_dim, hidden=tuple(self.hidden))


@dataclass
class MetaState:
    """The persisted training result: shared parameters, per-model contexts,
    normalization statistics, optimizer state, and the validation log."""

    params: EvaluatorParams
    contexts: dict[str, ContextVector]
    normalizer: DescriptorNormalizer
    opt_state: OptimizerState
    config: MetaConfig
    val_mae_log: list[float] = field(default_factory=list)
    best_epoch: int = 0


@dataclass(frozen=True)
class PredictionReport:
    model_id: str
    estimate: float
    delta: float
    alpha: float
    adaptation_trace: list[float]
    descriptor: ShiftDescriptor

    @property
    def interval(self) -> tuple[float, float]:
        return (max(self.estimate - self.delta, 0.0), min(self.estimate + self.delta, 1.0))


def _pairs_to_arrays(
    pairs, normalizer: DescriptorNormalizer
) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([apply_normalizer(normalizer, p.descriptor) for p in pairs])
    y = np.array([p.true_metric for p in pairs], dtype=np.float64)
    return x, y


def _sample_batch(rng: np.random.Generator, pairs: list[EvalPair], b: int) -> list[EvalPair]:
    # Small pools yield the whole pool (in sampled order) rather than a
    # bootstrap resample, so repeated draws stay consistent.
    idx = rng.choice(len(pairs), size=min(b, len(pairs)), replace=False)
    return [pairs[i] for i in idx]


def _digest_params(params: EvaluatorParams) -> str:
    h = hashlib.sha256()
    for w in params.weights:
        h.update(w.tobytes())
    for b in params.biases:
        h.update(b.tobytes())
    return h.hexdigest()


def _digest_contexts(contexts: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for mid in sorted(contexts):
        h.update(mid.encode())
        h.update(contexts[mid].tobytes())
    return h.hexdigest()


def meta_train(
    train_tasks: list[TaskDataset],
    val_tasks: list[TaskDataset],
    config: MetaConfig = MetaConfig(),
) -> MetaState:
    """Episodic meta-training over the reference pool.

    Per epoch: one context step per model on its train batch (parameters
    frozen), then one shared-parameter update on the accumulated
    validation batches (contexts frozen). Early-stops on validation MAE
    and returns the best-validation snapshot.
    """
    if not train_tasks or not val_tasks:
        raise MetaError("empty task list")
    train_by_id = {t.model_id: t for t in train_tasks}
    val_by_id = {t.model_id: t for t in val_tasks}
    if set(train_by_id) != set(val_by_id):
        raise MetaError("train and val tasks must cover the same model ids")
    model_ids = sorted(train_by_id)

    all_train_pairs = [p for t in train_tasks for p in t.pairs]
    normalizer = fit_normalizer([p.descriptor for p in all_train_pairs])

    dims = config.net_dims()
    params = init_params(config.seed, dims)
    contexts = {mid: np.zeros(config.ctx_dim) for mid in model_ids}
    total_steps = config.epochs * (len(model_ids) if config.outer_step_per_episode else 1)
    opt_state = OptimizerState.for_params(
        params,
        base_lr=config.alpha_outer,
        betas=config.betas,
        weight_decay=config.weight_decay,
        total_steps=max(total_steps, 1),
    )

    children = np.random.SeedSequence(config.seed).spawn(3)
    sample_rng = np.random.default_rng(children[0])
    dropout_rng = np.random.default_rng(children[1])
    shuffle_rng = np.random.default_rng(children[2])

    val_x = {mid: _pairs_to_arrays(val_by_id[mid].pairs, normalizer) for mid in model_ids}

    def validation_mae() -> float:
        errs = []
        for mid in model_ids:
            x, y = val_x[mid]
            preds, _ = forward(params, x, contexts[mid], mode="eval")
            errs.append(np.abs(preds - y))
        return float(np.mean(np.concatenate(errs)))

    best_mae = validation_mae()
    best_params = params.copy()
    best_contexts = {mid: c.copy() for mid, c in contexts.items()}
    best_epoch = 0
    log = [best_mae]
    epochs_since_best = 0

    for epoch in range(1, config.epochs + 1):
        order = list(model_ids)
        shuffle_rng.shuffle(order)

        # Inner phase: context updates only; the shared parameters must
        # come out untouched.
        theta_before = _digest_params(params)
        for mid in order:
            batch = _sample_batch(sample_rng, train_by_id[mid].pairs, config.b_train)
            x, y = _pairs_to_arrays(batch, normalizer)
            preds, cache = forward(params, x, contexts[mid], mode="eval")
            loss, grad_preds = rmse_loss(preds, y)
            if not math.isfinite(loss):
                raise MetaError(f"non-finite inner loss at epoch {epoch}, model {mid}")
            _, grad_ctx = backward(cache, grad_preds)
            contexts[mid] = contexts[mid] - config.alpha_inner * grad_ctx
        assert _digest_params(params) == theta_before, "inner loop mutated theta"

        # Outer phase: shared-parameter update only.
        ctx_before = _digest_contexts(contexts)
        episodes = []
        for mid in order:
            batch = _sample_batch(sample_rng, val_by_id[mid].pairs, config.b_val)
            x, y = _pairs_to_arrays(batch, normalizer)
            preds, cache = forward(
                params, x, contexts[mid], mode="train", rng=dropout_rng, dropout=config.dropout
            )
            episodes.append((preds, y, cache))
            if config.outer_step_per_episode:
                _outer_update(params, opt_state, [episodes.pop()], config, epoch, mid)
        if not config.outer_step_per_episode:
            _outer_update(params, opt_state, episodes, config, epoch, None)
        assert _digest_contexts(contexts) == ctx_before, "outer loop mutated contexts"

        mae = validation_mae()
        log.append(mae)
        if mae < best_mae:
            best_mae = mae
            best_params = params.copy()
            best_contexts = {mid: c.copy() for mid, c in contexts.items()}
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    return MetaState(
        params=best_params,
        contexts={
            mid: ContextVector(model_id=mid, values=c) for mid, c in best_contexts.items()
        },
        normalizer=normalizer,
        opt_state=opt_state,
        config=config,
        val_mae_log=log,
        best_epoch=best_epoch,
    )


def _outer_update(params, opt_state, episodes, config: MetaConfig, epoch: int, mid) -> None:
    preds = np.concatenate([e[0] for e in episodes])
    targets = np.concatenate([e[1] for e in episodes])
    loss, grad_preds = rmse_loss(preds, targets)
    if not math.isfinite(loss):
        where = f"model {mid}" if mid else "epoch batch"
        raise MetaError(f"non-finite outer loss at epoch {epoch} ({where})")
    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]
    offset = 0
    for batch_preds, _, cache in episodes:
        n = batch_preds.shape[0]
        (gw, gb), _ = backward(cache, grad_preds[offset : offset + n])
        for i in range(len(grad_w)):
            grad_w[i] += gw[i]
            grad_b[i] += gb[i]
        offset += n
    if config.outer_optimizer == "adamw":
        adamw_step(params, opt_state, (grad_w, grad_b))
    elif config.outer_optimizer == "gd":
        opt_state.step += 1
        for i in range(len(grad_w)):
            params.weights[i] -= config.alpha_outer * grad_w[i]
            params.biases[i] -= config.alpha_outer * grad_b[i]
    else:
        raise MetaError(f"unknown outer optimizer {config.outer_optimizer!r}")


def inner_adapt(
    params: EvaluatorParams,
    ctx: ContextVector,
    pairs: list[EvalPair],
    alpha: float,
    steps: int,
    normalizer: DescriptorNormalizer,
) -> tuple[ContextVector, list[float]]:
    """Plain gradient descent on the context only; parameters untouched.

    The trace records the loss before each step and after the last, so it
    always has ``steps + 1`` entries.
    """
    if steps < 0:
        raise MetaError("steps must be >= 0")
    if not pairs:
        raise MetaError("empty adaptation batch")
    x, y = _pairs_to_arrays(pairs, normalizer)
    values = np.asarray(ctx.values, dtype=np.float64).copy()

    def batch_loss(v: np.ndarray):
        preds, cache = forward(params, x, v, mode="eval")
        loss, grad_preds = rmse_loss(preds, y)
        return loss, cache, grad_preds

    loss, cache, grad_preds = batch_loss(values)
    trace = [loss]
    for _ in range(steps):
        _, grad_ctx = backward(cache, grad_preds)
        # Line search along the negative gradient: the square-root loss
        # has a non-vanishing gradient near its minimum, so a fixed step
        # length would oscillate there. Keeping the incumbent when no
        # candidate improves makes the trace non-increasing.
        best = (loss, values, cache, grad_preds)
        for exponent in range(4, -7, -1):
            cand = values - alpha * (2.0**exponent) * grad_ctx
            cand_loss, cand_cache, cand_grad = batch_loss(cand)
            if cand_loss < best[0]:
                best = (cand_loss, cand, cand_cache, cand_grad)
        loss, values, cache, grad_preds = best
        trace.append(loss)
    return ContextVector(model_id=ctx.model_id, values=values), trace


def adapt_unseen(
    meta_state: MetaState,
    adapt_pairs: list[EvalPair],
    steps: int | None = None,
    alpha: float | None = None,
    model_id: str = "unseen",
    seed: int = 0,
) -> tuple[ContextVector, list[float]]:
    """Adapt a context for an unseen model from its labeled pairs.

    The starting context is whichever candidate fits the adaptation
    batch best, the zero vector or one of the trained reference
    contexts, and is then refined with ``steps`` single-step adaptation
    calls on freshly sampled batches of ``b_adapt`` pairs. Returns the
    adapted context and the loss trace (length ``steps + 1``).
    """
    config = meta_state.config
    if steps is None:
        steps = config.adapt_steps
    if alpha is None:
        alpha = config.adapt_lr
    if steps == 0:
        return ContextVector(model_id=model_id, values=np.zeros(config.ctx_dim)), []
    if not adapt_pairs:
        raise MetaError("no adaptation pairs")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    first_batch = _sample_batch(rng, adapt_pairs, config.b_adapt)
    x, y = _pairs_to_arrays(first_batch, meta_state.normalizer)
    candidates = [np.zeros(config.ctx_dim)]
    candidates.extend(meta_state.contexts[mid].values for mid in sorted(meta_state.contexts))
    losses = []
    for values in candidates:
        preds, _ = forward(meta_state.params, x, values, mode="eval")
        losses.append(rmse_loss(preds, y)[0])
    start = candidates[int(np.argmin(losses))].copy()
    ctx = ContextVector(model_id=model_id, values=start)

    trace: list[float] = []
    for k in range(steps):
        batch = first_batch if k == 0 else _sample_batch(rng, adapt_pairs, config.b_adapt)
        ctx, step_trace = inner_adapt(
            meta_state.params, ctx, batch, alpha, 1, meta_state.normalizer
        )
        if k == 0:
            trace.append(step_trace[0])
        trace.append(step_trace[-1])
    return ctx, trace


def predict(meta_state: MetaState, ctx: ContextVector, raw_sd: ShiftDescriptor) -> float:
    """Label-free point estimate of the dataset-level metric."""
    if meta_state.normalizer is None:
        raise MetaError("meta state has no fitted normalizer")
    x = apply_normalizer(meta_state.normalizer, raw_sd)
    preds, _ = forward(meta_state.params, x, ctx.values, mode="eval")
    return float(preds[0])


def calibrate_interval(
    meta_state: MetaState,
    ctx: ContextVector,
    calib_pairs: list[EvalPair],
    alpha: float,
) -> float:
    """Split-conformal interval half-width at miscoverage ``alpha``.

    The half-width is the ceil((n+1)(1-alpha))-th smallest absolute
    residual over the calibration pairs.
    """
    if not 0.0 < alpha < 1.0:
        raise MetaError("alpha must be in (0, 1)")
    n = len(calib_pairs)
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if n == 0 or rank > n:
        raise MetaError("insufficient calibration pairs")
    residuals = np.array(
        [abs(predict(meta_state, ctx, p.descriptor) - p.true_metric) for p in calib_pairs]
    )
    return float(np.sort(residuals)[rank - 1])
