"""The evaluator network: an MLP over [descriptor || context] inputs.

Three ReLU hidden layers with inverted dropout, a logistic output so
predictions stay in (0, 1), exact hand-derived gradients with respect to
both the parameters and the context vector, an AdamW optimizer with
decoupled weight decay, and a cosine learning-rate schedule.

Forward/backward are pure given an explicit rng (or replayed dropout
masks), which is what makes meta-training bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "NetDims",
    "EvaluatorParams",
    "OptimizerState",
    "ForwardCache",
    "init_params",
    "forward",
    "backward",
    "rmse_loss",
    "adamw_step",
    "cosine_lr",
]

DEFAULT_HIDDEN = (256, 128, 64)
DEFAULT_CTX_DIM = 512
DEFAULT_DROPOUT = 0.2
RMSE_EPS = 1e-12


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetDims:
    sd_dim: int = 3
    ctx_dim: int = DEFAULT_CTX_DIM
    hidden: tuple[int, ...] = DEFAULT_HIDDEN

    @property
    def input_dim(self) -> int:
        return self.sd_dim + self.ctx_dim

    def layer_sizes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, 1]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class EvaluatorParams:
    """Weight matrices (fan_in, fan_out) and bias vectors per layer."""

    dims: NetDims
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "EvaluatorParams":
        return EvaluatorParams(
            dims=self.dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class ForwardCache:
    params: EvaluatorParams
    x: np.ndarray  # (B, input_dim) concatenated input
    pre_acts: list[np.ndarray]
    post_acts: list[np.ndarray]  # after ReLU and dropout
    masks: list[np.ndarray]
    preds: np.ndarray
    mode: str


def init_params(seed: int, dims: NetDims = NetDims()) -> EvaluatorParams:
    """Glorot-uniform weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in dims.layer_sizes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EvaluatorParams(dims=dims, weights=weights, biases=biases)


def forward(
    params: EvaluatorParams,
    sd_norm,
    ctx,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout: float = DEFAULT_DROPOUT,
    masks: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Evaluator forward pass.

    ``sd_norm`` is (B, sd_dim) or (sd_dim,); ``ctx`` is a single context
    vector shared by the whole batch. Dropout applies after each hidden
    ReLU in train mode only (inverted scaling); pass ``masks`` to replay a
    previous draw exactly.
    """
    dims = params.dims
    sd = np.atleast_2d(np.asarray(sd_norm, dtype=np.float64))
    c = np.asarray(ctx, dtype=np.float64).reshape(-1)
    if sd.shape[1] != dims.sd_dim or c.shape[0] != dims.ctx_dim:
        raise NetworkError("dimension mismatch")
    if mode not in ("train", "eval"):
        raise NetworkError(f"unknown mode {mode!r}")
    batch = sd.shape[0]
    x = np.concatenate([sd, np.tile(c, (batch, 1))], axis=1)

    keep = 1.0 - dropout
    h = x
    pre_acts, post_acts, used_masks = [], [], []
    n_hidden = len(dims.hidden)
    for layer in range(n_hidden):
        z = h @ params.weights[layer] + params.biases[layer]
        a = np.maximum(z, 0.0)
        if mode == "train" and dropout > 0.0:
            if masks is not None:
                mask = masks[layer]
            else:
                if rng is None:
                    raise NetworkError("train mode needs an rng or replayed masks")
                mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        else:
            mask = np.ones_like(a)
        pre_acts.append(z)
        post_acts.append(a)
        used_masks.append(mask)
        h = a
    z_out = h @ params.weights[-1] + params.biases[-1]
    preds = 1.0 / (1.0 + np.exp(-z_out[:, 0]))
    cache = ForwardCache(
        params=params,
        x=x,
        pre_acts=pre_acts,
        post_acts=post_acts,
        masks=used_masks,
        preds=preds,
        mode=mode,
    )
    return preds, cache


def backward(
    cache: ForwardCache, upstream_grad
) -> tuple[tuple[list[np.ndarray], list[np.ndarray]], np.ndarray]:
    """Exact gradients of the predictions composed with an upstream grad.

    Returns ``((grad_weights, grad_biases), grad_ctx)``; the gradient with
    respect to the descriptor inputs is computed but discarded. Dropout
    masks are replayed from the cache.
    """
    params = cache.params
    dims = params.dims
    up = np.atleast_1d(np.asarray(upstream_grad, dtype=np.float64))
    if up.shape[0] != cache.preds.shape[0]:
        raise NetworkError("upstream grad does not match cached batch")
    # Logistic output: d pred / d z_out = pred * (1 - pred).
    dz = (up * cache.preds * (1.0 - cache.preds))[:, None]
    n_hidden = len(dims.hidden)
    grad_w = [np.empty(0)] * (n_hidden + 1)
    grad_b = [np.empty(0)] * (n_hidden + 1)
    grad_w[-1] = cache.post_acts[-1].T @ dz
    grad_b[-1] = dz.sum(axis=0)
    dh = dz @ params.weights[-1].T
    for layer in range(n_hidden - 1, -1, -1):
        da = dh * cache.masks[layer]
        dz_l = da * (cache.pre_acts[layer] > 0.0)
        inp = cache.post_acts[layer - 1] if layer > 0 else cache.x
        grad_w[layer] = inp.T @ dz_l
        grad_b[layer] = dz_l.sum(axis=0)
        dh = dz_l @ params.weights[layer].T
    grad_ctx = dh[:, dims.sd_dim :].sum(axis=0)
    return (grad_w, grad_b), grad_ctx


def rmse_loss(predictions, targets) -> tuple[float, np.ndarray]:
    """Root-mean-square error with a small floor to keep gradients finite."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise NetworkError("empty batch")
    if p.shape != t.shape:
        raise NetworkError("shape mismatch")
    k = p.size
    loss = float(np.sqrt(np.mean((p - t) ** 2) + RMSE_EPS))
    grad = (p - t) / (k * loss)
    return loss, grad


@dataclass
class OptimizerState:
    """AdamW accumulators plus the schedule configuration."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    base_lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-3
    total_steps: int = 100
    eps: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: EvaluatorParams,
        base_lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 1e-3,
        total_steps: int = 100,
    ) -> "OptimizerState":
        return cls(
            m_weights=[np.zeros_like(w) for w in params.weights],
            m_biases=[np.zeros_like(b) for b in params.biases],
            v_weights=[np.zeros_like(w) for w in params.weights],
            v_biases=[np.zeros_like(b) for b in params.biases],
            base_lr=base_lr,
            betas=betas,
            weight_decay=weight_decay,
            total_steps=total_steps,
        )


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise NetworkError("total_steps must be >= 1")
    frac = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def adamw_step(
    params: EvaluatorParams,
    opt_state: OptimizerState,
    grads: tuple[list[np.ndarray], list[np.ndarray]],
) -> None:
    """One in-place decoupled-weight-decay Adam update at the scheduled lr.

    Weight decay applies to weights only, not biases.
    """
    grad_w, grad_b = grads
    if len(grad_w) != len(params.weights) or len(grad_b) != len(params.biases):
        raise NetworkError("gradient structure mismatch")
    b1, b2 = opt_state.betas
    lr = cosine_lr(opt_state.step, opt_state.total_steps, opt_state.base_lr)
    opt_state.step += 1
    t = opt_state.step
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for i, (w, gw) in enumerate(zip(params.weights, grad_w)):
        if gw.shape != w.shape:
            raise NetworkError("gradient shape mismatch")
        m = opt_state.m_weights[i]
        v = opt_state.v_weights[i]
        m *= b1
        m += (1.0 - b1) * gw
        v *= b2
        v += (1.0 - b2) * gw**2
        update = lr * ((m / corr1) / (np.sqrt(v / corr2) + opt_state.eps))
        update += lr * opt_state.weight_decay * w
        w -= update
    for i, (b, gb) in enumerate(zip(params.biases, grad_b)):
        if gb.shape != b.shape:
            raise NetworkError("gradient shape mismatch")
        m = opt_state.m_biases[i]
        v = opt_state.v_biases[i]
        m *= b1
        m += (1.0 - b1) * gb
        v *= b2
        v += (1.0 - b2) * gb**2
        b -= lr * ((m / corr1) / (np.sqrt(v / corr2) + opt_state.eps))
