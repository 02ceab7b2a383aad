"""Synthetic benchmark world with an exact accuracy oracle.

The world is a Gaussian mixture over C classes. Each synthetic "model" is
the closed-form linear-discriminant classifier for a jittered copy of the
class parameters, so the pool is diverse but every accuracy is exactly
computable from the hidden labels. Workloads are samples drawn under
parameterized shifts (mean translation, covariance scaling, class-prior
drift, label noise); labels live only behind the oracle and never reach
the descriptor or evaluator paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .descriptors import EmbeddingBank, compute_descriptor
from .meta import EvalPair, TaskDataset

__all__ = [
    "WorldConfig",
    "World",
    "SynthModel",
    "ShiftSpec",
    "Workload",
    "build_world",
    "identity_shift",
    "draw_shift_spec",
    "sample_workload",
    "true_accuracy_oracle",
    "make_task_dataset",
]


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    dim: int = 16
    n_classes: int = 4
    n_models: int = 24
    jitter: float = 0.8
    mean_scale: tuple[float, float] = (3.0, 4.0)
    cov_scale: tuple[float, float] = (0.7, 1.3)
    n_source: int = 1000
    translation_range: tuple[float, float] = (0.0, 12.0)
    translation_mix: float = 0.15
    cov_shift_range: tuple[float, float] = (0.8, 5.0)
    prior_drift_range: tuple[float, float] = (0.0, 0.9)
    noise_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise WorldError("dim must be >= 1")
        if self.n_classes < 2:
            raise WorldError("need at least 2 classes")
        if self.n_models < 0:
            raise WorldError("negative pool size")
        if self.jitter < 0:
            raise WorldError("negative jitter")
        for name in ("translation_range", "cov_shift_range", "prior_drift_range", "noise_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise WorldError(f"invalid {name}")
        if not 0.0 <= self.translation_mix <= 1.0:
            raise WorldError("translation_mix outside [0, 1]")
        if self.noise_range[1] > 0.5:
            raise WorldError("label noise rate above 0.5")


@dataclass(frozen=True)
class SynthModel:
    """Linear classifier argmax(Wx + b) over the jittered class params."""

    model_id: str
    weight: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    source_bank: EmbeddingBank


@dataclass(frozen=True)
class World:
    config: WorldConfig
    class_means: np.ndarray  # (C, d)
    class_vars: np.ndarray  # (C,) isotropic per-class variances
    priors: np.ndarray  # (C,)
    models: tuple[SynthModel, ...]
    # World-level shift geometry: severities vary per workload, but the
    # translation direction and prior-drift target are fixed per world so
    # the severity -> accuracy response stays a clean function.
    shift_direction: np.ndarray = None  # (d,) unit vector
    drift_target: np.ndarray = None  # (C,) prior the drift mixes toward

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]


@dataclass(frozen=True)
class ShiftSpec:
    """Fully realized shift parameters for one workload."""

    translation: np.ndarray  # (d,) added to every class mean
    cov_scale: float  # multiplies every class covariance
    priors: np.ndarray  # (C,) target class priors
    noise_rate: float  # uniform label-flip probability

    def validate(self, dim: int, n_classes: int) -> None:
        t = np.asarray(self.translation, dtype=np.float64)
        p = np.asarray(self.priors, dtype=np.float64)
        if t.shape != (dim,) or not np.all(np.isfinite(t)):
            raise WorldError("invalid translation")
        if self.cov_scale <= 0:
            raise WorldError("cov_scale must be positive")
        if p.shape != (n_classes,) or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
            raise WorldError("invalid priors")
        if not 0.0 <= self.noise_rate <= 0.5:
            raise WorldError("noise_rate outside [0, 0.5]")


@dataclass(frozen=True)
class Workload:
    """Unlabeled (to the evaluator) target dataset plus hidden labels.

    ``labels`` exists only for the oracle; descriptor computation must
    never read it.
    """

    workload_id: str
    samples: np.ndarray  # (n, d)
    labels: np.ndarray | None  # (n,) class ids, oracle-only
    spec: ShiftSpec
    seed: int


def _lda_classifier(means: np.ndarray, variances: np.ndarray, priors: np.ndarray):
    pooled = float(np.mean(variances))
    weight = means / pooled
    bias = -0.5 * np.sum(means**2, axis=1) / pooled + np.log(priors)
    return weight, bias


def _translation_direction(
    rng: np.random.Generator, class_means: np.ndarray, mix: float
) -> np.ndarray:
    """Unit translation direction with a controlled class-relevant part.

    Only the component inside the span of the centered class means moves
    decision scores relative to each other, so ``mix`` sets how strongly
    translation severity degrades accuracy versus merely displacing the
    feature cloud.
    """
    centered = class_means - class_means.mean(axis=0)
    q, _ = np.linalg.qr(centered.T)
    span = q[:, : max(class_means.shape[0] - 1, 1)]
    raw_par = span @ rng.standard_normal(span.shape[1])
    raw_perp = rng.standard_normal(class_means.shape[1])
    raw_perp = raw_perp - span @ (span.T @ raw_perp)
    u_par = raw_par / max(np.linalg.norm(raw_par), 1e-30)
    u_perp = raw_perp / max(np.linalg.norm(raw_perp), 1e-30)
    return mix * u_par + np.sqrt(max(1.0 - mix**2, 0.0)) * u_perp


def build_world(config: WorldConfig) -> World:
    """Draw class distributions and the seeded, jittered model pool.

    Class means scale like 1/sqrt(d) so between-class margins (and hence
    accuracies) stay in a useful range regardless of dimension.
    """
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    class_child, model_ss = ss.spawn(2)
    class_rng = np.random.default_rng(class_child)
    d, c = config.dim, config.n_classes
    scales = class_rng.uniform(*config.mean_scale, size=c)
    class_means = class_rng.standard_normal((c, d)) * (scales[:, None] / np.sqrt(d))
    class_vars = class_rng.uniform(*config.cov_scale, size=c)
    priors = np.full(c, 1.0 / c)
    direction = _translation_direction(class_rng, class_means, config.translation_mix)
    # Concentration 3 keeps the drift target away from near-degenerate
    # corners of the simplex, where drift-induced mean shifts alias with
    # translation severity inside the scalar descriptors.
    drift_target = class_rng.dirichlet(np.full(c, 3.0))

    models = []
    for m, child in enumerate(model_ss.spawn(max(config.n_models, 1))[: config.n_models]):
        rng = np.random.default_rng(child)
        jit_means = class_means + config.jitter * rng.standard_normal((c, d)) / np.sqrt(d)
        jit_vars = class_vars * np.exp(config.jitter * rng.standard_normal(c) * 0.5)
        weight, bias = _lda_classifier(jit_means, jit_vars, priors)
        # Seeded sample of the model's own (jittered) source distribution.
        labels = rng.choice(c, size=config.n_source, p=priors)
        noise = rng.standard_normal((config.n_source, d))
        samples = jit_means[labels] + np.sqrt(jit_vars[labels])[:, None] * noise
        bank = EmbeddingBank(id=f"src-{m:03d}", samples=samples, origin="source")
        models.append(
            SynthModel(model_id=f"model-{m:03d}", weight=weight, bias=bias, source_bank=bank)
        )
    return World(
        config=config,
        class_means=class_means,
        class_vars=class_vars,
        priors=priors,
        models=tuple(models),
        shift_direction=direction,
        drift_target=drift_target,
    )


def identity_shift(world: World) -> ShiftSpec:
    return ShiftSpec(
        translation=np.zeros(world.dim),
        cov_scale=1.0,
        priors=world.priors.copy(),
        noise_rate=0.0,
    )


def draw_shift_spec(world: World, rng: np.random.Generator) -> ShiftSpec:
    """Sample a shift with severities drawn from the configured ranges."""
    cfg = world.config
    severity = rng.uniform(*cfg.translation_range)
    translation = severity * world.shift_direction / np.sqrt(world.dim)
    # Covariance scale is multiplicative, so sample it log-uniformly.
    lo, hi = cfg.cov_shift_range
    cov_scale = float(np.exp(rng.uniform(np.log(max(lo, 1e-12)), np.log(max(hi, 1e-12)))))
    drift = rng.uniform(*cfg.prior_drift_range)
    priors = (1.0 - drift) * world.priors + drift * world.drift_target
    priors = priors / priors.sum()
    noise = rng.uniform(*cfg.noise_range)
    return ShiftSpec(
        translation=translation, cov_scale=cov_scale, priors=priors, noise_rate=noise
    )


def sample_workload(
    world: World, spec: ShiftSpec, n: int, seed: int, workload_id: str | None = None
) -> Workload:
    """Draw a shifted workload of n samples with hidden true labels."""
    if n < 2:
        raise WorldError("workload needs at least 2 samples")
    spec.validate(world.dim, world.n_classes)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    labels = rng.choice(world.n_classes, size=n, p=np.asarray(spec.priors, dtype=np.float64))
    noise = rng.standard_normal((n, world.dim))
    std = np.sqrt(spec.cov_scale * world.class_vars[labels])
    samples = world.class_means[labels] + spec.translation + std[:, None] * noise
    if spec.noise_rate > 0.0:
        flip = rng.random(n) < spec.noise_rate
        shift = rng.integers(1, world.n_classes, size=n)
        labels = np.where(flip, (labels + shift) % world.n_classes, labels)
    return Workload(
        workload_id=workload_id if workload_id is not None else f"wl-{seed}",
        samples=samples,
        labels=labels,
        spec=spec,
        seed=seed,
    )


def true_accuracy_oracle(model: SynthModel, workload: Workload) -> float:
    """Exact fraction of correct argmax predictions on the hidden labels.

    Argmax ties resolve to the lowest class id.
    """
    if workload.labels is None:
        raise WorldError("workload has no hidden labels")
    x = workload.samples
    if x.shape[1] != model.weight.shape[1]:
        raise WorldError("dimension mismatch")
    preds = np.argmax(x @ model.weight.T + model.bias, axis=1)
    return float(np.mean(preds == workload.labels))


def make_task_dataset(
    world: World,
    model: SynthModel,
    workloads: list[Workload],
    n_projections: int = 128,
) -> TaskDataset:
    """Pair each workload's descriptor with the model's oracle accuracy.

    Embedding banks are the raw feature matrices; the sliced-Wasserstein
    projection seed is each workload's own seed.
    """
    if not workloads:
        raise WorldError("empty task")
    pairs = []
    for wl in workloads:
        tgt = EmbeddingBank(id=wl.workload_id, samples=wl.samples, origin="target")
        sd = compute_descriptor(
            model.source_bank, tgt, n_projections=n_projections, seed=wl.seed
        )
        acc = true_accuracy_oracle(model, wl)
        pairs.append(
            EvalPair(
                descriptor=sd,
                true_metric=acc,
                model_id=model.model_id,
                workload_id=wl.workload_id,
            )
        )
    return TaskDataset(model_id=model.model_id, pairs=pairs)
