"""Shift-descriptor terms and their composition.

A source/target pair of embedding banks is summarized by three scalars:

* a Gaussian Frechet term (global change in embedding statistics),
* a mean Mahalanobis norm of the target under the source fit (weight on
  rare / low-density examples),
* a root-mean-square sliced 2-Wasserstein term (directional geometric
  shifts), computed over seeded random projections.

The three scalars are packed in the fixed order [F, M, SW] and z-scored
(after log1p) by a fit-once normalizer before they reach the evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import GaussianSummary, fit_gaussian_summary, spd_solve, spd_sqrt

__all__ = [
    "EmbeddingBank",
    "ShiftDescriptor",
    "DescriptorNormalizer",
    "frechet_term",
    "mahalanobis_term",
    "sliced_wasserstein_term",
    "compose_descriptor",
    "compute_descriptor",
    "fit_normalizer",
    "apply_normalizer",
]

DEFAULT_N_PROJECTIONS = 128


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingBank:
    """An (n, d) matrix of embeddings with provenance metadata."""

    id: str
    samples: np.ndarray
    origin: str = "source"  # "source" or "target"
    encoder_tag: str = "raw"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2:
            raise DescriptorError("bank needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise DescriptorError("non-finite bank samples")
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class ShiftDescriptor:
    sd_f: float
    sd_m: float
    sd_sw: float
    source_id: str
    target_id: str
    seed: int

    def components(self) -> np.ndarray:
        return np.array([self.sd_f, self.sd_m, self.sd_sw], dtype=np.float64)


@dataclass(frozen=True)
class DescriptorNormalizer:
    means: np.ndarray
    stds: np.ndarray
    fitted_on: int


def frechet_term(src: GaussianSummary, tgt: GaussianSummary) -> float:
    """Squared Frechet distance between the two Gaussian fits."""
    if src.dim != tgt.dim:
        raise DescriptorError("dimension mismatch")
    delta = src.mean - tgt.mean
    s_half = spd_sqrt(src.covariance)
    cross = spd_sqrt(s_half @ tgt.covariance @ s_half)
    trace_term = float(np.trace(src.covariance + tgt.covariance) - 2.0 * np.trace(cross))
    return float(delta @ delta) + max(trace_term, 0.0)


def mahalanobis_term(src: GaussianSummary, tgt_samples) -> float:
    """Mean Mahalanobis norm of target points under the source fit.

    Deliberately asymmetric: the target is measured in the source metric.
    """
    x = np.asarray(tgt_samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != src.dim:
        raise DescriptorError("dimension mismatch")
    centered = x - src.mean
    solved = spd_solve(src.covariance, centered.T)
    sq = np.einsum("ij,ji->i", centered, solved)
    return float(np.mean(np.sqrt(np.clip(sq, 0.0, None))))


def _slice_w2(proj_src: np.ndarray, proj_tgt: np.ndarray) -> np.ndarray:
    """Per-slice squared 1-D 2-Wasserstein distances.

    Inputs are (n, p) projections; equal sizes use sorted matching,
    unequal sizes interpolate both onto a common grid of max(n_s, n_t)
    quantile points.
    """
    n_s, n_t = proj_src.shape[0], proj_tgt.shape[0]
    src_sorted = np.sort(proj_src, axis=0)
    tgt_sorted = np.sort(proj_tgt, axis=0)
    if n_s == n_t:
        return np.mean((src_sorted - tgt_sorted) ** 2, axis=0)
    n_q = max(n_s, n_t)
    q = (np.arange(n_q) + 0.5) / n_q
    diffs = np.empty((n_q, proj_src.shape[1]))
    grid_s = (np.arange(n_s) + 0.5) / n_s
    grid_t = (np.arange(n_t) + 0.5) / n_t
    for j in range(proj_src.shape[1]):
        qs = np.interp(q, grid_s, src_sorted[:, j])
        qt = np.interp(q, grid_t, tgt_sorted[:, j])
        diffs[:, j] = (qs - qt) ** 2
    return np.mean(diffs, axis=0)


def sliced_wasserstein_term(
    src_samples, tgt_samples, n_projections: int = DEFAULT_N_PROJECTIONS, seed: int = 0
) -> float:
    """RMS sliced 2-Wasserstein distance over seeded random directions."""
    xs = np.asarray(src_samples, dtype=np.float64)
    xt = np.asarray(tgt_samples, dtype=np.float64)
    if xs.size == 0 or xt.size == 0:
        raise DescriptorError("empty bank")
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise DescriptorError("dimension mismatch")
    if n_projections < 1:
        raise DescriptorError("n_projections must be >= 1")
    d = xs.shape[1]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((d, n_projections))
    norms = np.linalg.norm(dirs, axis=0)
    norms[norms == 0.0] = 1.0
    dirs /= norms
    sq = _slice_w2(xs @ dirs, xt @ dirs)
    return float(np.sqrt(np.mean(sq)))


def compose_descriptor(
    sd_f: float, sd_m: float, sd_sw: float, source_id: str, target_id: str, seed: int
) -> ShiftDescriptor:
    comps = np.array([sd_f, sd_m, sd_sw], dtype=np.float64)
    if not np.all(np.isfinite(comps)) or np.any(comps < 0.0):
        raise DescriptorError("descriptor components must be finite and >= 0")
    return ShiftDescriptor(
        sd_f=float(sd_f),
        sd_m=float(sd_m),
        sd_sw=float(sd_sw),
        source_id=source_id,
        target_id=target_id,
        seed=int(seed),
    )


def compute_descriptor(
    src: EmbeddingBank,
    tgt: EmbeddingBank,
    n_projections: int = DEFAULT_N_PROJECTIONS,
    seed: int = 0,
) -> ShiftDescriptor:
    """Full source-vs-target descriptor from raw banks.

    The Mahalanobis component is the excess of the target's mean
    Mahalanobis norm over the source bank's own self-distance, clipped at
    zero: the raw norm sits near sqrt(d) even for an unshifted target, so
    subtracting the source baseline makes all three components vanish when
    the banks coincide.
    """
    src_fit = fit_gaussian_summary(src.samples)
    tgt_fit = fit_gaussian_summary(tgt.samples)
    maha_excess = max(
        mahalanobis_term(src_fit, tgt.samples) - mahalanobis_term(src_fit, src.samples),
        0.0,
    )
    return compose_descriptor(
        frechet_term(src_fit, tgt_fit),
        maha_excess,
        sliced_wasserstein_term(src.samples, tgt.samples, n_projections, seed),
        source_id=src.id,
        target_id=tgt.id,
        seed=seed,
    )


def fit_normalizer(descriptors) -> DescriptorNormalizer:
    """Componentwise z-score statistics of log1p-transformed descriptors.

    Population (biased) std convention, floored at 1e-12.
    """
    descriptors = list(descriptors)
    if len(descriptors) < 2:
        raise DescriptorError("need at least 2 descriptors to fit normalizer")
    raw = np.stack([d.components() for d in descriptors])
    logged = np.log1p(raw)
    means = logged.mean(axis=0)
    stds = np.maximum(logged.std(axis=0), 1e-12)
    return DescriptorNormalizer(means=means, stds=stds, fitted_on=len(descriptors))


def apply_normalizer(norm: DescriptorNormalizer, sd: ShiftDescriptor) -> np.ndarray:
    return (np.log1p(sd.components()) - norm.means) / norm.stds
