"""Dense symmetric-matrix kernels and Gaussian summary fitting.

Everything here operates on float64 numpy arrays. The routines are the
foundation for the shift-descriptor terms: Gaussian fits feed the Frechet
term, the SPD square root realizes its cross-covariance factor, and the
Cholesky solve backs the Mahalanobis term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianSummary",
    "fit_gaussian_summary",
    "sym_eigen",
    "spd_sqrt",
    "spd_solve",
]

MAX_DIM = 512


class NumericsError(ValueError):
    """Raised on contract violations in the dense kernels."""


@dataclass(frozen=True)
class GaussianSummary:
    """Mean/covariance fit of an embedding bank.

    ``covariance`` is the unbiased sample covariance plus a recorded
    isotropic shrinkage term, so it is always symmetric PSD.
    """

    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int
    shrinkage_epsilon: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check_symmetric(a: np.ndarray, rtol: float, what: str) -> None:
    scale = max(float(np.abs(a).max(initial=0.0)), 1e-30)
    if float(np.abs(a - a.T).max(initial=0.0)) > rtol * scale:
        raise NumericsError(f"{what}: not symmetric")


def fit_gaussian_summary(samples) -> GaussianSummary:
    """Fit mean and shrunk covariance to an (n, d) sample matrix.

    Shrinkage adds ``eps * I`` with ``eps = 1e-6 * trace(S) / d`` (floored
    at 1e-6 when the raw covariance has zero trace), so the result stays
    PSD even for low-rank banks (n < d).
    """
    x = _as_f64(samples)
    if x.ndim != 2:
        raise NumericsError("samples must be a 2-D matrix")
    n, d = x.shape
    if n < 2:
        raise NumericsError("insufficient samples")
    if not np.all(np.isfinite(x)):
        raise NumericsError("non-finite input")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    trace = float(np.trace(cov))
    eps = 1e-6 * trace / d if trace > 0.0 else 1e-6
    cov = cov + eps * np.eye(d)
    return GaussianSummary(mean=mean, covariance=cov, n_samples=n, shrinkage_epsilon=eps)


def sym_eigen(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns, so ``a ~= V @ diag(w) @ V.T``.
    """
    m = _as_f64(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError("matrix must be square")
    if m.shape[0] > MAX_DIM:
        raise NumericsError(f"dimension above {MAX_DIM} unsupported")
    _check_symmetric(m, 1e-9, "sym_eigen")
    try:
        w, v = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise NumericsError("eigen no convergence") from exc
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def spd_sqrt(a) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues down to ``-1e-9 * ||a||`` are treated as round-off and
    clipped to zero; anything more negative is rejected.
    """
    m = _as_f64(a)
    w, v = sym_eigen(m)
    scale = max(float(np.abs(w).max(initial=0.0)), 1e-30)
    if float(w.min(initial=0.0)) < -1e-6 * scale:
        raise NumericsError("not PSD")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return 0.5 * (s + s.T)


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for SPD ``a`` via Cholesky factorization.

    ``b`` may be a vector or a matrix of stacked right-hand sides.
    """
    m = _as_f64(a)
    rhs = _as_f64(b)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError("matrix must be square")
    if rhs.shape[0] != m.shape[0]:
        raise NumericsError("dimension mismatch")
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NumericsError("not positive definite") from exc
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)
