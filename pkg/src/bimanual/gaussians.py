"""Multivariate Gaussians, mixtures, analytic products, and conditioning.

Covariances are symmetrized on construction and must be positive-definite;
every inverse goes through a Cholesky factorization of the PD matrix. All
types are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

_LOG_2PI = float(np.log(2.0 * np.pi))


class Diagnostics:
    """Counter bag for numerical fallbacks (GMR underflow, clamped frame
    lookups, oscillating refinements). Purely additive; never raises."""

    def __init__(self) -> None:
        self.counters: dict[str, int] = {}
        self.warnings: list[str] = []

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def __repr__(self) -> str:
        return f"Diagnostics(counters={self.counters}, warnings={self.warnings})"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Mean/covariance pair with a cached Cholesky factor of the covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if mean.ndim != 1:
            raise ValueError("mean must be a 1-D vector")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} incompatible with dimension {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("Gaussian parameters must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if float(np.max(np.abs(cov - cov.T))) > 1e-9 * scale:
            raise ValueError("covariance is not symmetric within tolerance")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive-definite") from None
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "cov", _readonly(cov))
        object.__setattr__(self, "_chol", _readonly(chol))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_densities(self, points: np.ndarray) -> np.ndarray:
        """Log density at each row of ``points`` (shape N x dim)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, expected {self.dim}")
        diff = pts - self.mean
        y = solve_triangular(self._chol, diff.T, lower=True)
        quad = np.sum(y * y, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        return -0.5 * (self.dim * _LOG_2PI + logdet + quad)

    def precision(self) -> np.ndarray:
        """Inverse covariance via the cached Cholesky factor."""
        p = cho_solve((self._chol, True), np.eye(self.dim))
        return 0.5 * (p + p.T)

    def precision_mean(self) -> np.ndarray:
        """Precision-weighted mean, cov^{-1} @ mean."""
        return cho_solve((self._chol, True), self.mean)


def gaussian_log_density(x: np.ndarray, g: Gaussian) -> float:
    """log N(x | g.mean, g.cov)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (g.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({g.dim},)")
    return float(g.log_densities(x[None, :])[0])


def scale_precision(g: Gaussian, factor: float) -> Gaussian:
    """Gaussian with the same mean and precision scaled by ``factor`` > 0.

    Equivalent to raising the density to the power ``factor`` (up to
    normalization).
    """
    factor = float(factor)
    if not np.isfinite(factor) or factor <= 0.0:
        raise ValueError("precision scale factor must be positive and finite")
    return Gaussian(g.mean, g.cov / factor)


def product_of_gaussians(components: Iterable[Gaussian]) -> Gaussian:
    """Analytic (normalized) product of Gaussian densities.

    Precisions add; the mean is the precision-weighted combination of the
    factor means.
    """
    gs = list(components)
    if not gs:
        raise ValueError("product of an empty Gaussian list is undefined")
    dim = gs[0].dim
    for g in gs:
        if g.dim != dim:
            raise ValueError("all factors must share one dimensionality")
    prec = np.zeros((dim, dim))
    eta = np.zeros(dim)
    for g in gs:
        prec += g.precision()
        eta += g.precision_mean()
    chol = np.linalg.cholesky(prec)
    cov = cho_solve((chol, True), np.eye(dim))
    cov = 0.5 * (cov + cov.T)
    mean = cho_solve((chol, True), eta)
    return Gaussian(mean, cov)


@dataclass(frozen=True, eq=False)
class GMM:
    """Gaussian mixture: simplex priors over equally-sized components."""

    priors: np.ndarray
    components: tuple[Gaussian, ...]

    def __post_init__(self) -> None:
        priors = np.atleast_1d(np.asarray(self.priors, dtype=float)).copy()
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("mixture needs at least one component")
        if priors.shape != (len(comps),):
            raise ValueError("priors length must match component count")
        if not np.all(np.isfinite(priors)):
            raise ValueError("priors must be finite")
        if np.any(priors < 0.0):
            raise ValueError("priors must be non-negative")
        if abs(float(priors.sum()) - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1 within 1e-9")
        dim = comps[0].dim
        for g in comps:
            if g.dim != dim:
                raise ValueError("all components must share one dimensionality")
        object.__setattr__(self, "priors", _readonly(priors))
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


def _check_dims(gmm: GMM, in_dims: Sequence[int], out_dims: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    in_idx = np.atleast_1d(np.asarray(in_dims, dtype=int))
    out_idx = np.atleast_1d(np.asarray(out_dims, dtype=int))
    if in_idx.size == 0 or out_idx.size == 0:
        raise ValueError("in_dims and out_dims must be non-empty")
    union = np.concatenate([in_idx, out_idx])
    if len(set(union.tolist())) != union.size:
        raise ValueError("in_dims and out_dims must be disjoint")
    if union.min() < 0 or union.max() >= gmm.dim:
        raise ValueError("dimension indices out of range")
    return in_idx, out_idx


def gmr_weights(
    gmm: GMM,
    in_dims: Sequence[int],
    query: np.ndarray,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Responsibilities h_k of each component for ``query`` on the input dims.

    Falls back to uniform weights (and counts the event) when every
    responsibility underflows to zero.
    """
    in_idx = np.atleast_1d(np.asarray(in_dims, dtype=int))
    q = np.atleast_1d(np.asarray(query, dtype=float))
    if q.shape != (in_idx.size,):
        raise ValueError(f"query has shape {q.shape}, expected ({in_idx.size},)")
    K = gmm.n_components
    logw = np.empty(K)
    with np.errstate(divide="ignore"):
        logpri = np.log(gmm.priors)
    for k, g in enumerate(gmm.components):
        sub = Gaussian(g.mean[in_idx], g.cov[np.ix_(in_idx, in_idx)])
        logw[k] = logpri[k] + gaussian_log_density(q, sub)
    m = np.max(logw)
    if not np.isfinite(m):
        if diagnostics is not None:
            diagnostics.count("gmr_uniform_fallback")
        return np.full(K, 1.0 / K)
    h = np.exp(logw - logsumexp(logw))
    return h / h.sum()


def gmr_condition(
    gmm: GMM,
    in_dims: Sequence[int],
    out_dims: Sequence[int],
    query: np.ndarray,
    diagnostics: Diagnostics | None = None,
) -> Gaussian:
    """Moment-matched conditional of a mixture on the input dimensions.

    Each component contributes its textbook conditional, weighted by its
    responsibility for the query; the mixture is collapsed to a single
    Gaussian by the law of total variance.
    """
    in_idx, out_idx = _check_dims(gmm, in_dims, out_dims)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    h = gmr_weights(gmm, in_idx, q, diagnostics)
    n_out = out_idx.size
    cond_means = np.empty((gmm.n_components, n_out))
    cond_covs = np.empty((gmm.n_components, n_out, n_out))
    for k, g in enumerate(gmm.components):
        s_ii = g.cov[np.ix_(in_idx, in_idx)]
        s_oi = g.cov[np.ix_(out_idx, in_idx)]
        s_oo = g.cov[np.ix_(out_idx, out_idx)]
        chol = np.linalg.cholesky(0.5 * (s_ii + s_ii.T))
        gain = cho_solve((chol, True), s_oi.T).T
        cond_means[k] = g.mean[out_idx] + gain @ (q - g.mean[in_idx])
        cond_covs[k] = s_oo - gain @ s_oi.T
    mean = h @ cond_means
    cov = np.zeros((n_out, n_out))
    for k in range(gmm.n_components):
        dm = cond_means[k] - mean
        cov += h[k] * (cond_covs[k] + np.outer(dm, dm))
    return Gaussian(mean, 0.5 * (cov + cov.T))
