"""Expectation-maximization for Gaussian mixtures with seeded k-means++ init.

Supports the multi-view variant used for frame-local fitting: several aligned
datasets share one set of responsibilities and priors, while means and
covariances are estimated per view.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussians import GMM, Gaussian

_KMEANS_MAX_ITERS = 50


@dataclass(frozen=True)
class EmConfig:
    """EM settings. ``init_channel`` selects a single channel for the k-means
    initialization (e.g. 0 to bin time-indexed data by time, which keeps
    components pooled across demonstrations); None clusters on all channels."""

    K: int = 6
    max_iters: int = 200
    loglik_tol: float = 1e-10
    cov_regularization: float = 1e-6
    seed: int = 0
    init_channel: int | None = None

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not np.isfinite(self.loglik_tol) or self.loglik_tol < 0:
            raise ValueError("loglik_tol must be finite and non-negative")
        if not np.isfinite(self.cov_regularization) or self.cov_regularization < 0:
            raise ValueError("cov_regularization must be finite and non-negative")
        if self.init_channel is not None and self.init_channel < 0:
            raise ValueError("init_channel must be a channel index or None")


def _kmeans_pp_centers(data: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = np.empty((K, data.shape[1]))
    centers[0] = data[int(rng.integers(n))]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[k] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centers[k]) ** 2, axis=1))
    return centers


def _kmeans(data: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means labels; assignment ties break to the lowest index."""
    centers = _kmeans_pp_centers(data, K, rng)
    labels = np.zeros(data.shape[0], dtype=int)
    for _ in range(_KMEANS_MAX_ITERS):
        d2 = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        rowmin = d2[np.arange(data.shape[0]), labels]
        for k in range(K):
            if not np.any(labels == k):
                # repopulate an empty cluster from the worst-fit point
                far = int(np.argmax(rowmin))
                labels[far] = k
                rowmin[far] = 0.0
        new_centers = np.stack([data[labels == k].mean(axis=0) for k in range(K)])
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers
    return labels


def _log_gauss(data: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    g = Gaussian(mean, cov)
    return g.log_densities(data)


def _m_step(
    views: Sequence[np.ndarray],
    resp: np.ndarray,
    cfg: EmConfig,
    prev_means: list[np.ndarray],
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    n = resp.shape[0]
    nk = resp.sum(axis=0)
    priors = nk / n
    means = []
    covs = []
    for j, data in enumerate(views):
        d = data.shape[1]
        mu = np.empty((cfg.K, d))
        sig = np.empty((cfg.K, d, d))
        for k in range(cfg.K):
            if nk[k] < 1e-12:
                # dead component: freeze the mean, floor the covariance
                mu[k] = prev_means[j][k]
                sig[k] = cfg.cov_regularization * np.eye(d)
                continue
            mu[k] = resp[:, k] @ data / nk[k]
            diff = data - mu[k]
            sig[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
            sig[k] += cfg.cov_regularization * np.eye(d)
            sig[k] = 0.5 * (sig[k] + sig[k].T)
        means.append(mu)
        covs.append(sig)
    return priors, means, covs


def fit_em_views(
    views: Sequence[np.ndarray], cfg: EmConfig
) -> tuple[np.ndarray, list[list[Gaussian]], tuple[float, ...]]:
    """Joint EM over aligned views sharing priors and responsibilities.

    Returns (priors, per-view component lists, average log-likelihood
    history). The history is non-decreasing up to floating-point slack, and
    the whole fit is deterministic for a fixed ``cfg.seed``.
    """
    views = [np.asarray(v, dtype=float) for v in views]
    if not views:
        raise ValueError("need at least one view")
    n = views[0].shape[0]
    for v in views:
        if v.ndim != 2 or v.shape[0] != n:
            raise ValueError("views must be 2-D with a shared row count")
        if not np.all(np.isfinite(v)):
            raise ValueError("training data must be finite")
    if n < cfg.K:
        raise ValueError(f"need at least K={cfg.K} samples, got {n}")

    rng = np.random.default_rng(cfg.seed)
    concat = np.hstack(views)
    if cfg.init_channel is not None:
        if cfg.init_channel >= concat.shape[1]:
            raise ValueError("init_channel is out of range for the training data")
        init_data = concat[:, [cfg.init_channel]]
    else:
        init_data = concat
    labels = _kmeans(init_data, cfg.K, rng)
    resp = np.zeros((n, cfg.K))
    resp[np.arange(n), labels] = 1.0
    init_means = [np.stack([v[labels == k].mean(axis=0) for k in range(cfg.K)]) for v in views]
    priors, means, covs = _m_step(views, resp, cfg, init_means)

    history: list[float] = []
    with np.errstate(divide="ignore"):
        for _ in range(cfg.max_iters):
            logr = np.tile(np.log(priors)[None, :], (n, 1))
            for j, data in enumerate(views):
                for k in range(cfg.K):
                    logr[:, k] += _log_gauss(data, means[j][k], covs[j][k])
            lognorm = logsumexp(logr, axis=1)
            ll = float(np.mean(lognorm))
            history.append(ll)
            if len(history) > 1 and ll - history[-2] < cfg.loglik_tol:
                break
            resp = np.exp(logr - lognorm[:, None])
            priors, means, covs = _m_step(views, resp, cfg, means)

    comps = [
        [Gaussian(means[j][k], covs[j][k]) for k in range(cfg.K)] for j in range(len(views))
    ]
    return priors, comps, tuple(history)


def em_fit(data: np.ndarray, cfg: EmConfig) -> tuple[GMM, tuple[float, ...]]:
    """Fit a GMM to ``data`` (N x D) by EM; returns the mixture and the
    per-iteration average log-likelihood history."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be an N x D matrix")
    priors, comps, history = fit_em_views([data], cfg)
    return GMM(priors, tuple(comps[0])), history
