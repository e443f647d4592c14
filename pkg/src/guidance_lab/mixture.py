"""Exact Gaussian-mixture reference distributions.

A Gaussian mixture pushed through the linear noising path stays a Gaussian
mixture: component ``j`` of the time-``t`` marginal is
``Normal(alpha_t * mu_j, alpha_t**2 * Sigma_j + sigma_t**2 * I)``.  That
closure gives closed forms for everything a sampler or a divergence study
needs -- log density, score, Hessian and Laplacian of the log density,
posterior moments of the clean sample given the noisy one, and the exact
probability-flow velocity -- so numerical estimators can be certified
against ground truth instead of against each other.

Conventions used throughout:

* densities are evaluated in the log domain with log-sum-exp over
  components; responsibilities never leave the log domain until the final
  normalized weights are formed;
* every covariance is factored once (Cholesky) when the mixture object is
  built and all later solves reuse the factor;
* points ``x`` may be a single vector of shape ``(dim,)`` or a batch of
  shape ``(n, dim)``; outputs match.

The posterior of the clean sample ``X1`` given ``X_t = x`` is conjugate per
component:

    E[X1 | X_t = x, j]   = M_j^{-1} (sigma^2 mu_j + alpha Sigma_j x)
    Cov[X1 | X_t = x, j] = sigma^2 M_j^{-1} Sigma_j

with ``M_j = alpha^2 Sigma_j + sigma^2 I`` the marginal component
covariance, and the mixture posterior follows by the law of total variance
(component-trace part plus the spread of component means).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from . import schedule as sched
from .errors import ConfigurationError, DomainError, ShapeError

_WEIGHT_TOL = 1e-12
_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_batch(x, dim):
    """Coerce ``x`` to shape (n, dim); return (batch, was_single_point)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ShapeError(f"point has dimension {arr.shape[0]}, expected {dim}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise ShapeError(f"points have dimension {arr.shape[1]}, expected {dim}")
        return arr, False
    raise ShapeError(f"points must be 1- or 2-dimensional, got shape {arr.shape}")


class GaussianMixture:
    """A finite Gaussian mixture with cached Cholesky factors.

    Parameters
    ----------
    weights : (k,) positive weights summing to one (tolerance 1e-12).
    means : (k, dim) component means.
    covariances : (k, dim, dim) symmetric positive-definite covariances.
    """

    def __init__(self, weights, means, covariances):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        covariances = np.asarray(covariances, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ShapeError("weights must be a non-empty 1-d array")
        k = weights.shape[0]
        if means.ndim != 2 or means.shape[0] != k:
            raise ShapeError(f"means must have shape ({k}, dim), got {means.shape}")
        dim = means.shape[1]
        if covariances.shape != (k, dim, dim):
            raise ShapeError(
                f"covariances must have shape ({k}, {dim}, {dim}), "
                f"got {covariances.shape}"
            )
        if np.any(weights <= 0.0):
            raise ConfigurationError("all mixture weights must be positive")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ConfigurationError(
                f"mixture weights must sum to 1 within {_WEIGHT_TOL}, "
                f"got sum {weights.sum()!r}"
            )
        sym_gap = np.max(np.abs(covariances - np.swapaxes(covariances, 1, 2)))
        scale = max(1.0, float(np.max(np.abs(covariances))))
        if sym_gap > 1e-10 * scale:
            raise ConfigurationError(
                f"covariances must be symmetric (max asymmetry {sym_gap})"
            )
        covariances = 0.5 * (covariances + np.swapaxes(covariances, 1, 2))
        try:
            chols = np.linalg.cholesky(covariances)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError(
                "every covariance must be positive definite"
            ) from exc

        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.dim = dim
        self.n_components = k
        self._chols = chols
        self._log_weights = np.log(weights)
        # log of the normalization constant of each component
        self._log_norms = -0.5 * dim * _LOG_2PI - np.sum(
            np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1
        )
        # trace of each inverse covariance: ||L^{-1}||_F^2
        eye = np.eye(dim)
        self._inv_traces = np.array(
            [
                np.sum(solve_triangular(chols[j], eye, lower=True) ** 2)
                for j in range(k)
            ]
        )
        self._precisions = np.stack(
            [cho_solve((chols[j], True), eye) for j in range(k)]
        )
        for arr in (self.weights, self.means, self.covariances, self._chols):
            arr.setflags(write=False)

    # -- convenience constructors -------------------------------------------------

    @classmethod
    def single(cls, mean, cov):
        """A one-component mixture."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.shape[0])
        elif cov.ndim == 1:
            cov = np.diag(cov)
        return cls(np.array([1.0]), mean[None, :], cov[None, :, :])

    @classmethod
    def isotropic(cls, means, scales, weights=None):
        """Mixture of isotropic components; ``scales`` are standard deviations."""
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        k, dim = means.shape
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (k,))
        if weights is None:
            weights = np.full(k, 1.0 / k)
        covs = np.stack([(s * s) * np.eye(dim) for s in scales])
        return cls(weights, means, covs)

    # -- static (time-free) operations --------------------------------------------

    def _component_log_densities(self, pts):
        """(n, k) matrix of ``log w_j + log N(x; mu_j, Sigma_j)``."""
        n = pts.shape[0]
        out = np.empty((n, self.n_components))
        for j in range(self.n_components):
            delta = (pts - self.means[j]).T  # (dim, n)
            y = solve_triangular(self._chols[j], delta, lower=True)
            out[:, j] = (
                self._log_weights[j]
                + self._log_norms[j]
                - 0.5 * np.sum(y * y, axis=0)
            )
        return out

    def log_density(self, x):
        """Log density of the mixture at ``x``."""
        pts, single = _as_batch(x, self.dim)
        vals = logsumexp(self._component_log_densities(pts), axis=1)
        return float(vals[0]) if single else vals

    def responsibilities(self, x):
        """(n, k) posterior component weights at ``x`` (rows sum to one)."""
        pts, single = _as_batch(x, self.dim)
        lp = self._component_log_densities(pts)
        r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        return r[0] if single else r

    def _component_scores(self, pts):
        """(k, n, dim) array of per-component scores -Sigma_j^{-1}(x - mu_j)."""
        k, n = self.n_components, pts.shape[0]
        out = np.empty((k, n, self.dim))
        for j in range(k):
            delta = (pts - self.means[j]).T
            out[j] = -cho_solve((self._chols[j], True), delta).T
        return out

    def score(self, x):
        """Gradient of the log density at ``x``."""
        pts, single = _as_batch(x, self.dim)
        lp = self._component_log_densities(pts)
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))  # (n, k)
        comp = self._component_scores(pts)  # (k, n, dim)
        s = np.einsum("nk,knd->nd", resp, comp)
        return s[0] if single else s

    def laplacian_log_density(self, x):
        """Trace of the Hessian of the log density at ``x``.

        Uses the mixture identity
        ``lap = sum_j r_j (||u_j||^2 - tr Sigma_j^{-1}) - ||score||^2``
        where ``u_j`` is the per-component score.
        """
        pts, single = _as_batch(x, self.dim)
        lp = self._component_log_densities(pts)
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        comp = self._component_scores(pts)
        s = np.einsum("nk,knd->nd", resp, comp)
        sq = np.einsum("knd,knd->nk", comp, comp)
        vals = np.einsum("nk,nk->n", resp, sq - self._inv_traces[None, :]) - np.sum(
            s * s, axis=1
        )
        return float(vals[0]) if single else vals

    def hessian_log_density(self, x):
        """Full Hessian of the log density at a single point ``x``.

        ``H = sum_j r_j (-Sigma_j^{-1} + u_j u_j^T) - score score^T``.
        """
        pts, single = _as_batch(x, self.dim)
        if not single and pts.shape[0] != 1:
            raise ShapeError("hessian_log_density expects a single point")
        lp = self._component_log_densities(pts)
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))[0]
        comp = self._component_scores(pts)[:, 0, :]  # (k, dim)
        s = resp @ comp
        h = -np.einsum("k,kij->ij", resp, self._precisions)
        h += np.einsum("k,ki,kj->ij", resp, comp, comp)
        h -= np.outer(s, s)
        return h

    def sample(self, count, seed):
        """Draw ``count`` points; deterministic for a fixed ``seed``."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.n_components, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        return self.means[idx] + np.einsum("nij,nj->ni", self._chols[idx], z)


@dataclass(frozen=True)
class PosteriorMoments:
    """Mean and covariance trace of ``X1 | X_t = x``.

    ``mean`` has shape ``(dim,)`` (or ``(n, dim)`` for batched queries);
    ``cov_trace`` is a nonnegative scalar (or ``(n,)`` vector).
    """

    mean: np.ndarray
    cov_trace: float


def marginal_at(target: GaussianMixture, schedule: sched.Schedule, t: float):
    """The time-``t`` marginal of ``target`` under the noising path."""
    alpha, sigma, _, _ = sched.evaluate(schedule, t)
    eye = np.eye(target.dim)
    covs = (alpha * alpha) * target.covariances + (sigma * sigma) * eye
    return GaussianMixture(target.weights, alpha * target.means, covs)


def log_density(target, schedule, t, x):
    """Log density of the time-``t`` marginal at ``x``."""
    return marginal_at(target, schedule, t).log_density(x)


def score(target, schedule, t, x):
    """Score (gradient of log density) of the time-``t`` marginal at ``x``."""
    return marginal_at(target, schedule, t).score(x)


def hessian_log_density(target, schedule, t, x):
    """Hessian of the time-``t`` marginal log density at a single point."""
    return marginal_at(target, schedule, t).hessian_log_density(x)


def laplacian_log_density(target, schedule, t, x):
    """Laplacian of the time-``t`` marginal log density at ``x``.

    Computed from mixture Hessian algebra on the marginal; the posterior
    route ``(alpha^2 * cov_trace - dim * sigma^2) / sigma^4`` is provided
    by :func:`posterior` and serves as an independent cross-check.
    """
    return marginal_at(target, schedule, t).laplacian_log_density(x)


def posterior(target, schedule, t, x) -> PosteriorMoments:
    """Conjugate posterior moments of the clean sample given ``X_t = x``."""
    alpha, sigma, _, _ = sched.evaluate(schedule, t)
    marg = marginal_at(target, schedule, t)
    pts, single = _as_batch(x, target.dim)
    n, k = pts.shape[0], target.n_components
    lp = marg._component_log_densities(pts)
    resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))  # (n, k)

    sig2 = sigma * sigma
    comp_means = np.empty((k, n, target.dim))
    comp_traces = np.empty(k)
    for j in range(k):
        rhs = sig2 * target.means[j][None, :] + alpha * (pts @ target.covariances[j])
        comp_means[j] = cho_solve((marg._chols[j], True), rhs.T).T
        comp_traces[j] = sig2 * np.trace(
            cho_solve((marg._chols[j], True), target.covariances[j])
        )

    mean = np.einsum("nk,knd->nd", resp, comp_means)
    diff = comp_means - mean[None, :, :]
    spread = np.einsum("nk,knd,knd->n", resp, diff, diff)
    cov_trace = resp @ comp_traces + spread
    if single:
        return PosteriorMoments(mean=mean[0], cov_trace=float(cov_trace[0]))
    return PosteriorMoments(mean=mean, cov_trace=cov_trace)


def velocity(target, schedule, t, x, method="score"):
    """Exact probability-flow velocity of the time-``t`` marginal at ``x``.

    Two algebraically equivalent routes are implemented:

    * ``"score"``: ``a_t * x - b_t * score_t(x)`` with the conversion
      coefficients from the schedule;
    * ``"predictors"``: ``d_alpha * x1_hat + d_sigma * x0_hat`` where
      ``x1_hat`` is the posterior mean and ``x0_hat = (x - alpha*x1_hat)/sigma``.

    They share no code beyond the marginal construction, so their agreement
    is a meaningful consistency check.
    """
    pts, single = _as_batch(x, target.dim)
    if method == "score":
        a, b = sched.coefficients(schedule, t)
        s = marginal_at(target, schedule, t).score(pts)
        v = a * pts - b * s
    elif method == "predictors":
        alpha, sigma, d_alpha, d_sigma = sched.evaluate(schedule, t)
        x1_hat = posterior(target, schedule, t, pts).mean
        x0_hat = (pts - alpha * x1_hat) / sigma
        v = d_alpha * x1_hat + d_sigma * x0_hat
    else:
        raise DomainError(f"unknown velocity method {method!r}")
    return v[0] if single else v
