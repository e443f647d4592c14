"""Tests for Gaussian-mixture targets and their closed-form calculus.

Every analytic quantity is cross-checked against an independent oracle:
finite differences for the score, a fourth-order stencil for the
Laplacian, plain ``numpy.linalg`` conjugate formulas for the posterior,
and Monte Carlo moments for the sampler.
"""

import math

import numpy as np
import pytest

from guidance_lab import (
    ConfigurationError,
    DomainError,
    GaussianMixture,
    Schedule,
    ShapeError,
    mixture,
)


def _random_mixture(rng, dim, k):
    weights = rng.uniform(0.5, 1.5, size=k)
    weights /= weights.sum()
    means = rng.normal(0.0, 2.0, size=(k, dim))
    covs = np.empty((k, dim, dim))
    for j in range(k):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        covs[j] = q @ np.diag(rng.uniform(0.3, 1.8, size=dim)) @ q.T
    return GaussianMixture(weights, means, covs)


# ---------------------------------------------------------------------------
# densities


def test_two_component_log_density_frozen_value():
    # Symmetric pair at +/-(3, 0) with unit covariances, queried at the
    # origin of the t = 0.5 marginal.  The closed form collapses to
    # -log(pi) - 2.25; the literal was frozen from a 50-digit evaluation.
    target = GaussianMixture(
        np.array([0.5, 0.5]),
        np.array([[3.0, 0.0], [-3.0, 0.0]]),
        np.stack([np.eye(2), np.eye(2)]),
    )
    got = mixture.log_density(target, Schedule(), 0.5, np.zeros(2))
    assert got == pytest.approx(-3.3947298858494004, abs=1e-13)
    assert got == pytest.approx(-math.log(math.pi) - 2.25, abs=1e-13)


def test_standard_normal_log_density():
    g1 = mixture.GaussianMixture.single(np.zeros(1), 1.0)
    assert g1.log_density(np.zeros(1)) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-14
    )
    g2 = mixture.GaussianMixture.single(np.zeros(2), 1.0)
    assert g2.log_density(np.zeros(2)) == pytest.approx(
        -math.log(2 * math.pi), abs=1e-14
    )
    x = np.array([0.3, -1.2])
    expect = -math.log(2 * math.pi) - 0.5 * float(x @ x)
    assert g2.log_density(x) == pytest.approx(expect, rel=1e-14)


def test_marginal_of_standard_normal():
    # For a standard-normal target the time-t marginal is
    # N(0, (alpha^2 + sigma^2) I) in closed form.
    target = GaussianMixture.single(np.zeros(3), 1.0)
    sch = Schedule()
    for t in (0.1, 0.5, 0.9):
        var = t * t + (1.0 - t) ** 2
        marg = mixture.marginal_at(target, sch, t)
        np.testing.assert_allclose(marg.covariances[0], var * np.eye(3), rtol=1e-14)
        x = np.array([0.4, -0.2, 1.1])
        expect = -1.5 * math.log(2 * math.pi * var) - 0.5 * float(x @ x) / var
        assert marg.log_density(x) == pytest.approx(expect, rel=1e-13)


def test_log_density_shapes():
    g = GaussianMixture.single(np.zeros(2), 1.0)
    assert isinstance(g.log_density(np.zeros(2)), float)
    batch = g.log_density(np.zeros((5, 2)))
    assert batch.shape == (5,)
    with pytest.raises(ShapeError):
        g.log_density(np.zeros(3))
    with pytest.raises(ShapeError):
        g.log_density(np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# derivatives against finite differences


def test_score_matches_finite_difference():
    rng = np.random.default_rng(101)
    sch = Schedule()
    h = 1e-5
    for dim, k in ((1, 2), (2, 3), (4, 2)):
        target = _random_mixture(rng, dim, k)
        for _ in range(5):
            t = float(rng.uniform(0.05, 0.9))
            x = rng.normal(0.0, 1.5, size=dim)
            got = mixture.score(target, sch, t, x)
            fd = np.empty(dim)
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = h
                fd[i] = (
                    mixture.log_density(target, sch, t, x + e)
                    - mixture.log_density(target, sch, t, x - e)
                ) / (2 * h)
            np.testing.assert_allclose(got, fd, rtol=1e-6, atol=1e-7)


def test_laplacian_matches_stencil():
    # Fourth-order central stencil for the second derivative, summed over
    # coordinates, applied to the log density.
    rng = np.random.default_rng(202)
    sch = Schedule()
    h = 2e-3
    for dim, k in ((1, 2), (2, 2), (3, 3)):
        target = _random_mixture(rng, dim, k)
        t = float(rng.uniform(0.2, 0.8))
        x = rng.normal(0.0, 1.0, size=dim)
        f0 = mixture.log_density(target, sch, t, x)
        lap = 0.0
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            fp1 = mixture.log_density(target, sch, t, x + e)
            fm1 = mixture.log_density(target, sch, t, x - e)
            fp2 = mixture.log_density(target, sch, t, x + 2 * e)
            fm2 = mixture.log_density(target, sch, t, x - 2 * e)
            lap += (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
        got = mixture.laplacian_log_density(target, sch, t, x)
        assert got == pytest.approx(lap, rel=1e-6, abs=1e-6)


def test_single_gaussian_hessian_is_minus_precision():
    # With one component the responsibilities are constant, so the Hessian
    # of the log density is exactly -Sigma^{-1} at every point.
    rng = np.random.default_rng(303)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    cov = q @ np.diag([0.5, 1.0, 2.0]) @ q.T
    g = GaussianMixture.single(rng.normal(size=3), cov)
    for _ in range(3):
        x = rng.normal(0.0, 2.0, size=3)
        h = g.hessian_log_density(x)
        np.testing.assert_allclose(h, -np.linalg.inv(cov), rtol=1e-12, atol=1e-12)
        assert g.laplacian_log_density(x) == pytest.approx(
            -np.trace(np.linalg.inv(cov)), rel=1e-12
        )


def test_hessian_symmetric_and_trace_is_laplacian():
    rng = np.random.default_rng(404)
    target = _random_mixture(rng, 3, 4)
    for _ in range(5):
        x = rng.normal(0.0, 1.5, size=3)
        h = target.hessian_log_density(x)
        np.testing.assert_allclose(h, h.T, atol=1e-14)
        assert np.trace(h) == pytest.approx(
            target.laplacian_log_density(x), rel=1e-11, abs=1e-12
        )


def test_responsibilities():
    g = GaussianMixture.isotropic(
        np.array([[-4.0, 0.0], [4.0, 0.0]]), np.array([1.0, 1.0])
    )
    r = g.responsibilities(np.array([4.0, 0.0]))
    assert r.shape == (2,)
    assert r.sum() == pytest.approx(1.0, abs=1e-12)
    assert r[1] > 0.999999
    batch = g.responsibilities(np.zeros((3, 2)))
    np.testing.assert_allclose(batch.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# sampling


def test_sample_moments_match_mixture():
    weights = np.array([0.3, 0.7])
    means = np.array([[-2.0, 0.0], [2.0, 1.0]])
    covs = np.stack([0.5 * np.eye(2), np.array([[1.0, 0.3], [0.3, 0.8]])])
    g = GaussianMixture(weights, means, covs)
    n = 100_000
    xs = g.sample(n, seed=5)
    assert xs.shape == (n, 2)

    mean = weights @ means
    second = sum(w * (c + np.outer(m, m)) for w, m, c in zip(weights, means, covs))
    cov = second - np.outer(mean, mean)
    np.testing.assert_allclose(xs.mean(axis=0), mean, atol=0.03)
    np.testing.assert_allclose(np.cov(xs.T), cov, atol=0.06)

    # Component frequencies, observed through the sign of x[0] with the
    # exact tail overlap folded into the expectation (it contributes ~1.5%,
    # far above the Monte Carlo error at this sample size).
    from scipy.stats import norm

    expect_right = sum(
        w * norm.sf(-m[0] / math.sqrt(c[0, 0]))
        for w, m, c in zip(weights, means, covs)
    )
    frac_right = float(np.mean(xs[:, 0] > 0))
    # 4 standard errors of a Bernoulli(0.7) frequency at n = 1e5 is ~0.006.
    assert abs(frac_right - expect_right) < 0.006


def test_sample_deterministic():
    g = GaussianMixture.isotropic(np.array([[0.0], [3.0]]), np.array([1.0, 0.5]))
    a = g.sample(64, seed=9)
    b = g.sample(64, seed=9)
    np.testing.assert_array_equal(a, b)
    c = g.sample(64, seed=10)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# posterior moments


def test_posterior_single_gaussian_closed_form():
    # Independent conjugate-Gaussian oracle written with plain inv/solve.
    rng = np.random.default_rng(515)
    sch = Schedule()
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    cov = q @ np.diag([0.4, 1.1, 2.2]) @ q.T
    mu = rng.normal(size=3)
    target = GaussianMixture.single(mu, cov)
    for t in (0.2, 0.5, 0.85):
        alpha, sigma = t, 1.0 - t
        x = rng.normal(0.0, 1.5, size=3)
        m_mat = alpha * alpha * cov + sigma * sigma * np.eye(3)
        mean = np.linalg.solve(m_mat, sigma * sigma * mu + alpha * cov @ x)
        trace = sigma * sigma * np.trace(np.linalg.solve(m_mat, cov))
        post = mixture.posterior(target, sch, t, x)
        np.testing.assert_allclose(post.mean, mean, rtol=1e-12)
        assert post.cov_trace == pytest.approx(trace, rel=1e-12)


def test_posterior_tweedie_identity():
    # alpha * E[x1 | x_t] = x + sigma^2 * score(x) ties the posterior mean
    # to the marginal score; the two sides come from different code paths.
    rng = np.random.default_rng(616)
    sch = Schedule()
    for dim, k in ((2, 3), (4, 2)):
        target = _random_mixture(rng, dim, k)
        for _ in range(5):
            t = float(rng.uniform(sch.t_min, sch.t_max))
            x = rng.normal(0.0, 1.5, size=dim)
            alpha, sigma = t, 1.0 - t
            lhs = alpha * mixture.posterior(target, sch, t, x).mean
            rhs = x + sigma * sigma * mixture.score(target, sch, t, x)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_posterior_concentrates_near_data_time():
    rng = np.random.default_rng(717)
    target = _random_mixture(rng, 2, 2)
    sch = Schedule()
    t = sch.t_max
    x = np.array([0.7, -0.4])
    post = mixture.posterior(target, sch, t, x)
    np.testing.assert_allclose(post.mean, x / t, atol=1e-4)
    assert 0.0 <= post.cov_trace < 1e-4


def test_posterior_batch_matches_loop():
    rng = np.random.default_rng(818)
    target = _random_mixture(rng, 3, 2)
    sch = Schedule()
    xs = rng.normal(size=(6, 3))
    batch = mixture.posterior(target, sch, 0.4, xs)
    assert batch.mean.shape == (6, 3)
    assert batch.cov_trace.shape == (6,)
    for i in range(6):
        one = mixture.posterior(target, sch, 0.4, xs[i])
        np.testing.assert_allclose(batch.mean[i], one.mean, rtol=1e-13)
        assert batch.cov_trace[i] == pytest.approx(one.cov_trace, rel=1e-13)


# ---------------------------------------------------------------------------
# velocity


def test_velocity_methods_agree():
    rng = np.random.default_rng(919)
    sch = Schedule()
    for dim, k in ((1, 1), (2, 3), (5, 2)):
        target = _random_mixture(rng, dim, k)
        xs = rng.normal(0.0, 1.5, size=(8, dim))
        for t in (sch.t_min, 0.3, 0.7, sch.t_max):
            via_score = mixture.velocity(target, sch, t, xs, method="score")
            via_pred = mixture.velocity(target, sch, t, xs, method="predictors")
            scale = max(1.0, float(np.max(np.abs(via_score))))
            assert np.max(np.abs(via_score - via_pred)) <= 1e-10 * scale


def test_velocity_standard_normal_formula():
    # For a standard-normal target the velocity is linear in x:
    # v = (2t - 1) / (t^2 + (1-t)^2) * x.
    target = GaussianMixture.single(np.zeros(2), 1.0)
    sch = Schedule()
    rng = np.random.default_rng(21)
    for _ in range(20):
        t = float(rng.uniform(sch.t_min, sch.t_max))
        x = rng.normal(size=2)
        expect = (2 * t - 1) / (t * t + (1 - t) ** 2) * x
        got = mixture.velocity(target, sch, t, x)
        np.testing.assert_allclose(got, expect, rtol=1e-11, atol=1e-13)


def test_velocity_near_deterministic_target_is_straight_line():
    # As the target covariance shrinks the flow becomes the straight line
    # x_t = alpha*mu + sigma*x0, whose velocity is mu - (x - alpha*mu)/sigma.
    mu = np.array([1.5, -0.5])
    target = GaussianMixture.single(mu, 1e-18)
    sch = Schedule()
    rng = np.random.default_rng(33)
    for t in (0.1, 0.5, 0.9):
        x = t * mu + (1 - t) * rng.normal(size=2)
        expect = mu - (x - t * mu) / (1 - t)
        got = mixture.velocity(target, sch, t, x)
        np.testing.assert_allclose(got, expect, rtol=1e-8, atol=1e-8)


def test_velocity_unknown_method():
    target = GaussianMixture.single(np.zeros(2), 1.0)
    with pytest.raises(DomainError):
        mixture.velocity(target, Schedule(), 0.5, np.zeros(2), method="spline")


# ---------------------------------------------------------------------------
# construction and validation


def test_single_constructor_forms():
    mean = np.array([1.0, 2.0])
    a = GaussianMixture.single(mean, 2.0)
    np.testing.assert_allclose(a.covariances[0], 2.0 * np.eye(2))
    b = GaussianMixture.single(mean, np.array([1.0, 4.0]))
    np.testing.assert_allclose(b.covariances[0], np.diag([1.0, 4.0]))
    full = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = GaussianMixture.single(mean, full)
    np.testing.assert_allclose(c.covariances[0], full)
    assert a.weights.shape == (1,) and a.weights[0] == 1.0


def test_isotropic_constructor():
    means = np.array([[0.0, 0.0], [1.0, 1.0]])
    g = GaussianMixture.isotropic(means, np.array([0.5, 2.0]))
    np.testing.assert_allclose(g.covariances[0], 0.25 * np.eye(2))
    np.testing.assert_allclose(g.covariances[1], 4.0 * np.eye(2))
    np.testing.assert_allclose(g.weights, [0.5, 0.5])


def test_validation_errors():
    eye = np.stack([np.eye(2)])
    with pytest.raises(ConfigurationError):
        GaussianMixture(np.array([0.4, 0.4]), np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
    with pytest.raises(ConfigurationError):
        GaussianMixture(np.array([-0.5, 1.5]), np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
    with pytest.raises(ShapeError):
        GaussianMixture(np.array([1.0]), np.zeros((2, 2)), eye)
    with pytest.raises(ShapeError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.stack([np.eye(3)]))
    asym = np.array([[[1.0, 0.5], [-0.5, 1.0]]])
    with pytest.raises(ConfigurationError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), asym)
    not_pd = np.array([[[1.0, 2.0], [2.0, 1.0]]])
    with pytest.raises(ConfigurationError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), not_pd)


def test_arrays_are_read_only():
    g = GaussianMixture.single(np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        g.means[0, 0] = 5.0
    with pytest.raises(ValueError):
        g.weights[0] = 0.5
