import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from reps.priors import (
    GaussianPrior,
    GmmPrior,
    PerturbedScore,
    denoise_at,
    load_prior,
    score_at,
)

SIGMAS = [0.01, 0.1, 1.0, 10.0, 100.0]


def fd_log_density(prior, x, sigma, h=1e-5):
    """Central-difference gradient of log p_sigma, independent of the library score."""

    def logp(pt):
        if isinstance(prior, GmmPrior):
            parts = [
                np.log(w) + multivariate_normal.logpdf(pt, c.mean, c.cov + sigma**2 * np.eye(c.dim))
                for w, c in zip(prior.weights, prior.components)
            ]
            return logsumexp(parts)
        return multivariate_normal.logpdf(pt, prior.mean,
                                          prior.cov + sigma**2 * np.eye(prior.dim))

    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (logp(x + e) - logp(x - e)) / (2.0 * h)
    return g


def make_gmm():
    rng = np.random.default_rng(11)
    comps = []
    for _ in range(3):
        a = rng.standard_normal((2, 2))
        comps.append(GaussianPrior(rng.standard_normal(2), a @ a.T + 0.3 * np.eye(2)))
    return GmmPrior(np.array([0.5, 0.3, 0.2]), comps)


def test_isotropic_gaussian_score_value():
    prior = GaussianPrior(np.zeros(2), np.eye(2))
    np.testing.assert_allclose(score_at(prior, np.array([1.0, 0.0]), 1.0),
                               [-0.5, 0.0], atol=1e-14)


def test_gaussian_denoiser_closed_form():
    tau, sigma = 0.7, 0.4
    mu = np.array([0.3, -1.2, 2.0])
    prior = GaussianPrior(mu, tau**2 * np.eye(3))
    x = np.array([1.0, 0.5, -0.2])
    want = (tau**2 * x + sigma**2 * mu) / (tau**2 + sigma**2)
    np.testing.assert_allclose(denoise_at(prior, x, sigma), want, atol=1e-13)


def test_sigma_zero_denoise_is_identity():
    prior = make_gmm()
    x = np.array([0.4, -0.7])
    np.testing.assert_array_equal(denoise_at(prior, x, 0.0), x)


@pytest.mark.parametrize("sigma", [0.0, 0.5, 3.0])
def test_score_matches_finite_differences(sigma, gmm_fixture):
    prior, _ = gmm_fixture
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(-2.5, 2.5, size=2)
        got = score_at(prior, x, sigma)
        want = fd_log_density(prior, x, sigma)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_full_covariance_gmm_score_fd():
    prior = make_gmm()
    rng = np.random.default_rng(6)
    for sigma in [0.3, 2.0]:
        x = rng.standard_normal(2) * 2.0
        np.testing.assert_allclose(score_at(prior, x, sigma),
                                   fd_log_density(prior, x, sigma),
                                   rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("sigma", SIGMAS)
def test_tweedie_identity_both_priors(sigma):
    gauss = GaussianPrior(np.array([0.2, -0.5, 1.0]),
                          np.array([[1.0, 0.3, 0.0], [0.3, 2.0, 0.1], [0.0, 0.1, 0.5]]))
    gmm = make_gmm()
    rng = np.random.default_rng(7)
    for prior in (gauss, gmm):
        x = rng.standard_normal((200, prior.dim)) * np.sqrt(1.0 + sigma**2)
        gap = denoise_at(prior, x, sigma) - (x + sigma**2 * score_at(prior, x, sigma))
        assert np.max(np.linalg.norm(gap, axis=1)) < 1e-10


def test_tweedie_identity_perturbed():
    base = make_gmm()
    prior = PerturbedScore(base, epsilon=0.1, perturbation_seed=2024)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((200, 2)) * 2.0
    for sigma in SIGMAS:
        gap = denoise_at(prior, x, sigma) - (x + sigma**2 * score_at(prior, x, sigma))
        assert np.max(np.linalg.norm(gap, axis=1)) < 1e-10


def test_one_component_mixture_degenerates_to_gaussian():
    g = GaussianPrior(np.array([0.5, -0.1]), np.array([[1.2, 0.4], [0.4, 0.9]]))
    m = GmmPrior(np.array([1.0]), [g])
    rng = np.random.default_rng(9)
    x = rng.standard_normal((50, 2))
    for sigma in [0.0, 0.3, 5.0]:
        np.testing.assert_allclose(score_at(m, x, sigma), score_at(g, x, sigma), atol=1e-12)
        np.testing.assert_allclose(denoise_at(m, x, sigma), denoise_at(g, x, sigma), atol=1e-12)


def test_smoothed_density_normalizes(gmm_fixture):
    prior, _ = gmm_fixture
    g = np.linspace(-8.0, 8.0, 1601)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    for sigma in [0.0, 0.5]:
        dens = np.exp(prior.logpdf_smoothed(pts, sigma)).reshape(len(g), len(g))
        total = np.trapezoid(np.trapezoid(dens, g, axis=1), g)
        assert abs(total - 1.0) < 1e-4


def test_perturbed_zero_epsilon_is_bit_exact():
    base = make_gmm()
    wrapped = PerturbedScore(base, epsilon=0.0, perturbation_seed=1)
    x = np.random.default_rng(3).standard_normal((20, 2))
    assert np.array_equal(score_at(wrapped, x, 0.7), score_at(base, x, 0.7))


def test_perturbed_deterministic_across_instances():
    base = make_gmm()
    a = PerturbedScore(base, epsilon=0.1, perturbation_seed=2024)
    b = PerturbedScore(base, epsilon=0.1, perturbation_seed=2024)
    x = np.random.default_rng(4).standard_normal((20, 2))
    assert np.array_equal(score_at(a, x, 0.5), score_at(b, x, 0.5))
    c = PerturbedScore(base, epsilon=0.1, perturbation_seed=2025)
    assert not np.array_equal(score_at(a, x, 0.5), score_at(c, x, 0.5))


def test_perturbation_sup_norm_bound():
    base = make_gmm()
    eps = 0.1
    prior = PerturbedScore(base, epsilon=eps, perturbation_seed=2024)
    rng = np.random.default_rng(10)
    x = rng.uniform(-5.0, 5.0, size=(10_000, 2))
    for sigma in [0.1, 1.0, 10.0]:
        delta = score_at(prior, x, sigma) - score_at(base, x, sigma)
        assert np.max(np.abs(delta)) <= eps / sigma + 1e-12


def test_gaussian_prior_validation():
    with pytest.raises(ValueError):
        GaussianPrior(np.zeros(2), np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(ValueError):
        GaussianPrior(np.zeros(2), np.array([[1.0, 0.0], [0.0, -0.1]]))


def test_gmm_validation():
    g = GaussianPrior(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        GmmPrior(np.array([0.6, 0.5]), [g, g])
    with pytest.raises(ValueError):
        GmmPrior(np.array([]), [])


def test_fixture_file_roundtrip(fixtures_dir):
    prior, params = load_prior(fixtures_dir / "gmm_d2.txt")
    assert isinstance(prior, GmmPrior)
    assert prior.dim == 2 and len(prior.components) == 3
    np.testing.assert_allclose(prior.weights, [0.35, 0.35, 0.30])
    assert params["lambda"] == 12.0 and params["eta"] == 0.05

    gauss, gparams = load_prior(fixtures_dir / "gaussian_d8.txt")
    assert isinstance(gauss, GaussianPrior)
    assert gauss.dim == 8 and gparams == {}
    np.testing.assert_array_equal(gauss.cov, np.eye(8))


def test_prior_sampling_moments(gmm_fixture):
    prior, _ = gmm_fixture
    draws = prior.sample(20_000, np.random.default_rng(12))
    w = prior.weights
    mean_want = w @ np.stack([c.mean for c in prior.components])
    np.testing.assert_allclose(draws.mean(axis=0), mean_want, atol=0.03)
