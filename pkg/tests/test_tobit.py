"""Unit test module for the Tobit likelihood, MLE and quasi-posterior."""
import numpy as np
import pytest
from scipy import stats

from policy_transport.exceptions import NumericalFailure
from policy_transport.tobit import (
    Dataset,
    QuasiPosterior,
    TobitEstimator,
    TobitFit,
    as_param_vectors,
    fisher_information,
    sample_quasi_posterior,
    summarize_draws,
    tobit_loglik,
    tobit_mle,
)
from policy_transport.welfare import ParamVector

TRUE_THETA = ParamVector(beta=[0.5, -1.0], alpha=2.0, sigma=1.5, intercept=1.0)


def simulate(theta, n, rng, tau=0.0):
    """Draw censored rows from the Tobit model at theta."""
    x = rng.normal(size=(n, len(theta.beta)))
    t = rng.integers(0, 2, size=n).astype(float)
    latent = theta.mean(x, t) + theta.sigma * rng.standard_normal(n)
    return Dataset(np.maximum(latent, tau), x, t, tau, ("x0", "x1"), "voucher")


def test_dataset_validation():
    """Test rows must line up and stay at or above tau."""
    with pytest.raises(ValueError, match="differ in length"):
        Dataset(np.zeros(3), np.zeros((2, 1)), np.zeros(3))

    with pytest.raises(ValueError, match="below tau"):
        Dataset(np.array([-1.0, 1.0]), np.zeros((2, 1)), np.zeros(2), tau=0.0)


def test_dataset_design_layout():
    """Test the design columns follow (x..., t, [1])."""
    data = Dataset(np.array([0.0, 2.0]), np.array([[3.0], [4.0]]), np.array([1.0, 0.0]))

    assert data.design().tolist() == [[3.0, 1.0], [4.0, 0.0]]
    assert data.design(intercept=True)[:, -1].tolist() == [1.0, 1.0]
    assert data.censored.tolist() == [True, False]


def test_tobit_loglik_per_row():
    """Test censored and uncensored rows contribute log Φ and log φ - log σ."""
    theta = ParamVector(beta=[1.0], alpha=0.5, sigma=2.0)
    data = Dataset(np.array([0.0, 3.0]), np.array([[1.0], [2.0]]), np.array([0.0, 1.0]))

    expected = stats.norm.logcdf((0.0 - 1.0) / 2.0) + stats.norm.logpdf(
        3.0, loc=2.5, scale=2.0
    )

    assert tobit_loglik(theta, data) == pytest.approx(expected, abs=1e-12)


def test_tobit_mle_without_censoring_is_least_squares(rng):
    """Test an uncensored sample gives OLS with σ² = RSS/n."""
    n = 300
    x = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, size=n).astype(float)
    y = x @ [1.0, -2.0] + 0.7 * t + 0.5 * rng.standard_normal(n)
    data = Dataset(y, x, t, tau=-1e3)

    fit = tobit_mle(data)

    design = data.design()
    ols, *_ = np.linalg.lstsq(design, y, rcond=None)
    rss = np.sum((y - design @ ols) ** 2)

    assert fit.converged
    assert np.allclose(fit.theta_hat.as_array()[:-1], ols, atol=1e-6)
    assert fit.theta_hat.sigma**2 == pytest.approx(rss / n, abs=1e-6)


def test_tobit_mle_is_shift_equivariant(rng):
    """Test shifting y and tau shifts the intercept and leaves σ alone."""
    data = simulate(TRUE_THETA, 400, rng)

    fit = tobit_mle(data, tol=1e-10, intercept=True)
    shifted = tobit_mle(data.shifted(3.0), tol=1e-10, intercept=True)

    assert shifted.theta_hat.intercept == pytest.approx(
        fit.theta_hat.intercept + 3.0, abs=1e-8
    )
    assert shifted.theta_hat.sigma == pytest.approx(fit.theta_hat.sigma, abs=1e-8)
    assert np.allclose(shifted.theta_hat.beta, fit.theta_hat.beta, atol=1e-8)
    assert shifted.theta_hat.alpha == pytest.approx(fit.theta_hat.alpha, abs=1e-8)


def test_tobit_mle_reports_consistent_fit(rng):
    """Test the fit's likelihood, score and information agree with direct calls."""
    data = simulate(TRUE_THETA, 400, rng)

    fit = tobit_mle(data, intercept=True)

    assert fit.converged
    assert fit.gradient_norm < 1e-8
    assert fit.loglik == pytest.approx(tobit_loglik(fit.theta_hat, data))
    assert np.allclose(fisher_information(fit.theta_hat, data), fit.fisher)
    assert fit.names() == ["x0", "x1", "voucher", "const", "sigma"]
    assert np.all(np.linalg.eigvalsh(fit.fisher) > 0)


def test_tobit_mle_maximizes_likelihood(rng):
    """Test small perturbations of the estimate never raise the likelihood."""
    data = simulate(TRUE_THETA, 300, rng)
    fit = tobit_mle(data, intercept=True)
    best = tobit_loglik(fit.theta_hat, data)

    for _ in range(10):
        moved = fit.theta_hat.as_array() + 1e-3 * rng.normal(size=fit.theta_hat.k)
        moved[-1] = abs(moved[-1])
        assert tobit_loglik(ParamVector.from_array(moved, True), data) <= best


def test_tobit_mle_rejects_tiny_samples():
    """Test fewer than k + 2 rows cannot be fit."""
    data = Dataset(np.ones(4), np.ones((4, 2)), np.array([0.0, 1.0, 0.0, 1.0]))

    with pytest.raises(ValueError, match="at least 6 rows"):
        tobit_mle(data)


def test_tobit_mle_flags_non_convergence(rng):
    """Test hitting the step cap returns an unconverged fit instead of raising."""
    data = simulate(TRUE_THETA, 200, rng)

    fit = tobit_mle(data, intercept=True, max_iterations=0)

    assert not fit.converged
    assert fit.iterations == 0


def test_tobit_mle_accepts_initial_point(rng):
    """Test starting at a given ParamVector reaches the same estimate."""
    data = simulate(TRUE_THETA, 300, rng)

    default = tobit_mle(data, intercept=True)
    started = tobit_mle(data, init=TRUE_THETA)

    assert np.allclose(
        started.theta_hat.as_array(), default.theta_hat.as_array(), atol=1e-6
    )


@pytest.mark.integration
def test_tobit_mle_recovers_parameters():
    """Test a large sample lands within three standard errors of the truth."""
    rng = np.random.default_rng(5000)
    data = simulate(TRUE_THETA, 5000, rng)

    fit = tobit_mle(data, intercept=True)
    errors = np.abs(fit.theta_hat.as_array() - TRUE_THETA.as_array())

    assert fit.converged
    assert np.all(errors <= 3.0 * fit.standard_errors)


@pytest.mark.integration
def test_tobit_mle_recovers_theta0_across_trials(theta0):
    """Test n = 5000 fits at θ₀ land within three standard errors in 95 of 100."""
    from policy_transport.experiment import sample_training_data

    covered = 0
    for seed in range(100):
        data = sample_training_data(theta0, 5000, np.random.default_rng(seed))
        fit = tobit_mle(data)
        errors = np.abs(fit.theta_hat.as_array() - theta0.as_array())
        covered += bool(fit.converged and np.all(errors <= 3.0 * fit.standard_errors))

    assert covered >= 95


def test_tobit_mle_is_row_permutation_invariant(rng):
    """Test reordering rows leaves the likelihood, estimate and information."""
    data = simulate(TRUE_THETA, 400, rng)
    order = rng.permutation(data.n)
    permuted = Dataset(data.y[order], data.x[order], data.t[order], data.tau)

    fit = tobit_mle(data, tol=1e-11, intercept=True)
    refit = tobit_mle(permuted, tol=1e-11, intercept=True)

    assert refit.loglik == pytest.approx(fit.loglik, rel=1e-12)
    assert np.allclose(refit.theta_hat.as_array(), fit.theta_hat.as_array(), atol=1e-9)
    assert np.allclose(refit.fisher, fit.fisher, atol=1e-9)
    assert tobit_loglik(TRUE_THETA, permuted) == pytest.approx(
        tobit_loglik(TRUE_THETA, data), rel=1e-12
    )


def test_information_doubles_on_duplicated_data(rng):
    """Test stacking the data twice keeps the estimate and doubles n·Î."""
    data = simulate(TRUE_THETA, 300, rng)
    doubled = Dataset(
        np.tile(data.y, 2), np.tile(data.x, (2, 1)), np.tile(data.t, 2), data.tau
    )

    fit = tobit_mle(data, tol=1e-11, intercept=True)
    refit = tobit_mle(doubled, tol=1e-11, intercept=True)

    assert np.allclose(refit.theta_hat.as_array(), fit.theta_hat.as_array(), atol=1e-8)
    assert np.allclose(refit.total_information, 2.0 * fit.total_information, rtol=1e-6)
    assert refit.loglik == pytest.approx(2.0 * fit.loglik, rel=1e-10)


def test_hessian_matches_finite_differences(rng):
    """Test the analytic Hessian against central differences of the score."""
    data = simulate(TRUE_THETA, 200, rng)
    estimator = TobitEstimator(data, intercept=True)
    params = np.append(TRUE_THETA.as_array()[:-1], np.log(TRUE_THETA.sigma))
    step = 1e-6

    _, _, hessian = estimator.derivatives(params)
    numeric = np.empty_like(hessian)
    for k in range(len(params)):
        offset = np.zeros(len(params))
        offset[k] = step
        _, upper, _ = estimator.derivatives(params + offset)
        _, lower, _ = estimator.derivatives(params - offset)
        numeric[:, k] = (upper - lower) / (2.0 * step)

    assert np.allclose(hessian, numeric, rtol=1e-4, atol=1e-8)


def test_information_without_censoring_is_gaussian(rng):
    """Test an uncensored fit has blocks X'X/(nσ²) and 2/σ² and no cross terms."""
    n = 400
    x = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, size=n).astype(float)
    y = x @ [1.0, -2.0] + 0.7 * t + 0.5 * rng.standard_normal(n)
    data = Dataset(y, x, t, tau=-1e3)

    fit = tobit_mle(data, tol=1e-12)
    sigma = fit.theta_hat.sigma
    design = data.design()

    expected = np.zeros((4, 4))
    expected[:3, :3] = design.T @ design / (n * sigma**2)
    expected[3, 3] = 2.0 / sigma**2

    assert fit.converged
    assert np.allclose(fit.fisher, expected, atol=1e-6)



def test_fit_summary_includes_sigma2(small_fit):
    """Test the summary reports σ² with its delta-method standard error."""
    summary = small_fit.summary()
    sigma2 = summary.set_index("coefficient").loc["sigma2"]

    assert list(summary["coefficient"]) == ["age", "sex", "t", "sigma", "sigma2"]
    assert sigma2["estimate"] == pytest.approx(100.0)
    assert sigma2["std_error"] == pytest.approx(
        2.0 * 10.0 * small_fit.standard_errors[-1]
    )


def test_fit_dict_restores_fit(small_fit):
    """Test the serialized fit reproduces estimates and information."""
    restored = TobitFit.from_dict(small_fit.to_dict())

    assert restored.theta_hat.as_array().tolist() == [-2.0, -3.0, 4.0, 10.0]
    assert np.array_equal(restored.fisher, small_fit.fisher)
    assert restored.covariate_names == ("age", "sex")
    assert small_fit.to_dict()["standard_errors"] == pytest.approx(
        small_fit.standard_errors.tolist()
    )


def test_pinned_fit_has_no_spread(pinned_fit, rng):
    """Test draws from a pinned fit sit on its estimate."""
    draws = sample_quasi_posterior(pinned_fit, 50, rng)

    assert np.allclose(draws, pinned_fit.theta_hat.as_array(), atol=1e-9)


def test_quasi_posterior_moments(small_fit, rng):
    """Test many draws match the mean and covariance (n·Î)⁻¹."""
    draws = sample_quasi_posterior(small_fit, 20000, rng)

    assert draws.shape == (20000, 4)
    assert np.allclose(draws.mean(axis=0), small_fit.theta_hat.as_array(), atol=0.05)
    assert np.allclose(np.cov(draws.T), small_fit.covariance, rtol=0.1, atol=1e-3)


def test_quasi_posterior_resamples_nonpositive_sigma(rng):
    """Test σ ≤ 0 draws are redrawn under the σ parametrization."""
    theta = ParamVector(beta=[0.0], alpha=0.0, sigma=1.0)
    posterior = QuasiPosterior(theta, np.diag([1.0, 1.0, 1.0]))

    draws = posterior.sample(500, rng)

    assert np.all(draws[:, -1] > 0)


def test_quasi_posterior_log_sigma(small_fit, rng):
    """Test log-σ draws are positive and centered on σ̂ in log scale."""
    draws = sample_quasi_posterior(small_fit, 5000, rng, "log-sigma")

    assert np.all(draws[:, -1] > 0)
    assert np.log(draws[:, -1]).mean() == pytest.approx(np.log(10.0), abs=0.05)


def test_quasi_posterior_rejects_singular_information(theta0, rng):
    """Test a singular information matrix is a numerical failure."""
    fit = TobitFit(theta0, 0.0, np.zeros((4, 4)), 10, converged=True)

    with pytest.raises(NumericalFailure):
        sample_quasi_posterior(fit, 10, rng)


def test_quasi_posterior_rejects_empty_draws(small_fit, rng):
    """Test at least one draw must be requested."""
    with pytest.raises(ValueError):
        sample_quasi_posterior(small_fit, 0, rng)


def test_draw_helpers(small_fit, rng):
    """Test draws convert to ParamVectors and summarize per coefficient."""
    draws = sample_quasi_posterior(small_fit, 100, rng)

    vectors = as_param_vectors(draws)
    summary = summarize_draws(draws, small_fit.names())

    assert len(vectors) == 100
    assert vectors[0].sigma == draws[0, -1]
    assert list(summary.columns) == ["coefficient", "mean", "sd"]
    assert summary["mean"].tolist() == pytest.approx(draws.mean(axis=0).tolist())
