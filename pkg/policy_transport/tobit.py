"""Censored (Tobit) regression: likelihood, Newton MLE, information and quasi-posterior.

The latent outcome is y* = x'β + αt (+ intercept) + u with u ~ N(0, σ²), observed as
y = max(τ, y*). Censored rows contribute log Φ((τ - m)/σ) and uncensored rows
log φ((y - m)/σ) - log σ.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import log_ndtr

from airflow.utils.log.logging_mixin import LoggingMixin

from .config import Parametrization
from .exceptions import NumericalFailure
from .welfare import ParamVector

CENSOR_TOLERANCE = 1e-10
ARMIJO = 1e-4
NEWTON_TOLERANCE = 1e-8
NEWTON_MAX_ITERATIONS = 200
RESAMPLE_ATTEMPTS = 100

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training rows (y, x, t) censored below at tau.

    Attributes:
        y: Observed outcomes, all at or above tau.
        x: Covariates, one row per observation.
        t: Treatment levels.
        tau: Censor point.
        covariate_names: One name per covariate column.
        treatment_name: Name of the treatment column.
    """

    y: np.ndarray
    x: np.ndarray
    t: np.ndarray
    tau: float = 0.0
    covariate_names: tuple[str, ...] = ()
    treatment_name: str = "t"

    def __post_init__(self):
        """Validate shapes and the censoring floor."""
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        t = np.asarray(self.t, dtype=float).ravel()
        if not len(y) == len(x) == len(t):
            raise ValueError(
                f"Dataset columns differ in length: y={len(y)} x={len(x)} t={len(t)}"
            )
        if not all(np.all(np.isfinite(column)) for column in (y, x, t)):
            raise ValueError("Dataset entries must be finite")
        if np.any(y < self.tau - CENSOR_TOLERANCE):
            raise ValueError(f"Observed outcomes must not fall below tau={self.tau}")
        names = tuple(self.covariate_names) or tuple(
            f"x{i}" for i in range(x.shape[1])
        )
        if len(names) != x.shape[1]:
            raise ValueError("One covariate name is required per covariate column")

        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        """Row count."""
        return len(self.y)

    @property
    def censored(self) -> np.ndarray:
        """Mask of rows observed at the censor point."""
        return self.y <= self.tau + CENSOR_TOLERANCE

    def design(self, intercept: bool = False) -> np.ndarray:
        """Columns (x..., t, [1]) matching the ParamVector layout."""
        columns = [self.x, self.t[:, None]]
        if intercept:
            columns.append(np.ones((self.n, 1)))
        return np.hstack(columns)

    def shifted(self, constant: float) -> Dataset:
        """The same rows with outcomes and tau shifted by a constant."""
        return Dataset(
            self.y + constant,
            self.x,
            self.t,
            self.tau + constant,
            self.covariate_names,
            self.treatment_name,
        )


def tobit_loglik(theta: ParamVector, data: Dataset) -> float:
    """Total Tobit log-likelihood of the dataset at theta."""
    design = data.design(theta.has_intercept)
    return float(
        np.sum(_row_loglik(design, data, theta.as_array()[:-1], theta.sigma))
    )


def _row_loglik(
    design: np.ndarray, data: Dataset, coefficients: np.ndarray, sigma: float
) -> np.ndarray:
    m = design @ coefficients
    censored = data.censored
    out = np.empty(data.n)
    out[censored] = log_ndtr((data.tau - m[censored]) / sigma)
    e = (data.y[~censored] - m[~censored]) / sigma
    out[~censored] = -_LOG_SQRT_2PI - 0.5 * e * e - np.log(sigma)
    return out


class TobitEstimator(LoggingMixin):
    """Newton maximization of the Tobit likelihood in (coefficients, log σ).

    Attributes:
        data: The training rows.
        intercept: Whether the design includes a constant column.
        tol: Convergence threshold on the ∞-norm of the average score.
        max_iterations: Newton step cap.
    """

    def __init__(
        self,
        data: Dataset,
        intercept: bool = False,
        tol: float = NEWTON_TOLERANCE,
        max_iterations: int = NEWTON_MAX_ITERATIONS,
    ):
        super().__init__()
        self.data = data
        self.intercept = intercept
        self.tol = tol
        self.max_iterations = max_iterations
        self.design = data.design(intercept)

    @property
    def k(self) -> int:
        """Parameter count including σ."""
        return self.design.shape[1] + 1

    def average_loglik(self, params: np.ndarray) -> float:
        """Average log-likelihood at params = (coefficients, log σ)."""
        rows = _row_loglik(self.design, self.data, params[:-1], np.exp(params[-1]))
        return float(np.mean(rows))

    def derivatives(self, params: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Average log-likelihood, score and Hessian in (coefficients, log σ)."""
        coefficients, s = params[:-1], params[-1]
        sigma = np.exp(s)
        d = self.design
        m = d @ coefficients
        censored = self.data.censored
        n = self.data.n

        # Per-row coefficients of D (gradient), DD' (Hessian block), D·∂s and ∂s∂s.
        g_d = np.empty(n)
        g_s = np.empty(n)
        h_dd = np.empty(n)
        h_ds = np.empty(n)
        h_ss = np.empty(n)

        e = (self.data.y[~censored] - m[~censored]) / sigma
        g_d[~censored] = e / sigma
        g_s[~censored] = e * e - 1.0
        h_dd[~censored] = -1.0 / sigma**2
        h_ds[~censored] = -2.0 * e / sigma
        h_ss[~censored] = -2.0 * e * e

        c = (self.data.tau - m[censored]) / sigma
        mills = np.exp(-0.5 * c * c - _LOG_SQRT_2PI - log_ndtr(c))
        curvature = c * (c + mills)
        g_d[censored] = -mills / sigma
        g_s[censored] = -mills * c
        h_dd[censored] = -mills * (c + mills) / sigma**2
        h_ds[censored] = mills * (1.0 - curvature) / sigma
        h_ss[censored] = mills * c * (1.0 - curvature)

        loglik = float(np.mean(_row_loglik(d, self.data, coefficients, sigma)))
        score = np.append(d.T @ g_d, g_s.sum()) / n
        hessian = np.empty((self.k, self.k))
        hessian[:-1, :-1] = (d * h_dd[:, None]).T @ d / n
        hessian[:-1, -1] = hessian[-1, :-1] = d.T @ h_ds / n
        hessian[-1, -1] = h_ss.sum() / n
        return loglik, score, hessian

    def to_sigma_coordinates(
        self, params: np.ndarray, score: np.ndarray, hessian: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Re-express score and Hessian from log σ to σ by the chain rule."""
        sigma = np.exp(params[-1])
        jacobian = np.ones(len(params))
        jacobian[-1] = 1.0 / sigma
        score_sigma = score * jacobian
        hessian_sigma = hessian * np.outer(jacobian, jacobian)
        hessian_sigma[-1, -1] -= score[-1] / sigma**2
        return score_sigma, hessian_sigma

    def initial_params(self) -> np.ndarray:
        """Least squares on uncensored rows with σ the residual scale."""
        uncensored = ~self.data.censored
        d, y = self.design[uncensored], self.data.y[uncensored]
        if len(y) >= d.shape[1] and np.linalg.matrix_rank(d) == d.shape[1]:
            coefficients, *_ = linalg.lstsq(d, y)
            rss = float(np.sum((y - d @ coefficients) ** 2))
            sigma = np.sqrt(rss / len(y))
        else:
            coefficients = np.zeros(self.design.shape[1])
            sigma = float(np.std(self.data.y))
        if not sigma > 0:
            sigma = 1.0
        return np.append(coefficients, np.log(sigma))

    def fit(self, init: Optional[ParamVector] = None) -> TobitFit:
        """Run damped Newton iterations from init.

        Non-convergence after max_iterations is reported through
        TobitFit.converged, never raised.
        """
        if init is None:
            params = self.initial_params()
        else:
            if init.has_intercept != self.intercept:
                raise ValueError("Initial parameters disagree on the intercept")
            values = init.as_array()
            params = np.append(values[:-1], np.log(values[-1]))

        converged = False
        iteration = 0
        loglik, score, hessian = self.derivatives(params)
        while True:
            score_sigma, _ = self.to_sigma_coordinates(params, score, hessian)
            gradient_norm = float(np.max(np.abs(score_sigma)))
            self.log.debug(
                "Newton step %s: loglik=%s gradient=%s",
                iteration,
                loglik,
                gradient_norm,
            )
            if gradient_norm < self.tol:
                converged = True
                break
            if iteration >= self.max_iterations:
                break

            direction = _ascent_direction(score, hessian)
            slope = float(score @ direction)
            step = 1.0
            while step > 1e-12:
                candidate = params + step * direction
                candidate_loglik = self.average_loglik(candidate)
                if np.isfinite(candidate_loglik) and (
                    candidate_loglik >= loglik + ARMIJO * step * slope
                ):
                    break
                step *= 0.5
            else:
                self.log.warning("Line search failed at Newton step %s", iteration)
                break

            params = candidate
            loglik, score, hessian = self.derivatives(params)
            iteration += 1

        if not converged:
            self.log.warning(
                "Tobit fit did not converge after %s steps (gradient %s)",
                iteration,
                gradient_norm,
            )

        theta_hat = ParamVector.from_array(
            np.append(params[:-1], np.exp(params[-1])), self.intercept
        )
        _, hessian_sigma = self.to_sigma_coordinates(params, score, hessian)
        fisher = -0.5 * (hessian_sigma + hessian_sigma.T)
        try:
            _check_positive_definite(fisher)
        except NumericalFailure as e:
            self.log.warning("Information matrix is not positive definite: %s", e)
            converged = False

        self.log.info(
            "Tobit fit: n=%s converged=%s steps=%s loglik=%s",
            self.data.n,
            converged,
            iteration,
            loglik * self.data.n,
        )
        return TobitFit(
            theta_hat=theta_hat,
            loglik=loglik * self.data.n,
            fisher=fisher,
            n=self.data.n,
            converged=converged,
            iterations=iteration,
            gradient_norm=gradient_norm,
            covariate_names=self.data.covariate_names,
            treatment_name=self.data.treatment_name,
            tau=self.data.tau,
        )


def _ascent_direction(score: np.ndarray, hessian: np.ndarray) -> np.ndarray:
    """Solve (-H + shift·I) d = g, raising the shift until the system is PD."""
    negative = -0.5 * (hessian + hessian.T)
    shift = 0.0
    base = 1e-8 * max(1.0, float(np.abs(np.diag(negative)).max()))
    for _ in range(30):
        try:
            factor = linalg.cho_factor(negative + shift * np.eye(len(score)))
            return linalg.cho_solve(factor, score)
        except linalg.LinAlgError:
            shift = base if shift == 0.0 else 10.0 * shift
    return score


def _check_positive_definite(matrix: np.ndarray) -> None:
    try:
        linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as e:
        raise NumericalFailure(f"Matrix is not positive definite: {e}") from e


def tobit_mle(
    data: Dataset,
    init: Optional[ParamVector] = None,
    tol: float = NEWTON_TOLERANCE,
    intercept: bool = False,
    max_iterations: int = NEWTON_MAX_ITERATIONS,
) -> TobitFit:
    """Maximum-likelihood Tobit fit.

    Args:
        data: Training rows with at least k + 2 observations.
        init: Starting point; least squares on uncensored rows by default.
        tol: Threshold on the ∞-norm of the average score in (β, α, σ).
        intercept: Whether to estimate a constant.
        max_iterations: Newton step cap.

    Raises:
        ValueError: When the dataset has fewer than k + 2 rows.
    """
    if init is not None:
        intercept = init.has_intercept
    estimator = TobitEstimator(data, intercept, tol, max_iterations)
    if data.n < estimator.k + 2:
        raise ValueError(
            f"A Tobit fit with {estimator.k} parameters needs at least "
            f"{estimator.k + 2} rows, got {data.n}"
        )
    return estimator.fit(init)


def fisher_information(theta_hat: ParamVector, data: Dataset) -> np.ndarray:
    """Observed information: the negative average Hessian in (β, α, [const], σ).

    Raises:
        NumericalFailure: When the matrix is not positive definite.
    """
    estimator = TobitEstimator(data, theta_hat.has_intercept)
    values = theta_hat.as_array()
    params = np.append(values[:-1], np.log(values[-1]))
    _, score, hessian = estimator.derivatives(params)
    _, hessian_sigma = estimator.to_sigma_coordinates(params, score, hessian)
    information = -0.5 * (hessian_sigma + hessian_sigma.T)
    _check_positive_definite(information)
    return information


@dataclass(frozen=True, eq=False)
class TobitFit:
    """A Tobit MLE with its observed information.

    Attributes:
        theta_hat: The estimate.
        loglik: Total log-likelihood at theta_hat.
        fisher: Average observed information per row, in (β, α, [const], σ).
        n: Sample size.
        converged: Whether the score fell below tolerance with a PD information.
    """

    theta_hat: ParamVector
    loglik: float
    fisher: np.ndarray
    n: int
    converged: bool
    iterations: int = 0
    gradient_norm: float = 0.0
    covariate_names: tuple[str, ...] = ()
    treatment_name: str = "t"
    tau: float = 0.0
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def total_information(self) -> np.ndarray:
        """n·Î."""
        return self.n * np.asarray(self.fisher)

    @property
    def covariance(self) -> np.ndarray:
        """(n·Î)⁻¹."""
        return linalg.inv(self.total_information)

    @property
    def standard_errors(self) -> np.ndarray:
        """Square roots of the covariance diagonal."""
        return np.sqrt(np.diag(self.covariance))

    def names(self) -> list[str]:
        """Coefficient labels in flat parameter order."""
        return self.theta_hat.names(self.covariate_names, self.treatment_name)

    def summary(self) -> pd.DataFrame:
        """Coefficient table with σ² and its delta-method standard error."""
        estimates = self.theta_hat.as_array()
        errors = self.standard_errors
        sigma = self.theta_hat.sigma
        return pd.DataFrame(
            {
                "coefficient": self.names() + ["sigma2"],
                "estimate": np.append(estimates, sigma**2),
                "std_error": np.append(errors, 2.0 * sigma * errors[-1]),
            }
        )

    def to_dict(self) -> dict[str, Any]:
        """A JSON-serializable representation."""
        try:
            errors: Optional[list[float]] = self.standard_errors.tolist()
        except (linalg.LinAlgError, ValueError):
            errors = None
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "names": self.names(),
            "standard_errors": errors,
            "fisher": np.asarray(self.fisher).tolist(),
            "loglik": self.loglik,
            "n": self.n,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "covariate_names": list(self.covariate_names),
            "treatment_name": self.treatment_name,
            "tau": self.tau,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TobitFit:
        """Inverse of to_dict."""
        return cls(
            theta_hat=ParamVector.from_dict(d["theta_hat"]),
            loglik=float(d["loglik"]),
            fisher=np.asarray(d["fisher"], dtype=float),
            n=int(d["n"]),
            converged=bool(d["converged"]),
            iterations=int(d.get("iterations", 0)),
            gradient_norm=float(d.get("gradient_norm", 0.0)),
            covariate_names=tuple(d.get("covariate_names", ())),
            treatment_name=d.get("treatment_name", "t"),
            tau=float(d.get("tau", 0.0)),
            metadata=dict(d.get("metadata", {})),
        )

    @classmethod
    def pinned(cls, theta: ParamVector, n: int = 1) -> TobitFit:
        """A degenerate fit at theta with negligible posterior spread."""
        return cls(
            theta_hat=theta,
            loglik=0.0,
            fisher=np.eye(theta.k) * 1e24,
            n=n,
            converged=True,
        )


@dataclass(frozen=True, eq=False)
class QuasiPosterior:
    """The Gaussian quasi-posterior N(θ̂, (n·Î)⁻¹).

    With the log-sigma parametrization the Gaussian lives on (β, α, log σ) with the
    delta-method covariance, so draws always have σ > 0.
    """

    mean: ParamVector
    covariance: np.ndarray
    parametrization: Parametrization = Parametrization.SIGMA

    def __post_init__(self):
        """Validate dimensions and symmetry."""
        covariance = np.asarray(self.covariance, dtype=float)
        if covariance.shape != (self.mean.k, self.mean.k):
            raise ValueError(
                f"Covariance shape {covariance.shape} does not match {self.mean.k} "
                "parameters"
            )
        if not np.allclose(covariance, covariance.T, rtol=1e-10, atol=1e-14):
            raise ValueError("Covariance must be symmetric")
        object.__setattr__(self, "covariance", 0.5 * (covariance + covariance.T))

    @classmethod
    def from_fit(
        cls,
        fit: TobitFit,
        parametrization: Union[Parametrization, str] = Parametrization.SIGMA,
    ) -> QuasiPosterior:
        """Build N(θ̂, (n·Î)⁻¹) from a fit."""
        try:
            covariance = fit.covariance
        except linalg.LinAlgError as e:
            raise NumericalFailure(f"Information matrix is singular: {e}") from e
        return cls(fit.theta_hat, covariance, Parametrization.coerce(parametrization))

    def _gaussian(self) -> tuple[np.ndarray, np.ndarray]:
        center = self.mean.as_array()
        covariance = self.covariance
        if self.parametrization is Parametrization.LOG_SIGMA:
            jacobian = np.ones(len(center))
            jacobian[-1] = 1.0 / center[-1]
            covariance = covariance * np.outer(jacobian, jacobian)
            center = np.append(center[:-1], np.log(center[-1]))
        try:
            factor = linalg.cholesky(covariance, lower=True)
        except linalg.LinAlgError as e:
            raise NumericalFailure(f"Posterior covariance is not PD: {e}") from e
        return center, factor

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw an (size, k) array in the flat ParamVector layout.

        Raises:
            NumericalFailure: On a non-PD covariance, or when σ ≤ 0 draws keep
                recurring under the σ parametrization.
        """
        if size < 1:
            raise ValueError(f"Draw count must be at least 1, got {size}")
        center, factor = self._gaussian()
        draws = rng.standard_normal((size, len(center))) @ factor.T + center

        if self.parametrization is Parametrization.LOG_SIGMA:
            draws[:, -1] = np.exp(draws[:, -1])
            return draws

        for _ in range(RESAMPLE_ATTEMPTS):
            invalid = draws[:, -1] <= 0
            if not invalid.any():
                return draws
            log.warning(
                "Resampling %s quasi-posterior draws with sigma <= 0", invalid.sum()
            )
            replacement = rng.standard_normal((int(invalid.sum()), len(center)))
            draws[invalid] = replacement @ factor.T + center
        raise NumericalFailure("Quasi-posterior keeps producing draws with sigma <= 0")


def sample_quasi_posterior(
    fit: TobitFit,
    size: int,
    rng: np.random.Generator,
    parametrization: Union[Parametrization, str] = Parametrization.SIGMA,
) -> np.ndarray:
    """Draw from N(θ̂, (n·Î)⁻¹); rows follow the flat ParamVector layout."""
    return QuasiPosterior.from_fit(fit, parametrization).sample(size, rng)


def as_param_vectors(draws: np.ndarray, intercept: bool = False) -> list[ParamVector]:
    """Convert an array of flat draws to ParamVectors."""
    return [ParamVector.from_array(row, intercept) for row in np.atleast_2d(draws)]


def summarize_draws(draws: np.ndarray, names: Sequence[str]) -> pd.DataFrame:
    """Posterior mean and standard deviation per parameter."""
    draws = np.atleast_2d(draws)
    return pd.DataFrame(
        {
            "coefficient": list(names),
            "mean": draws.mean(axis=0),
            "sd": draws.std(axis=0, ddof=int(len(draws) > 1)),
        }
    )
