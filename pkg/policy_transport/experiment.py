"""Monte Carlo risk of plug-in and ex-post Bayes rules along local perturbations.

For every h on a grid the true parameter is θ_nh = θ₀ + h/√n. Each replication
draws a training sample at θ_nh, fits the Tobit model, builds both rules and records
their welfare regret at θ_nh. Averaging regret over replications gives R(Q, h), and
averaging over the grid gives the average risk of each rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from airflow.utils.log.logging_mixin import LoggingMixin

from .config import RuleKind, SimulateConfig
from .exceptions import NumericalFailure
from .rules import ex_post_bayes_rule, oracle_rule, plug_in_rule, treatment_levels
from .tobit import Dataset, TobitFit, sample_quasi_posterior, tobit_mle
from .transport import DiscreteMarginal, TransportProblem, solve_max_transport
from .welfare import ParamVector, welfare_matrix

# Regret below -REGRET_TOLERANCE means a rule beat the oracle: a solver bug.
REGRET_TOLERANCE = 1e-9
RULES = (RuleKind.PLUG_IN, RuleKind.EX_POST_BAYES)

Fitter = Callable[[Dataset], TobitFit]


@dataclass(frozen=True)
class TruncatedNormal:
    """A normal distribution truncated to [lower, upper]."""

    mean: float = 4.0
    sd: float = 2.0
    lower: float = 1.0
    upper: float = 10.0

    def __post_init__(self):
        """Validate scale and bounds."""
        if self.sd <= 0 or not self.lower < self.upper:
            raise ValueError("TruncatedNormal needs sd > 0 and lower < upper")

    @property
    def distribution(self):
        """The frozen scipy.stats.truncnorm distribution."""
        return stats.truncnorm(
            (self.lower - self.mean) / self.sd,
            (self.upper - self.mean) / self.sd,
            loc=self.mean,
            scale=self.sd,
        )

    def ppf(self, q: np.ndarray) -> np.ndarray:
        """Quantile function."""
        return np.clip(self.distribution.ppf(q), self.lower, self.upper)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """Distribution function."""
        return self.distribution.cdf(x)


def discretize_covariates(
    age_dist: TruncatedNormal, sex_probability: float = 0.5, bins: int = 99
) -> DiscreteMarginal:
    """Discretize (age, sex) into bins cells.

    Sex 0 gets ceil(bins/2) age cells and sex 1 the rest. Age cells are
    equi-probable under the truncated normal, each represented by its median, so
    every cell of sex s has mass P(sex = s)/cells(s).
    """
    if bins < 2:
        raise ValueError(f"At least 2 bins are required, got {bins}")
    if not 0.0 < sex_probability < 1.0:
        raise ValueError("sex_probability must lie in (0, 1)")

    rows, masses = [], []
    for sex, cells, probability in (
        (0, math.ceil(bins / 2), 1.0 - sex_probability),
        (1, bins - math.ceil(bins / 2), sex_probability),
    ):
        medians = age_dist.ppf((np.arange(cells) + 0.5) / cells)
        rows.extend((age, sex) for age in medians)
        masses.extend([probability / cells] * cells)

    coordinates = np.array(rows, dtype=float)
    points = tuple(f"age={age:.10g}|sex={int(sex)}" for age, sex in coordinates)
    return DiscreteMarginal(points, np.array(masses), coordinates, ("age", "sex"))


def sample_training_data(
    theta: ParamVector,
    n: int,
    rng: np.random.Generator,
    age_dist: Optional[TruncatedNormal] = None,
    sex_probability: float = 0.5,
    treatment_probability: float = 0.5,
    tau: float = 0.0,
) -> Dataset:
    """Draw n rows of (age, sex), a randomized treatment and y = max(τ, y*).

    Ages come from the truncated normal by inverse CDF, sex and treatment are
    independent Bernoulli draws, and y* = x'β + αt + u with u ~ N(0, σ²).
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    age_dist = age_dist or TruncatedNormal()
    age = age_dist.ppf(rng.random(n))
    sex = (rng.random(n) < sex_probability).astype(float)
    t = (rng.random(n) < treatment_probability).astype(float)
    u = rng.standard_normal(n) * theta.sigma

    x = np.column_stack([age, sex])
    latent = np.asarray(theta.mean(x, t)) + u
    return Dataset(np.maximum(latent, tau), x, t, tau, ("age", "sex"), "t")


def perturb(theta0: ParamVector, h: float, n: int) -> ParamVector:
    """θ_nh = θ₀ + h/√n added to every component.

    Raises:
        ValueError: When the perturbed σ is not positive.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return theta0.shifted(h / math.sqrt(n))


def replication_rng(
    seed: int, grid_index: int, replication: int
) -> np.random.Generator:
    """Independent generator for replication j at grid index i."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(grid_index, replication))
    )


@dataclass(frozen=True)
class ReplicationResult:
    """Regret records of one replication and, at h = 0, its allocations."""

    records: list[dict[str, Any]]
    allocations: dict[tuple[float, str], np.ndarray] = field(default_factory=dict)


def run_replication(
    config: SimulateConfig,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    grid_index: int,
    h: float,
    replication: int,
    oracle: dict[float, tuple[np.ndarray, float]],
    keep_allocations: bool = False,
    fitter: Optional[Fitter] = None,
) -> ReplicationResult:
    """Fit, build both rules for every λ and score them at θ_nh.

    Args:
        oracle: For each λ, the welfare matrix at θ_nh and its maximum W*.
        keep_allocations: Keep μ(t = 1|x) per rule for the allocation heatmap.
        fitter: Replaces the Tobit MLE, for example with a pinned fit.
    """
    theta = perturb(config.theta0, h, config.n)  # type: ignore
    rng = replication_rng(config.seed, grid_index, replication)
    data = sample_training_data(
        theta,
        config.n,
        rng,
        TruncatedNormal(config.age_mean, config.age_sd, *config.age_bounds),
        config.sex_probability,
        config.treatment_probability,
    )

    def excluded() -> ReplicationResult:
        return ReplicationResult(
            [
                {
                    "lambda": lam,
                    "h": h,
                    "replication": replication,
                    "rule": rule.value,
                    "regret": np.nan,
                    "excluded": True,
                }
                for lam in config.lambdas
                for rule in RULES
            ]
        )

    try:
        fit = (fitter or tobit_mle)(data)
        if not fit.converged:
            return excluded()
        draws = sample_quasi_posterior(fit, config.draws, rng, config.parametrization)
    except (NumericalFailure, ValueError):
        return excluded()

    records, allocations = [], {}
    for lam in config.lambdas:
        spec = config.welfare_spec(lam)
        true_matrix, best = oracle[lam]
        outputs = {
            RuleKind.PLUG_IN: plug_in_rule(fit, grid, f_t, spec, config.tie_mode),
            RuleKind.EX_POST_BAYES: ex_post_bayes_rule(
                fit, grid, f_t, spec, tie_mode=config.tie_mode, draws=draws
            ),
        }
        for rule, output in outputs.items():
            regret = best - float(np.sum(true_matrix * output.coupling.mass))
            if regret < -REGRET_TOLERANCE:
                raise NumericalFailure(
                    f"Negative regret {regret} for the {rule.value} rule at h={h}"
                )
            records.append(
                {
                    "lambda": lam,
                    "h": h,
                    "replication": replication,
                    "rule": rule.value,
                    "regret": max(regret, 0.0),
                    "excluded": False,
                }
            )
            if keep_allocations:
                allocations[(lam, rule.value)] = output.treatment_probability()
    return ReplicationResult(records, allocations)


@dataclass(frozen=True, eq=False)
class RiskCurve:
    """Per-h regret of both rules.

    Attributes:
        frame: Columns lambda, h, rule, mean_regret, se, n_excluded.
        log: Columns lambda, h, replication, rule, regret, excluded.
        heatmap: Columns lambda, age, sex, treatment_probability, rule at h = 0,
            or None when 0 is not on the grid.
    """

    frame: pd.DataFrame
    log: pd.DataFrame
    heatmap: Optional[pd.DataFrame] = None

    def __post_init__(self):
        """Check that every regret mean is nonnegative."""
        means = self.frame["mean_regret"].dropna()
        if (means < 0).any():
            raise ValueError("Risk curve regret means must be nonnegative")

    @classmethod
    def from_log(
        cls, log: pd.DataFrame, heatmap: Optional[pd.DataFrame] = None
    ) -> RiskCurve:
        """Aggregate a replication log into per-(λ, h, rule) means."""
        rows = []
        for (lam, h, rule), group in log.groupby(
            ["lambda", "h", "rule"], sort=False
        ):
            excluded = group["excluded"].astype(bool)
            kept = group.loc[~excluded, "regret"].to_numpy()
            se = kept.std(ddof=1) / np.sqrt(len(kept)) if len(kept) > 1 else np.nan
            rows.append(
                {
                    "lambda": lam,
                    "h": h,
                    "rule": rule,
                    "mean_regret": kept.mean() if len(kept) else np.nan,
                    "se": se,
                    "n_excluded": int(excluded.sum()),
                }
            )
        return cls(pd.DataFrame(rows), log, heatmap)

    def for_rule(self, rule: str, lam: Optional[float] = None) -> pd.DataFrame:
        """Rows of one rule, optionally restricted to one λ."""
        mask = self.frame["rule"] == rule
        if lam is not None:
            mask &= np.isclose(self.frame["lambda"], lam)
        return self.frame[mask]


def average_risk(curve: RiskCurve) -> pd.DataFrame:
    """Mean of R(Q, h) over the h grid for every λ and rule.

    The standard error pools the per-h errors, which come from independent
    replications: sqrt(Σ se²)/|grid|.
    """
    rows = []
    for (lam, rule), group in curve.frame.groupby(["lambda", "rule"], sort=False):
        rows.append(
            {
                "lambda": lam,
                "rule": rule,
                "average_regret": group["mean_regret"].mean(),
                "se": np.sqrt(np.sum(group["se"] ** 2)) / len(group),
            }
        )
    return pd.DataFrame(rows)


class RiskExperiment(LoggingMixin):
    """Run the replication protocol over a grid of local perturbations.

    Attributes:
        config: The simulation configuration.
        fitter: Optional replacement for the Tobit MLE.
    """

    def __init__(self, config: SimulateConfig, fitter: Optional[Fitter] = None):
        super().__init__()
        self.config = config
        self.fitter = fitter
        self.grid = discretize_covariates(
            TruncatedNormal(config.age_mean, config.age_sd, *config.age_bounds),
            config.sex_probability,
            config.bins,
        )
        self.f_t = DiscreteMarginal.bernoulli(config.capacity)

    def grid_index(self, h: float) -> int:
        """Position of h on the configured grid.

        Raises:
            ValueError: When h is not on the grid.
        """
        matches = np.flatnonzero(np.isclose(self.config.h_grid, h))
        if matches.size == 0:
            raise ValueError(f"h={h} is not on the configured grid")
        return int(matches[0])

    def oracle(self, h: float) -> dict[float, tuple[np.ndarray, float]]:
        """Welfare matrices at θ_nh and their maxima, one per λ."""
        theta = perturb(self.config.theta0, h, self.config.n)  # type: ignore
        levels = treatment_levels(self.f_t)
        out = {}
        for lam in self.config.lambdas:
            matrix = welfare_matrix(
                theta, self.grid.coordinates, levels, self.config.welfare_spec(lam)
            )
            report = solve_max_transport(TransportProblem(matrix, self.grid, self.f_t))
            out[lam] = (matrix, report.value)
        return out

    def replicate(
        self, h: float, keep_allocations: bool = False
    ) -> list[ReplicationResult]:
        """All replications at one h, in replication order."""
        index = self.grid_index(h)
        oracle = self.oracle(h)
        self.log.info(
            "Running %s replications at h=%s with %s workers",
            self.config.replications,
            h,
            self.config.workers,
        )
        return Parallel(n_jobs=self.config.workers)(
            delayed(run_replication)(
                self.config,
                self.grid,
                self.f_t,
                index,
                h,
                j,
                oracle,
                keep_allocations,
                self.fitter,
            )
            for j in range(self.config.replications)
        )

    def estimate_risk(self, h: float) -> pd.DataFrame:
        """R(Q, h) for both rules and every λ at one h."""
        results = self.replicate(h)
        log = pd.DataFrame([r for result in results for r in result.records])
        return RiskCurve.from_log(log).frame

    def run(self) -> RiskCurve:
        """Estimate the full risk curve and the h = 0 allocation heatmap."""
        records: list[dict[str, Any]] = []
        heatmap = None
        for h in self.config.h_grid:
            at_zero = bool(np.isclose(h, 0.0))
            results = self.replicate(h, keep_allocations=at_zero)
            records.extend(r for result in results for r in result.records)
            if at_zero:
                heatmap = self.heatmap(results)

        log = pd.DataFrame(records)
        excluded = int(log["excluded"].sum()) // (len(RULES) * len(self.config.lambdas))
        if excluded:
            self.log.warning("%s replications excluded after failed fits", excluded)
        if heatmap is None:
            self.log.info("h = 0 is not on the grid; no allocation heatmap")
        return RiskCurve.from_log(log, heatmap)

    def heatmap(self, results: list[ReplicationResult]) -> pd.DataFrame:
        """Average μ(t = 1|x) at h = 0 for both rules, plus the oracle at θ₀."""
        frames = []
        for lam in self.config.lambdas:
            oracle = oracle_rule(
                self.config.theta0,  # type: ignore
                self.grid,
                self.f_t,
                self.config.welfare_spec(lam),
                self.config.tie_mode,
            )
            probabilities = {RuleKind.ORACLE.value: oracle.treatment_probability()}
            for rule in RULES:
                kept = [
                    r.allocations[(lam, rule.value)]
                    for r in results
                    if (lam, rule.value) in r.allocations
                ]
                if kept:
                    probabilities[rule.value] = np.mean(kept, axis=0)
            for rule, probability in probabilities.items():
                frames.append(
                    pd.DataFrame(
                        {
                            "lambda": lam,
                            "age": self.grid.coordinates[:, 0],
                            "sex": self.grid.coordinates[:, 1].astype(int),
                            "treatment_probability": probability,
                            "rule": rule,
                        }
                    )
                )
        return pd.concat(frames, ignore_index=True)


def estimate_risk(config: SimulateConfig, h: float) -> pd.DataFrame:
    """R(Q, h) for both rules at one h; h must lie on config.h_grid."""
    return RiskExperiment(config).estimate_risk(h)
