"""Oracle, plug-in and ex-post Bayes assignment rules, welfare and regret.

Every rule is one transport solve: the welfare matrix over bins × levels is built
from a parameter (or averaged over posterior draws) and the coupling of F_X and F_T
maximizing Σ w·μ is returned. When the optimum is not unique, the tie mode decides
which optimal coupling to report.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from .config import Parametrization, RuleKind, TieMode
from .exceptions import NumericalFailure
from .tobit import TobitFit, sample_quasi_posterior
from .transport import (
    Coupling,
    DiscreteMarginal,
    GroundMetric,
    SolveReport,
    TransportProblem,
    minimal_h_selection,
    solve_max_transport,
)
from .welfare import ParamVector, WelfareSpec, average_welfare_matrix, welfare_matrix

# Reduced costs within this multiple of the welfare scale mark a cell as tight.
TIGHT_TOLERANCE = 1e-9

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RuleOutput:
    """The coupling chosen by a rule and how it was obtained.

    Attributes:
        coupling: The allocation μ over bins × levels.
        rule_kind: Which rule produced it.
        theta_used: The parameter of a plug-in or oracle rule, or a summary of the
            posterior draws of an ex-post Bayes rule.
        welfare_at_solution: Σ w·μ under the welfare matrix the rule maximized.
        welfare_matrix: That matrix.
        tie_mode: How ties between optimal couplings were resolved.
        report: The underlying transport solve.
    """

    coupling: Coupling
    rule_kind: RuleKind
    theta_used: Union[ParamVector, dict[str, Any]]
    welfare_at_solution: float
    welfare_matrix: np.ndarray = field(repr=False)
    tie_mode: TieMode = TieMode.SOLVER_VERTEX
    report: Optional[SolveReport] = field(default=None, repr=False)

    def allocation_frame(self) -> pd.DataFrame:
        """One row per (bin, level): coordinates, mass, μ(t|x) and the bin's contrast.

        The contrast is the gain of the last level over the first in the welfare
        matrix the rule maximized, repeated on every level row of a bin.
        """
        grid, levels = self.coupling.source, self.coupling.target
        conditional = self.coupling.conditional()
        bins, arms = np.meshgrid(
            np.arange(len(grid)), np.arange(len(levels)), indexing="ij"
        )
        bins, arms = bins.ravel(), arms.ravel()
        frame = pd.DataFrame(
            {
                "bin": np.asarray(grid.points, dtype=object)[bins],
                "level": np.asarray(levels.points, dtype=object)[arms],
            }
        )
        for k, name in enumerate(grid.coordinate_names):
            frame[name] = grid.coordinates[bins, k]
        frame["mass"] = self.coupling.mass.ravel()
        frame["conditional_probability"] = conditional.ravel()
        contrast = self.welfare_matrix[:, -1] - self.welfare_matrix[:, 0]
        frame["contrast"] = contrast[bins]
        return frame

    def treatment_probability(self, level: int = -1) -> np.ndarray:
        """μ(t|x) of one level for every bin; the last level by default."""
        return self.coupling.conditional()[:, level]


def treatment_levels(f_t: DiscreteMarginal) -> np.ndarray:
    """Numeric treatment levels: the first coordinate of each F_T point."""
    return np.asarray(f_t.coordinates, dtype=float)[:, 0]


def build_problem(
    matrix: np.ndarray, grid: DiscreteMarginal, f_t: DiscreteMarginal
) -> TransportProblem:
    """Wrap a welfare matrix into a transport problem."""
    return TransportProblem(matrix, grid, f_t)


def split_ties_uniformly(
    problem: TransportProblem, report: SolveReport
) -> Optional[Coupling]:
    """Spread residual capacity proportionally to F_X over the tied bins.

    Tight cells have zero reduced cost under the optimal potentials, so any coupling
    supported on them is optimal. Bins with one tight level get all their mass there.
    When the remaining bins share a single set S of tight levels, each receives
    F_X(x)·r_t / F_X(remaining) of the residual capacity r_t of every level t in S.
    Returns None when the tight cells do not have that structure.
    """
    if report.potentials is None:
        return None
    u, v = report.potentials
    w = problem.welfare_matrix
    scale = max(1.0, float(np.abs(w).max()))
    tight = np.abs(w - u[:, None] - v[None, :]) <= TIGHT_TOLERANCE * scale
    f_x, f_t = problem.source.masses, problem.target.masses

    mass = np.zeros_like(w)
    forced = tight.sum(axis=1) == 1
    mass[forced] = tight[forced] * f_x[forced, None]
    residual = f_t - mass.sum(axis=0)
    remaining = ~forced & (f_x > 0)
    tolerance = TIGHT_TOLERANCE * scale

    if np.any(residual < -tolerance) or np.any(tight.sum(axis=1) == 0):
        return None
    if not remaining.any():
        if np.any(np.abs(residual) > tolerance):
            return None
        return Coupling(mass, problem.source, problem.target)

    patterns = np.unique(tight[remaining], axis=0)
    if len(patterns) != 1:
        return None
    pattern = patterns[0]
    if np.any(np.abs(residual[~pattern]) > tolerance):
        return None

    residual = np.where(pattern, np.maximum(residual, 0.0), 0.0)
    share = f_x[remaining] / f_x[remaining].sum()
    mass[remaining] = share[:, None] * residual[None, :]
    try:
        return Coupling(mass, problem.source, problem.target)
    except ValueError:
        return None


def resolve_ties(
    problem: TransportProblem,
    report: SolveReport,
    tie_mode: TieMode,
    metric: Optional[GroundMetric] = None,
) -> Coupling:
    """Choose one optimal coupling according to tie_mode."""
    if tie_mode is TieMode.SOLVER_VERTEX:
        return report.coupling

    reference = Coupling.independent(problem.source, problem.target)
    if tie_mode is TieMode.UNIFORM_SPLIT:
        coupling = split_ties_uniformly(problem, report)
        if coupling is not None:
            return coupling
        log.warning(
            "Tied cells have no common level pattern; selecting the coupling "
            "closest to F_X ⊗ F_T on the optimal face instead"
        )
    return minimal_h_selection(problem, reference, metric)


def _solve_rule(
    matrix: np.ndarray,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    rule_kind: RuleKind,
    theta_used: Union[ParamVector, dict[str, Any]],
    tie_mode: TieMode,
    metric: Optional[GroundMetric],
) -> RuleOutput:
    problem = build_problem(matrix, grid, f_t)
    report = solve_max_transport(problem)
    if not report.optimal:
        raise NumericalFailure(f"Transport solve for the {rule_kind.value} rule failed")
    coupling = resolve_ties(problem, report, tie_mode, metric)
    return RuleOutput(
        coupling=coupling,
        rule_kind=rule_kind,
        theta_used=theta_used,
        welfare_at_solution=problem.value(coupling.mass),
        welfare_matrix=problem.welfare_matrix,
        tie_mode=tie_mode,
        report=report,
    )


def oracle_rule(
    theta: ParamVector,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    spec: WelfareSpec,
    tie_mode: TieMode = TieMode.SOLVER_VERTEX,
    metric: Optional[GroundMetric] = None,
) -> RuleOutput:
    """The welfare-maximizing coupling at the true parameter."""
    matrix = welfare_matrix(theta, grid.coordinates, treatment_levels(f_t), spec)
    return _solve_rule(matrix, grid, f_t, RuleKind.ORACLE, theta, tie_mode, metric)


def plug_in_rule(
    fit: TobitFit,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    spec: WelfareSpec,
    tie_mode: TieMode = TieMode.SOLVER_VERTEX,
    metric: Optional[GroundMetric] = None,
) -> RuleOutput:
    """The welfare-maximizing coupling at the point estimate θ̂.

    Raises:
        NumericalFailure: When the fit did not converge.
    """
    if not fit.converged:
        raise NumericalFailure("The plug-in rule requires a converged fit")
    theta = fit.theta_hat
    matrix = welfare_matrix(theta, grid.coordinates, treatment_levels(f_t), spec)
    return _solve_rule(matrix, grid, f_t, RuleKind.PLUG_IN, theta, tie_mode, metric)


def ex_post_bayes_rule(
    fit: TobitFit,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    spec: WelfareSpec,
    L: int = 200,
    rng: Optional[np.random.Generator] = None,
    tie_mode: TieMode = TieMode.SOLVER_VERTEX,
    metric: Optional[GroundMetric] = None,
    draws: Optional[np.ndarray] = None,
    parametrization: Parametrization = Parametrization.SIGMA,
) -> RuleOutput:
    """The coupling maximizing welfare averaged over quasi-posterior draws.

    Args:
        fit: A converged Tobit fit seeding N(θ̂, (n·Î)⁻¹).
        grid: Covariate marginal F_X.
        f_t: Treatment marginal F_T.
        spec: Welfare configuration.
        L: Number of draws.
        rng: Seeded generator for the draws.
        tie_mode: Tie resolution.
        metric: Ground metric for penalized tie modes.
        draws: Precomputed (L, k) draws; when given, rng and L are ignored so the
            same draws can serve several welfare configurations.
        parametrization: Quasi-posterior parametrization when drawing.
    """
    if draws is None:
        if L < 1:
            raise ValueError(f"L must be at least 1, got {L}")
        if rng is None:
            raise ValueError("An ex-post Bayes rule needs a seeded generator or draws")
        draws = sample_quasi_posterior(fit, L, rng, parametrization)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))

    matrix = average_welfare_matrix(
        draws,
        grid.coordinates,
        treatment_levels(f_t),
        spec,
        intercept=fit.theta_hat.has_intercept,
    )
    summary = {
        "draws": len(draws),
        "posterior_mean": ParamVector.from_array(
            draws.mean(axis=0), fit.theta_hat.has_intercept
        ).to_dict(),
    }
    return _solve_rule(
        matrix, grid, f_t, RuleKind.EX_POST_BAYES, summary, tie_mode, metric
    )


def welfare_of(
    theta: ParamVector, coupling: Coupling, grid: DiscreteMarginal, spec: WelfareSpec
) -> float:
    """W(θ, μ) = Σ w_R(θ, x, t)·μ(x, t)."""
    matrix = welfare_matrix(
        theta, grid.coordinates, treatment_levels(coupling.target), spec
    )
    return float(np.sum(matrix * coupling.mass))


def regret(
    theta: ParamVector,
    coupling: Coupling,
    grid: DiscreteMarginal,
    f_t: DiscreteMarginal,
    spec: WelfareSpec,
    oracle_value: Optional[float] = None,
) -> float:
    """W*(θ) - W(θ, μ); pass oracle_value to reuse a computed maximum."""
    if oracle_value is None:
        oracle_value = oracle_rule(theta, grid, f_t, spec).welfare_at_solution
    return oracle_value - welfare_of(theta, coupling, grid, spec)


def allocation_difference(first: RuleOutput, second: RuleOutput) -> pd.DataFrame:
    """Per-cell differences of μ(t|x) between two rules on the same grid."""
    left = first.allocation_frame()
    right = second.allocation_frame()
    frame = left.drop(columns=["mass", "conditional_probability", "contrast"])
    frame[f"{first.rule_kind.value}_probability"] = left["conditional_probability"]
    frame[f"{second.rule_kind.value}_probability"] = right["conditional_probability"]
    frame["difference"] = (
        left["conditional_probability"] - right["conditional_probability"]
    )
    return frame
