"""Configuration for every policy-transport command.

Each command has a dataclass configuration validated on construction. A
ConfigFactory maps command names to configuration classes so that the CLI, the
Airflow hook and the Airflow operators all build configurations the same way.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from os import PathLike
from typing import Any, Mapping, Optional, Union

import yaml

from .exceptions import SchemaError
from .welfare import ParamVector, WelfareSpec

StrPath = Union[str, "PathLike[str]"]

DEFAULT_THETA0 = {"beta": [-2.0, -3.0], "alpha": 4.0, "sigma": 10.0}
DEFAULT_H_GRID = tuple(round(-2.0 + 0.4 * i, 10) for i in range(11))


class FromStrEnum(Enum):
    """Access enum variants with strings ensuring uppercase."""

    @classmethod
    def from_str(cls, s: str):
        """Instantiate an Enum from a string."""
        return cls[s.replace("-", "_").upper()]

    @classmethod
    def coerce(cls, value: Any):
        """Return value as a member, accepting members, names or values."""
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            return cls.from_str(str(value))


class RuleKind(FromStrEnum):
    """Assignment rules."""

    ORACLE = "oracle"
    PLUG_IN = "plug_in"
    EX_POST_BAYES = "ex_post_bayes"


class TieMode(FromStrEnum):
    """How a rule picks a coupling from a degenerate optimal face."""

    SOLVER_VERTEX = "solver-vertex"
    UNIFORM_SPLIT = "uniform-split"
    MINIMAL_H = "minimal-h"


class OtMode(FromStrEnum):
    """Solves available to the ot command."""

    PLAIN = "plain"
    PENALIZED = "penalized"
    MINIMAL_H = "minimal-h"
    DISTANCE = "distance"


class StepPolicy(FromStrEnum):
    """Frank–Wolfe step policies."""

    CORRECTIVE = "corrective"
    OPEN_LOOP = "open-loop"


class Parametrization(FromStrEnum):
    """Coordinates in which quasi-posterior draws are Gaussian."""

    SIGMA = "sigma"
    LOG_SIGMA = "log-sigma"


class Profile(FromStrEnum):
    """Simulation size presets."""

    SMOKE = "smoke"
    DESK = "desk"
    PAPER = "paper"

    @property
    def overrides(self) -> dict[str, Any]:
        """Simulation sizes set by this profile."""
        return {
            Profile.SMOKE: {"replications": 10, "draws": 20},
            Profile.DESK: {"replications": 200, "draws": 200},
            Profile.PAPER: {"replications": 2000, "draws": 2000},
        }[self]


def parse_yaml_args(args: Optional[Union[str, Mapping[str, Any]]]) -> dict[str, Any]:
    """Parse configuration arguments.

    This means:
        - When args is a string, we treat it as a YAML (or JSON) dict str.
        - If it's already a mapping, we just return a copy of it.
        - Otherwise (it's None), we return an empty dictionary.
    """
    if isinstance(args, str):
        parsed = yaml.safe_load(args)
        if parsed is None:
            return {}
        if not isinstance(parsed, dict):
            raise SchemaError("Configuration must be a mapping")
        return parsed
    elif isinstance(args, Mapping):
        return dict(args)
    else:
        return {}


def _param_vector(value: Union[ParamVector, Mapping[str, Any]]) -> ParamVector:
    if isinstance(value, ParamVector):
        return value
    return ParamVector.from_dict(value)


def _welfare_spec(value: Union[WelfareSpec, Mapping[str, Any]]) -> WelfareSpec:
    if isinstance(value, WelfareSpec):
        return value
    return WelfareSpec.from_dict(value)


@dataclass
class BaseConfig:
    """Arguments shared by all commands."""

    seed: int = 0
    out: Optional[StrPath] = None
    which: str = dataclasses.field(default="base", init=False)

    def __post_init__(self):
        """Validate the seed."""
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")

    def to_dict(self) -> dict[str, Any]:
        """A JSON-serializable view of the resolved configuration."""
        d: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (ParamVector, WelfareSpec)):
                value = value.to_dict()
            elif isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = [v.value if isinstance(v, Enum) else v for v in value]
            elif isinstance(value, PathLike):
                value = str(value)
            d[f.name] = value
        return d


@dataclass
class FitConfig(BaseConfig):
    """Arguments of the fit command.

    Attributes:
        data: CSV with an outcome, a treatment and covariate columns.
        outcome: Outcome column.
        treatment: Treatment column.
        covariates: Covariate columns, in coefficient order.
        column_map: Renames applied to the CSV header before anything else.
        tau: A literal censor point or "quantile:<q>".
        flag_column: Rows with this column equal to 1 define the τ quantile.
        intercept: Whether to include an intercept.
    """

    data: Optional[StrPath] = None
    outcome: str = "y"
    treatment: str = "t"
    covariates: tuple[str, ...] = ("age", "sex")
    column_map: Optional[dict[str, str]] = None
    tau: Union[float, str] = 0.0
    flag_column: Optional[str] = None
    intercept: bool = False
    tol: float = 1e-8
    max_iterations: int = 200
    which: str = dataclasses.field(default="fit", init=False)

    def __post_init__(self):
        """Validate the data path, τ rule and optimizer settings."""
        super().__post_init__()
        if self.data is None:
            raise ValueError("fit requires a data path")
        self.covariates = tuple(self.covariates)
        if isinstance(self.tau, str) and not self.tau.startswith("quantile:"):
            self.tau = float(self.tau)
        if isinstance(self.tau, str):
            q = float(self.tau.split(":", 1)[1])
            if not 0.0 < q < 1.0:
                raise ValueError(f"tau quantile must lie in (0, 1), got {q}")
            if self.flag_column is None:
                raise ValueError("A quantile tau requires a flag_column")
        if self.tol <= 0 or self.max_iterations < 1:
            raise ValueError("tol must be positive and max_iterations at least 1")


@dataclass
class AssignConfig(BaseConfig):
    """Arguments of the assign command.

    Either a fitted model (fit) or inline parameters (theta) is required, and
    either a covariate marginal file (target) or an inline covariate_grid.
    """

    fit: Optional[StrPath] = None
    theta: Optional[Union[ParamVector, dict[str, Any]]] = None
    target: Optional[StrPath] = None
    covariate_grid: Optional[dict[str, list[float]]] = None
    covariates: Optional[tuple[str, ...]] = None
    capacity: float = 0.5
    welfare: Union[WelfareSpec, dict[str, Any]] = dataclasses.field(
        default_factory=WelfareSpec
    )
    rules: tuple[RuleKind, ...] = (RuleKind.PLUG_IN,)
    tie_mode: TieMode = TieMode.SOLVER_VERTEX
    draws: int = 200
    which: str = dataclasses.field(default="assign", init=False)

    def __post_init__(self):
        """Cast nested arguments and validate capacity."""
        super().__post_init__()
        if self.fit is None and self.theta is None:
            raise ValueError("assign requires either a fit file or inline theta")
        if self.target is None and self.covariate_grid is None:
            raise ValueError("assign requires either a target file or covariate_grid")
        if not 0.0 < self.capacity < 1.0:
            raise ValueError(f"capacity must lie in (0, 1), got {self.capacity}")
        if self.theta is not None:
            self.theta = _param_vector(self.theta)
        if self.covariates is not None:
            self.covariates = tuple(self.covariates)
        self.welfare = _welfare_spec(self.welfare)
        rules = (self.rules,) if isinstance(self.rules, (str, RuleKind)) else self.rules
        self.rules = tuple(RuleKind.coerce(r) for r in rules)
        self.tie_mode = TieMode.coerce(self.tie_mode)
        if self.draws < 1:
            raise ValueError("draws must be at least 1")


@dataclass
class SimulateConfig(BaseConfig):
    """Arguments of the simulate command.

    Defaults reproduce the local-asymptotic design: θ₀ = (β = (-2, -3), α = 4,
    σ = 10), 75% capacity, ε = 0.8 and an h grid from -2 to 2 in steps of 0.4.
    """

    theta0: Union[ParamVector, dict[str, Any]] = dataclasses.field(
        default_factory=lambda: dict(DEFAULT_THETA0)
    )
    n: int = 200
    replications: int = 10
    draws: int = 20
    capacity: float = 0.75
    h_grid: tuple[float, ...] = DEFAULT_H_GRID
    lambdas: tuple[float, ...] = (0.0, 1.0)
    eps_robust: float = 0.8
    bins: int = 99
    age_mean: float = 4.0
    age_sd: float = 2.0
    age_bounds: tuple[float, float] = (1.0, 10.0)
    sex_probability: float = 0.5
    treatment_probability: float = 0.5
    tie_mode: TieMode = TieMode.SOLVER_VERTEX
    parametrization: Parametrization = Parametrization.SIGMA
    workers: int = 1
    profile: Optional[Profile] = None
    which: str = dataclasses.field(default="simulate", init=False)

    def __post_init__(self):
        """Validate sizes and cast nested arguments."""
        super().__post_init__()
        self.theta0 = _param_vector(self.theta0)
        self.h_grid = tuple(float(h) for h in self.h_grid)
        self.lambdas = tuple(float(lam) for lam in self.lambdas)
        self.age_bounds = (float(self.age_bounds[0]), float(self.age_bounds[1]))
        self.tie_mode = TieMode.coerce(self.tie_mode)
        self.parametrization = Parametrization.coerce(self.parametrization)
        if self.profile is not None:
            self.profile = Profile.coerce(self.profile)

        if min(self.n, self.replications, self.draws, self.workers) < 1:
            raise ValueError("n, replications, draws and workers must be at least 1")
        if not 0.0 < self.capacity < 1.0:
            raise ValueError(f"capacity must lie in (0, 1), got {self.capacity}")
        if not self.h_grid:
            raise ValueError("h_grid must not be empty")
        if not self.lambdas or any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ValueError("lambdas must be a nonempty list of values in [0, 1]")
        if self.eps_robust <= 0:
            raise ValueError("eps_robust must be positive")
        if self.bins < 2:
            raise ValueError("bins must be at least 2")
        if not self.age_bounds[0] < self.age_bounds[1] or self.age_sd <= 0:
            raise ValueError("age_bounds must be increasing and age_sd positive")

    def welfare_spec(self, lam: float) -> WelfareSpec:
        """The zero-censored welfare configuration for one λ."""
        return WelfareSpec(lam=lam, eps_robust=self.eps_robust, tau=0.0, floor=0.0)


@dataclass
class OtConfig(BaseConfig):
    """Arguments of the ot command.

    Attributes:
        problem: JSON file with a transport problem, or with two marginals and a
            metric in distance mode.
        mode: plain, penalized, minimal-h or distance.
        penalty: ε of the penalized solve.
        scale: Weight on the welfare term of the penalized solve.
        reference: Optional coupling JSON; F_X ⊗ F_T by default.
        treatment_weight: Treatment-level distance of the default metric.
    """

    problem: Optional[StrPath] = None
    mode: OtMode = OtMode.PLAIN
    penalty: float = 1e-3
    scale: float = 1.0
    reference: Optional[StrPath] = None
    treatment_weight: float = 1.0
    step_policy: StepPolicy = StepPolicy.CORRECTIVE
    max_iterations: int = 10_000
    which: str = dataclasses.field(default="ot", init=False)

    def __post_init__(self):
        """Validate the problem path and solve settings."""
        super().__post_init__()
        if self.problem is None:
            raise ValueError("ot requires a problem path")
        self.mode = OtMode.coerce(self.mode)
        self.step_policy = StepPolicy.coerce(self.step_policy)
        if self.mode is OtMode.PENALIZED and self.penalty <= 0:
            raise ValueError("penalty must be positive")


class ConfigFactory(FromStrEnum):
    """Produce configurations for each command."""

    FIT = FitConfig
    ASSIGN = AssignConfig
    SIMULATE = SimulateConfig
    OT = OtConfig

    def create_config(self, *args, **kwargs) -> BaseConfig:
        """Instantiate a command config, rejecting unknown keys."""
        known = {f.name for f in self.fields if f.init}
        unknown = sorted(set(kwargs) - known)
        if unknown:
            raise SchemaError(
                f"Unknown keys for {self.name.lower()} configuration: {unknown}"
            )
        if self is ConfigFactory.SIMULATE and kwargs.get("profile") is not None:
            profile = Profile.coerce(kwargs["profile"])
            kwargs = {**profile.overrides, **kwargs}
        config = self.value(**kwargs)
        return config

    @property
    def fields(self) -> tuple[dataclasses.Field[Any], ...]:
        """Return the current configuration's fields."""
        return dataclasses.fields(self.value)
