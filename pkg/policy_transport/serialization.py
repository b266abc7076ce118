"""Reading and writing configuration files, datasets and result artifacts.

JSON artifacts:
    marginal: {"masses": {label: mass}, "coordinates": {label: [...]},
        "coordinate_names": [...]}
    coupling: {"bins": [...], "levels": [...], "mass": [[...]] (row-major),
        "source": marginal, "target": marginal}
    problem: {"source": marginal, "target": marginal, "welfare_matrix": [[...]],
        "metric": {...}}
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import platform
from os import PathLike
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy
import yaml

from .__version__ import __title__, __version__
from .config import BaseConfig
from .exceptions import SchemaError
from .rules import RuleOutput
from .schemas import validate
from .tobit import Dataset, TobitFit
from .transport import (
    Coupling,
    DiscreteMarginal,
    GroundMetric,
    SolveReport,
    TransportProblem,
)

StrPath = Union[str, "PathLike[str]"]

log = logging.getLogger(__name__)


def load_config_file(path: StrPath) -> dict[str, Any]:
    """Load a JSON or YAML configuration file into a mapping."""
    try:
        with open(path, encoding="utf-8") as f:
            content = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise SchemaError(f"Cannot parse configuration file {path}: {e}") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise SchemaError(f"Configuration file {path} must contain a mapping")
    return content


def read_json(path: StrPath, schema: Optional[str] = None) -> Any:
    """Read a JSON file, validating it against a named schema when given."""
    try:
        with open(path, encoding="utf-8") as f:
            content = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Malformed JSON in {path}: {e}") from e
    if schema is not None:
        validate(content, schema)
    return content


def write_json(content: Any, path: StrPath) -> Path:
    """Write content as indented JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(content, f, indent=2, default=_json_default)
        f.write("\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, PathLike):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_serializable(content: Any) -> Any:
    """Content with numpy scalars, arrays and paths replaced by JSON types."""
    return json.loads(json.dumps(content, default=_json_default))


def write_frame(frame: pd.DataFrame, path: StrPath) -> Path:
    """Write a DataFrame as comma-separated UTF-8 with a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g", encoding="utf-8")
    return path


def marginal_to_dict(marginal: DiscreteMarginal) -> dict[str, Any]:
    """Serialize a marginal as label-keyed maps."""
    return {
        "masses": marginal.as_mapping(),
        "coordinates": {
            p: row.tolist() for p, row in zip(marginal.points, marginal.coordinates)
        },
        "coordinate_names": list(marginal.coordinate_names),
    }


def marginal_from_dict(d: Mapping[str, Any]) -> DiscreteMarginal:
    """Inverse of marginal_to_dict; coordinates default to point indices."""
    try:
        return DiscreteMarginal.from_mapping(
            d["masses"], d.get("coordinates"), d.get("coordinate_names", ())
        )
    except KeyError as e:
        raise SchemaError(f"Marginal coordinates are missing point {e}") from e


def coupling_to_dict(coupling: Coupling) -> dict[str, Any]:
    """Serialize a coupling as a dense row-major mass table with labels."""
    return {
        "bins": list(coupling.source.points),
        "levels": list(coupling.target.points),
        "mass": coupling.mass.tolist(),
        "source": marginal_to_dict(coupling.source),
        "target": marginal_to_dict(coupling.target),
    }


def coupling_from_dict(d: Mapping[str, Any]) -> Coupling:
    """Inverse of coupling_to_dict."""
    source = marginal_from_dict(d["source"])
    target = marginal_from_dict(d["target"])
    if list(d["bins"]) != list(source.points) or list(d["levels"]) != list(
        target.points
    ):
        raise SchemaError("Coupling labels do not match its marginals")
    return Coupling(np.asarray(d["mass"], dtype=float), source, target)


def problem_to_dict(problem: TransportProblem) -> dict[str, Any]:
    """Serialize a transport problem."""
    return {
        "source": marginal_to_dict(problem.source),
        "target": marginal_to_dict(problem.target),
        "welfare_matrix": problem.welfare_matrix.tolist(),
    }


def problem_from_dict(d: Mapping[str, Any]) -> TransportProblem:
    """Inverse of problem_to_dict; a metric entry is ignored here."""
    return TransportProblem(
        np.asarray(d["welfare_matrix"], dtype=float),
        marginal_from_dict(d["source"]),
        marginal_from_dict(d["target"]),
    )


def metric_from_dict(
    d: Optional[Mapping[str, Any]],
    source: Optional[DiscreteMarginal] = None,
    target: Optional[DiscreteMarginal] = None,
    treatment_weight: float = 1.0,
) -> GroundMetric:
    """An explicit distance table, or the product metric on source × target."""
    d = d or {}
    if "distances" in d:
        return GroundMetric(np.asarray(d["distances"], dtype=float), d.get("points"))
    if source is None or target is None:
        raise SchemaError("A metric needs explicit distances without marginals")
    return GroundMetric.product(
        source,
        target,
        d.get("treatment_weight", treatment_weight),
        d.get("standardize", True),
    )


def report_to_dict(report: SolveReport) -> dict[str, Any]:
    """Serialize a solve report."""
    d: dict[str, Any] = {
        "coupling": coupling_to_dict(report.coupling),
        "value": report.value,
        "iterations": report.iterations,
        "status": report.status.value,
        "gap": report.gap,
        "objective": report.objective,
    }
    if report.potentials is not None:
        u, v = report.potentials
        d["potentials"] = {"u": u.tolist(), "v": v.tolist()}
    return d


def rule_output_to_dict(output: RuleOutput) -> dict[str, Any]:
    """Serialize a rule's coupling and metadata."""
    theta = output.theta_used
    return {
        "rule_kind": output.rule_kind.value,
        "tie_mode": output.tie_mode.value,
        "theta_used": theta if isinstance(theta, dict) else theta.to_dict(),
        "welfare_at_solution": output.welfare_at_solution,
        "coupling": coupling_to_dict(output.coupling),
    }


def write_fit(fit: TobitFit, path: StrPath) -> Path:
    """Write a fit as JSON."""
    return write_json(fit.to_dict(), path)


def read_fit(path: StrPath) -> TobitFit:
    """Read a fit written by write_fit."""
    return TobitFit.from_dict(read_json(path, "fit_result"))


def resolve_tau(
    frame: pd.DataFrame,
    outcome: str,
    tau: Union[float, str],
    flag_column: Optional[str],
) -> float:
    """A literal τ, or the q-quantile of the outcome among rows flagged with 1."""
    if not isinstance(tau, str):
        return float(tau)
    q = float(tau.split(":", 1)[1])
    if flag_column is None or flag_column not in frame:
        raise SchemaError(f"Quantile tau needs the flag column {flag_column!r}")
    flagged = frame.loc[frame[flag_column] == 1, outcome].dropna()
    if flagged.empty:
        raise SchemaError(f"No rows with {flag_column} = 1 to compute tau from")
    return float(np.quantile(flagged.to_numpy(dtype=float), q))


def read_dataset(
    path: StrPath,
    outcome: str = "y",
    treatment: str = "t",
    covariates: Sequence[str] = ("age", "sex"),
    column_map: Optional[Mapping[str, str]] = None,
    tau: Union[float, str] = 0.0,
    flag_column: Optional[str] = None,
) -> Dataset:
    """Load a training CSV into a Dataset.

    Columns are renamed with column_map first. Missing outcomes and outcomes
    below τ are recorded at τ; rows missing a treatment or covariate are dropped.

    Raises:
        SchemaError: When the file cannot be parsed or a column is missing.
    """
    try:
        frame = pd.read_csv(path, sep=",", encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SchemaError(f"Cannot parse CSV {path}: {e}") from e
    if column_map:
        frame = frame.rename(columns=dict(column_map))

    required = [outcome, treatment, *covariates]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"CSV {path} is missing columns: {missing}")
    try:
        frame[required] = frame[required].apply(pd.to_numeric)
    except ValueError as e:
        raise SchemaError(f"CSV {path} has non-numeric entries: {e}") from e

    resolved = resolve_tau(frame, outcome, tau, flag_column)
    incomplete = frame[[treatment, *covariates]].isna().any(axis=1)
    if incomplete.any():
        log.warning(
            "Dropping %s rows with missing treatment or covariates", incomplete.sum()
        )
        frame = frame.loc[~incomplete]

    y = frame[outcome].to_numpy(dtype=float)
    y = np.where(np.isnan(y) | (y < resolved), resolved, y)
    return Dataset(
        y,
        frame[list(covariates)].to_numpy(dtype=float),
        frame[treatment].to_numpy(dtype=float),
        resolved,
        tuple(covariates),
        treatment,
    )


def run_manifest(config: BaseConfig, **extra: Any) -> dict[str, Any]:
    """The resolved configuration with library versions and a UTC timestamp."""
    return {
        "command": config.which,
        "config": config.to_dict(),
        "created_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        "versions": {
            __title__: __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        **extra,
    }
