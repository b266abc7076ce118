"""JSON schemas for configuration files and file artifacts."""
from __future__ import annotations

from typing import Any

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from .exceptions import SchemaError

NUMBER = {"type": "number"}
NUMBERS = {"type": "array", "items": NUMBER}
MATRIX = {"type": "array", "items": NUMBERS, "minItems": 1}
STRINGS = {"type": "array", "items": {"type": "string"}}
NULLABLE_STRING = {"type": ["string", "null"]}
SEED = {"type": "integer", "minimum": 0}

PARAM_VECTOR = {
    "type": "object",
    "properties": {
        "beta": {"oneOf": [NUMBER, NUMBERS]},
        "alpha": NUMBER,
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "intercept": {"type": ["number", "null"]},
    },
    "required": ["beta", "alpha", "sigma"],
    "additionalProperties": False,
}

WELFARE_SPEC = {
    "type": "object",
    "properties": {
        "lambda": {"type": "number", "minimum": 0, "maximum": 1},
        "lam": {"type": "number", "minimum": 0, "maximum": 1},
        "eps_robust": {"type": "number", "exclusiveMinimum": 0},
        "tau": NUMBER,
        "floor": {"oneOf": [NUMBER, NUMBERS, {"type": "null"}]},
    },
    "additionalProperties": False,
}

MARGINAL = {
    "type": "object",
    "properties": {
        "masses": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0},
            "minProperties": 1,
        },
        "coordinates": {"type": "object", "additionalProperties": NUMBERS},
        "coordinate_names": STRINGS,
    },
    "required": ["masses"],
    "additionalProperties": False,
}

METRIC = {
    "type": "object",
    "properties": {
        "distances": MATRIX,
        "points": STRINGS,
        "treatment_weight": {"type": "number", "minimum": 0},
        "standardize": {"type": "boolean"},
    },
    "additionalProperties": False,
}

COUPLING = {
    "type": "object",
    "properties": {
        "bins": STRINGS,
        "levels": STRINGS,
        "mass": MATRIX,
        "source": MARGINAL,
        "target": MARGINAL,
    },
    "required": ["bins", "levels", "mass", "source", "target"],
    "additionalProperties": False,
}

PROBLEM = {
    "type": "object",
    "properties": {
        "source": MARGINAL,
        "target": MARGINAL,
        "welfare_matrix": MATRIX,
        "metric": METRIC,
    },
    "required": ["source", "target", "welfare_matrix"],
    "additionalProperties": False,
}

DISTANCE = {
    "type": "object",
    "properties": {"mu": MARGINAL, "nu": MARGINAL, "metric": METRIC},
    "required": ["mu", "nu", "metric"],
    "additionalProperties": False,
}

FIT_RESULT = {
    "type": "object",
    "properties": {
        "theta_hat": PARAM_VECTOR,
        "fisher": MATRIX,
        "loglik": NUMBER,
        "n": {"type": "integer", "minimum": 1},
        "converged": {"type": "boolean"},
    },
    "required": ["theta_hat", "fisher", "loglik", "n", "converged"],
}

BASE_CONFIG = {"seed": SEED, "out": NULLABLE_STRING}

FIT_CONFIG = {
    "type": "object",
    "properties": {
        **BASE_CONFIG,
        "data": {"type": "string"},
        "outcome": {"type": "string"},
        "treatment": {"type": "string"},
        "covariates": STRINGS,
        "column_map": {
            "type": ["object", "null"],
            "additionalProperties": {"type": "string"},
        },
        "tau": {
            "oneOf": [NUMBER, {"type": "string", "pattern": r"^quantile:[0-9.eE+-]+$"}]
        },
        "flag_column": NULLABLE_STRING,
        "intercept": {"type": "boolean"},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iterations": {"type": "integer", "minimum": 1},
    },
    "required": ["data"],
    "additionalProperties": False,
}

RULE_KINDS = {
    "enum": ["oracle", "plug_in", "plug-in", "ex_post_bayes", "ex-post-bayes"]
}

ASSIGN_CONFIG = {
    "type": "object",
    "properties": {
        **BASE_CONFIG,
        "fit": NULLABLE_STRING,
        "theta": {"oneOf": [PARAM_VECTOR, {"type": "null"}]},
        "target": NULLABLE_STRING,
        "covariate_grid": {
            "type": ["object", "null"],
            "additionalProperties": {**NUMBERS, "minItems": 1},
        },
        "covariates": {"oneOf": [STRINGS, {"type": "null"}]},
        "capacity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "welfare": WELFARE_SPEC,
        "rules": {"oneOf": [RULE_KINDS, {"type": "array", "items": RULE_KINDS}]},
        "tie_mode": {"enum": ["solver-vertex", "uniform-split", "minimal-h"]},
        "draws": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SIMULATE_CONFIG = {
    "type": "object",
    "properties": {
        **BASE_CONFIG,
        "theta0": PARAM_VECTOR,
        "n": {"type": "integer", "minimum": 1},
        "replications": {"type": "integer", "minimum": 1},
        "draws": {"type": "integer", "minimum": 1},
        "capacity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "h_grid": {**NUMBERS, "minItems": 1},
        "lambdas": {
            "type": "array",
            "items": {"type": "number", "minimum": 0, "maximum": 1},
            "minItems": 1,
        },
        "eps_robust": {"type": "number", "exclusiveMinimum": 0},
        "bins": {"type": "integer", "minimum": 2},
        "age_mean": NUMBER,
        "age_sd": {"type": "number", "exclusiveMinimum": 0},
        "age_bounds": {**NUMBERS, "minItems": 2, "maxItems": 2},
        "sex_probability": {
            "type": "number",
            "exclusiveMinimum": 0,
            "exclusiveMaximum": 1,
        },
        "treatment_probability": {
            "type": "number",
            "exclusiveMinimum": 0,
            "exclusiveMaximum": 1,
        },
        "tie_mode": {"enum": ["solver-vertex", "uniform-split", "minimal-h"]},
        "parametrization": {"enum": ["sigma", "log-sigma"]},
        "workers": {"type": "integer", "minimum": 1},
        "profile": {"enum": ["smoke", "desk", "paper", None]},
    },
    "additionalProperties": False,
}

OT_CONFIG = {
    "type": "object",
    "properties": {
        **BASE_CONFIG,
        "problem": {"type": "string"},
        "mode": {"enum": ["plain", "penalized", "minimal-h", "distance"]},
        "penalty": {"type": "number", "exclusiveMinimum": 0},
        "scale": NUMBER,
        "reference": NULLABLE_STRING,
        "treatment_weight": {"type": "number", "minimum": 0},
        "step_policy": {"enum": ["corrective", "open-loop"]},
        "max_iterations": {"type": "integer", "minimum": 1},
    },
    "required": ["problem"],
    "additionalProperties": False,
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "fit": FIT_CONFIG,
    "assign": ASSIGN_CONFIG,
    "simulate": SIMULATE_CONFIG,
    "ot": OT_CONFIG,
    "marginal": MARGINAL,
    "coupling": COUPLING,
    "problem": PROBLEM,
    "distance": DISTANCE,
    "fit_result": FIT_RESULT,
}


def validate(instance: Any, schema: str) -> None:
    """Validate instance against a named schema.

    Raises:
        SchemaError: With the most relevant validation message.
    """
    try:
        validator = Draft7Validator(SCHEMAS[schema])
    except KeyError:
        raise SchemaError(f"Unknown schema: {schema}") from None
    error = best_match(validator.iter_errors(instance))
    if error is not None:
        location = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise SchemaError(f"Invalid {schema} input at {location}: {error.message}")
