"""Unit test module for command configurations."""
import dataclasses

import pytest

from policy_transport.config import (
    AssignConfig,
    ConfigFactory,
    FitConfig,
    OtConfig,
    OtMode,
    Parametrization,
    Profile,
    RuleKind,
    SimulateConfig,
    StepPolicy,
    TieMode,
    parse_yaml_args,
)
from policy_transport.exceptions import SchemaError
from policy_transport.welfare import ParamVector, WelfareSpec


def test_fit_config_defaults():
    """Test the fit command defaults."""
    config = FitConfig(data="train.csv")

    assert config.which == "fit"
    assert config.covariates == ("age", "sex")
    assert config.tau == 0.0
    assert config.intercept is False


def test_fit_config_requires_data():
    """Test a fit without data is rejected."""
    with pytest.raises(ValueError, match="data path"):
        FitConfig()


def test_fit_config_quantile_tau():
    """Test a quantile τ needs a flag column and a level in (0, 1)."""
    config = FitConfig(data="d.csv", tau="quantile:0.1", flag_column="employed")

    assert config.tau == "quantile:0.1"

    with pytest.raises(ValueError, match="flag_column"):
        FitConfig(data="d.csv", tau="quantile:0.1")

    with pytest.raises(ValueError, match="quantile"):
        FitConfig(data="d.csv", tau="quantile:1.5", flag_column="employed")


def test_fit_config_literal_tau_from_string():
    """Test a numeric τ given as a string is cast."""
    assert FitConfig(data="d.csv", tau="2.5").tau == 2.5


def test_assign_config_casts_nested_arguments():
    """Test inline θ, welfare and rules are cast to their types."""
    config = AssignConfig(
        theta={"beta": [-2.0, -3.0], "alpha": 4.0, "sigma": 10.0},
        covariate_grid={"age": [1.0, 2.0], "sex": [0.0, 1.0]},
        welfare={"lambda": 0.0, "eps_robust": 0.5},
        rules=["plug-in", "ex_post_bayes"],
        tie_mode="uniform-split",
    )

    assert isinstance(config.theta, ParamVector)
    assert config.welfare == WelfareSpec(lam=0.0, eps_robust=0.5)
    assert config.rules == (RuleKind.PLUG_IN, RuleKind.EX_POST_BAYES)
    assert config.tie_mode is TieMode.UNIFORM_SPLIT


def test_assign_config_accepts_single_rule():
    """Test a single rule name is wrapped in a tuple."""
    config = AssignConfig(fit="fit.json", target="grid.json", rules="oracle")

    assert config.rules == (RuleKind.ORACLE,)


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"target": "grid.json"}, "fit file or inline theta"),
        ({"fit": "fit.json"}, "target file or covariate_grid"),
        ({"fit": "fit.json", "target": "g.json", "capacity": 1.0}, "capacity"),
        ({"fit": "fit.json", "target": "g.json", "draws": 0}, "draws"),
        ({"fit": "fit.json", "target": "g.json", "seed": -1}, "seed"),
    ],
)
def test_assign_config_validation(kwargs, match):
    """Test missing inputs and out-of-range values are rejected."""
    with pytest.raises(ValueError, match=match):
        AssignConfig(**kwargs)


def test_simulate_config_defaults():
    """Test the default simulation design."""
    config = SimulateConfig()

    assert config.theta0.as_array().tolist() == [-2.0, -3.0, 4.0, 10.0]
    assert config.capacity == 0.75
    assert config.h_grid[0] == -2.0
    assert config.h_grid[-1] == 2.0
    assert len(config.h_grid) == 11
    assert 0.0 in config.h_grid
    assert config.lambdas == (0.0, 1.0)
    assert config.parametrization is Parametrization.SIGMA


def test_simulate_config_welfare_spec():
    """Test each λ gets zero-censored welfare with the configured ε."""
    spec = SimulateConfig(eps_robust=0.5).welfare_spec(0.0)

    assert spec == WelfareSpec(lam=0.0, eps_robust=0.5, tau=0.0, floor=0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 0},
        {"capacity": 0.0},
        {"h_grid": []},
        {"lambdas": [1.5]},
        {"eps_robust": 0.0},
        {"bins": 1},
        {"age_bounds": [10.0, 1.0]},
        {"workers": 0},
    ],
)
def test_simulate_config_validation(kwargs):
    """Test invalid simulation settings are rejected."""
    with pytest.raises(ValueError):
        SimulateConfig(**kwargs)


def test_ot_config():
    """Test mode and step policy strings are cast."""
    config = OtConfig(problem="p.json", mode="minimal-h", step_policy="open-loop")

    assert config.mode is OtMode.MINIMAL_H
    assert config.step_policy is StepPolicy.OPEN_LOOP

    with pytest.raises(ValueError):
        OtConfig()

    with pytest.raises(ValueError):
        OtConfig(problem="p.json", mode="penalized", penalty=0.0)


def test_config_factory_builds_each_command():
    """Test the factory maps command names to configurations."""
    assert ConfigFactory.from_str("fit").create_config(data="d.csv").which == "fit"
    assert ConfigFactory.from_str("ot").create_config(problem="p.json").which == "ot"
    assert ConfigFactory.SIMULATE.create_config().which == "simulate"


def test_config_factory_rejects_unknown_keys():
    """Test unknown keys are schema errors rather than silently dropped."""
    with pytest.raises(SchemaError, match="replicationz"):
        ConfigFactory.SIMULATE.create_config(replicationz=3)

    with pytest.raises(SchemaError):
        ConfigFactory.FIT.create_config(data="d.csv", which="ot")


def test_config_factory_applies_profile():
    """Test profiles set sizes that explicit keys still override."""
    desk = ConfigFactory.SIMULATE.create_config(profile="desk")
    override = ConfigFactory.SIMULATE.create_config(profile="desk", draws=7)

    assert desk.profile is Profile.DESK
    assert (desk.replications, desk.draws) == (200, 200)
    assert (override.replications, override.draws) == (200, 7)


def test_config_factory_fields():
    """Test the factory exposes the dataclass fields."""
    names = [f.name for f in ConfigFactory.OT.fields]

    assert names == [f.name for f in dataclasses.fields(OtConfig)]
    assert "problem" in names


def test_config_to_dict_is_serializable():
    """Test nested values are converted to plain types."""
    d = SimulateConfig(tie_mode="minimal-h").to_dict()

    assert d["which"] == "simulate"
    assert d["theta0"] == {"beta": [-2.0, -3.0], "alpha": 4.0, "sigma": 10.0}
    assert d["tie_mode"] == "minimal-h"
    assert d["age_bounds"] == [1.0, 10.0]


def test_enum_coercion():
    """Test members can be read from values, names and members."""
    assert RuleKind.coerce("plug_in") is RuleKind.PLUG_IN
    assert RuleKind.coerce("ex-post-bayes") is RuleKind.EX_POST_BAYES
    assert TieMode.coerce(TieMode.MINIMAL_H) is TieMode.MINIMAL_H

    with pytest.raises(KeyError):
        RuleKind.coerce("posterior")


@pytest.mark.parametrize(
    "args,expected",
    [
        (None, {}),
        ("", {}),
        ("seed: 3\nn: 50", {"seed": 3, "n": 50}),
        ('{"seed": 4}', {"seed": 4}),
        ({"seed": 5}, {"seed": 5}),
    ],
)
def test_parse_yaml_args(args, expected):
    """Test YAML strings, JSON strings, mappings and None."""
    assert parse_yaml_args(args) == expected


def test_parse_yaml_args_rejects_non_mappings():
    """Test a YAML list is not a configuration."""
    with pytest.raises(SchemaError):
        parse_yaml_args("- 1\n- 2")
