"""Unit test module for assignment rules, tie resolution and regret."""
import numpy as np
import pandas as pd
import pytest

from policy_transport.config import RuleKind, TieMode
from policy_transport.exceptions import NumericalFailure
from policy_transport.rules import (
    allocation_difference,
    build_problem,
    ex_post_bayes_rule,
    oracle_rule,
    plug_in_rule,
    regret,
    resolve_ties,
    split_ties_uniformly,
    welfare_of,
)
from policy_transport.tobit import TobitFit
from policy_transport.transport import (
    Coupling,
    DiscreteMarginal,
    TransportProblem,
    solve_max_transport,
)
from policy_transport.welfare import ParamVector, WelfareSpec, welfare_contrast


@pytest.fixture
def treat_half():
    """F_T treating half of the population."""
    return DiscreteMarginal.bernoulli(0.5)


@pytest.fixture
def cyclic_problem():
    """Three bins, three levels, each bin tied on a different pair of levels."""
    source = DiscreteMarginal(("x1", "x2", "x3"), np.full(3, 1 / 3))
    target = DiscreteMarginal(("t0", "t1", "t2"), np.full(3, 1 / 3))
    welfare = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
    return TransportProblem(welfare, source, target)


@pytest.fixture
def survey_fit():
    """A fit with coefficients of the scale found in voucher survey data."""
    theta = ParamVector(
        beta=[-5.5, -0.72], alpha=2.06, sigma=np.sqrt(104.31), intercept=102.77
    )
    errors = np.array([0.3, 0.5, 0.5, 3.0, 0.3])
    n = 1000
    return TobitFit(
        theta_hat=theta,
        loglik=0.0,
        fisher=np.diag(1.0 / (n * errors**2)),
        n=n,
        converged=True,
        covariate_names=("age", "sex"),
        treatment_name="voucher",
    )


def test_uniform_split_on_tied_bins(tie_problem):
    """Test tied bins share the treated capacity in proportion to their mass."""
    report = solve_max_transport(tie_problem)

    coupling = resolve_ties(tie_problem, report, TieMode.UNIFORM_SPLIT)

    expected = np.array([[1 / 6, 1 / 6], [1 / 6, 1 / 6], [0.0, 1 / 3]])
    assert np.allclose(coupling.mass, expected, atol=1e-12)
    assert tie_problem.value(coupling.mass) == pytest.approx(report.value)


def test_solver_vertex_keeps_simplex_coupling(tie_problem):
    """Test the solver-vertex mode returns the LP vertex untouched."""
    report = solve_max_transport(tie_problem)

    coupling = resolve_ties(tie_problem, report, TieMode.SOLVER_VERTEX)

    assert coupling is report.coupling


def test_minimal_h_ties_stay_optimal(tie_problem):
    """Test the minimal-H mode picks an optimal coupling."""
    report = solve_max_transport(tie_problem)

    coupling = resolve_ties(tie_problem, report, TieMode.MINIMAL_H)

    assert tie_problem.value(coupling.mass) >= report.value - 1e-8
    assert coupling.mass[2, 0] <= 1e-8


def test_uniform_split_falls_back_without_common_pattern(cyclic_problem, caplog):
    """Test ties without a shared level pattern fall back to minimal-H."""
    report = solve_max_transport(cyclic_problem)

    assert split_ties_uniformly(cyclic_problem, report) is None

    coupling = resolve_ties(cyclic_problem, report, TieMode.UNIFORM_SPLIT)

    assert cyclic_problem.value(coupling.mass) == pytest.approx(1.0, abs=1e-8)
    assert "no common level pattern" in caplog.text


def test_oracle_treats_youngest_boys_first(theta0, age_sex_grid, treat_half):
    """Test the oracle treats the bins with the largest welfare gains."""
    spec = WelfareSpec(lam=1.0)

    output = oracle_rule(theta0, age_sex_grid, treat_half, spec)

    assert output.rule_kind is RuleKind.ORACLE
    assert np.allclose(output.treatment_probability(), [1, 1, 1, 0, 0, 0])
    assert output.welfare_at_solution == pytest.approx(
        welfare_of(theta0, output.coupling, age_sex_grid, spec)
    )


def test_oracle_regret_is_zero(theta0, age_sex_grid, treat_half, welfare_spec):
    """Test the oracle coupling has no regret and any other coupling has some."""
    output = oracle_rule(theta0, age_sex_grid, treat_half, welfare_spec)
    independent = Coupling.independent(age_sex_grid, treat_half)

    assert regret(
        theta0, output.coupling, age_sex_grid, treat_half, welfare_spec
    ) == pytest.approx(0.0, abs=1e-12)
    assert regret(theta0, independent, age_sex_grid, treat_half, welfare_spec) > 0


def test_plug_in_at_pinned_fit_matches_oracle(
    pinned_fit, theta0, age_sex_grid, treat_half, welfare_spec
):
    """Test a fit pinned at the truth has zero plug-in regret."""
    plug_in = plug_in_rule(pinned_fit, age_sex_grid, treat_half, welfare_spec)

    assert plug_in.rule_kind is RuleKind.PLUG_IN
    assert plug_in.theta_used is pinned_fit.theta_hat
    assert regret(
        theta0, plug_in.coupling, age_sex_grid, treat_half, welfare_spec
    ) == pytest.approx(0.0, abs=1e-12)


def test_plug_in_requires_converged_fit(theta0, age_sex_grid, treat_half):
    """Test an unconverged fit cannot seed a rule."""
    fit = TobitFit(theta0, 0.0, np.eye(4), 10, converged=False)

    with pytest.raises(NumericalFailure):
        plug_in_rule(fit, age_sex_grid, treat_half, WelfareSpec())


def test_ex_post_bayes_at_pinned_fit_matches_oracle(
    pinned_fit, theta0, age_sex_grid, treat_half, welfare_spec, rng
):
    """Test draws collapsing on the truth reproduce the oracle allocation."""
    oracle = oracle_rule(theta0, age_sex_grid, treat_half, welfare_spec)

    bayes = ex_post_bayes_rule(
        pinned_fit, age_sex_grid, treat_half, welfare_spec, L=20, rng=rng
    )

    assert bayes.rule_kind is RuleKind.EX_POST_BAYES
    assert bayes.theta_used["draws"] == 20
    assert np.allclose(bayes.coupling.mass, oracle.coupling.mass, atol=1e-9)


def test_ex_post_bayes_accepts_precomputed_draws(
    small_fit, age_sex_grid, treat_half, welfare_spec
):
    """Test given draws are averaged without a generator."""
    draws = np.tile(small_fit.theta_hat.as_array(), (3, 1))

    bayes = ex_post_bayes_rule(
        small_fit, age_sex_grid, treat_half, welfare_spec, draws=draws
    )
    plug_in = plug_in_rule(small_fit, age_sex_grid, treat_half, welfare_spec)

    assert np.allclose(bayes.welfare_matrix, plug_in.welfare_matrix)
    assert bayes.theta_used["posterior_mean"] == small_fit.theta_hat.to_dict()


@pytest.mark.parametrize(
    "L,rng", [(0, np.random.default_rng(0)), (10, None)], ids=["no-draws", "no-rng"]
)
def test_ex_post_bayes_needs_draws(small_fit, age_sex_grid, treat_half, L, rng):
    """Test an empty draw count and a missing generator are rejected."""
    with pytest.raises(ValueError):
        ex_post_bayes_rule(small_fit, age_sex_grid, treat_half, WelfareSpec(), L, rng)


def test_allocation_is_invariant_to_welfare_shift(theta0, age_sex_grid, treat_half):
    """Test adding a constant to the welfare matrix keeps the argmax."""
    output = oracle_rule(theta0, age_sex_grid, treat_half, WelfareSpec())
    problem = build_problem(output.welfare_matrix, age_sex_grid, treat_half)

    shifted = solve_max_transport(problem.shifted(-7.5))

    assert np.allclose(shifted.coupling.mass, output.coupling.mass)


def test_allocation_frame_layout(theta0, age_sex_grid, treat_half, welfare_spec):
    """Test one row per cell with coordinates, mass and μ(t|x)."""
    output = oracle_rule(theta0, age_sex_grid, treat_half, welfare_spec)

    frame = output.allocation_frame()

    assert list(frame.columns) == [
        "bin",
        "level",
        "age",
        "sex",
        "mass",
        "conditional_probability",
        "contrast",
    ]
    assert len(frame) == 12
    assert frame["mass"].sum() == pytest.approx(1.0)
    per_bin = frame.groupby("bin", sort=False)["conditional_probability"].sum()
    assert np.allclose(per_bin, 1.0)


def test_allocation_difference_between_rules(
    small_fit, theta0, age_sex_grid, treat_half, welfare_spec, rng
):
    """Test the difference table compares μ(t|x) cell by cell."""
    plug_in = plug_in_rule(small_fit, age_sex_grid, treat_half, welfare_spec)
    bayes = ex_post_bayes_rule(
        small_fit, age_sex_grid, treat_half, welfare_spec, L=50, rng=rng
    )

    frame = allocation_difference(plug_in, bayes)

    assert {"plug_in_probability", "ex_post_bayes_probability"} <= set(frame.columns)
    assert np.allclose(
        frame["difference"],
        frame["plug_in_probability"] - frame["ex_post_bayes_probability"],
    )


def test_survey_scale_rules_agree(survey_fit, rng):
    """Test both rules treat the youngest children first within each sex.

    With a large age effect and capacity for half of the children, averaging over
    the quasi-posterior does not change the allocation.
    """
    grid = DiscreteMarginal.product_grid(
        {"age": np.arange(10.0, 18.0), "sex": [0.0, 1.0]}
    )
    f_t = DiscreteMarginal.bernoulli(0.5)
    spec = WelfareSpec(lam=1.0)

    plug_in = plug_in_rule(survey_fit, grid, f_t, spec)
    bayes = ex_post_bayes_rule(survey_fit, grid, f_t, spec, L=200, rng=rng)

    assert np.allclose(plug_in.coupling.mass, bayes.coupling.mass, atol=1e-6)

    frame = pd.DataFrame(
        {
            "age": grid.coordinates[:, 0],
            "sex": grid.coordinates[:, 1],
            "treated": plug_in.treatment_probability(),
        }
    )
    for _, group in frame.groupby("sex"):
        treated = group.sort_values("age")["treated"].to_numpy()
        assert np.all(np.diff(treated) <= 1e-9)
    assert frame.loc[frame["age"] <= 13, "treated"].tolist() == pytest.approx(
        [1.0] * 8
    )


def test_survey_scale_prioritizes_females_at_equal_age(survey_fit):
    """Test sex = 0 is weakly ahead of sex = 1 at every age.

    The negative sex coefficient lowers the treatment gain for sex = 1. Capacity
    for half a cell beyond ages 10 to 13 lands on sex = 0 at age 14.
    """
    grid = DiscreteMarginal.product_grid(
        {"age": np.arange(10.0, 18.0), "sex": [0.0, 1.0]}
    )
    f_t = DiscreteMarginal.bernoulli(0.5 + 1 / 32)

    plug_in = plug_in_rule(survey_fit, grid, f_t, WelfareSpec(lam=1.0))

    treated = pd.DataFrame(
        {
            "age": grid.coordinates[:, 0],
            "sex": grid.coordinates[:, 1],
            "treated": plug_in.treatment_probability(),
        }
    ).pivot(index="age", columns="sex", values="treated")

    assert np.all(treated[0.0] >= treated[1.0] - 1e-9)
    assert treated.loc[14.0, 0.0] == pytest.approx(0.5)
    assert treated.loc[14.0, 1.0] == pytest.approx(0.0, abs=1e-9)


def test_allocation_frame_contrast(theta0, age_sex_grid, treat_half, welfare_spec):
    """Test the contrast column is w(x, 1) - w(x, 0) on both level rows."""
    output = oracle_rule(theta0, age_sex_grid, treat_half, welfare_spec)

    frame = output.allocation_frame()

    expected = welfare_contrast(theta0, age_sex_grid.coordinates, welfare_spec)
    per_bin = frame.groupby("bin", sort=False)["contrast"]
    assert np.allclose(per_bin.first(), expected)
    assert np.allclose(per_bin.first(), per_bin.last())
