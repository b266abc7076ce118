"""The fit, assign, simulate and ot commands.

Each command takes its configuration dataclass, writes its artifacts under the
configured output directory and returns a CommandResult. Numerical problems that
do not abort a command (an unconverged fit, a solver stopped at its iteration cap)
set success to False.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd

from .config import (
    AssignConfig,
    BaseConfig,
    FitConfig,
    OtConfig,
    OtMode,
    RuleKind,
    SimulateConfig,
)
from .exceptions import NumericalFailure, SchemaError
from .experiment import RiskExperiment, average_risk
from .rules import (
    RuleOutput,
    allocation_difference,
    ex_post_bayes_rule,
    oracle_rule,
    plug_in_rule,
)
from .serialization import (
    coupling_from_dict,
    marginal_from_dict,
    metric_from_dict,
    problem_from_dict,
    read_dataset,
    read_fit,
    read_json,
    report_to_dict,
    rule_output_to_dict,
    run_manifest,
    write_fit,
    write_frame,
    write_json,
)
from .tobit import TobitFit, tobit_mle
from .transport import (
    Coupling,
    DiscreteMarginal,
    kantorovich_potentials,
    minimal_h_selection,
    solve_max_transport,
    solve_penalized,
)
from .transport.marginals import SolveReport, SolveStatus

log = logging.getLogger(__name__)


@dataclass
class CommandResult:
    """Outcome of a command.

    Attributes:
        success: False when a numerical result was flagged.
        outputs: Artifact name to written path.
        summary: JSON-serializable headline results.
    """

    success: bool
    outputs: dict[str, str] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """A JSON-serializable view, suitable for XCom."""
        return {"success": self.success, "outputs": self.outputs, **self.summary}


def _out_dir(config: BaseConfig) -> Path:
    out = Path(config.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(config: FitConfig) -> CommandResult:
    """Fit the Tobit model to a CSV and write fit.json and fit_summary.csv."""
    data = read_dataset(
        config.data,  # type: ignore
        config.outcome,
        config.treatment,
        config.covariates,
        config.column_map,
        config.tau,
        config.flag_column,
    )
    fit = tobit_mle(
        data,
        tol=config.tol,
        intercept=config.intercept,
        max_iterations=config.max_iterations,
    )
    out = _out_dir(config)
    outputs = {"fit": str(write_fit(fit, out / "fit.json"))}

    summary_table: Optional[pd.DataFrame] = None
    if fit.converged:
        summary_table = fit.summary()
        path = write_frame(summary_table, out / "fit_summary.csv")
        outputs["fit_summary"] = str(path)
        print(summary_table.to_string(index=False, float_format="{:.4f}".format))
    else:
        log.warning("Fit did not converge; no summary table written")

    manifest = run_manifest(config, tau=data.tau, n=data.n)
    outputs["manifest"] = str(write_json(manifest, out / "run_manifest.json"))
    return CommandResult(
        success=fit.converged,
        outputs=outputs,
        summary={
            "tau": data.tau,
            "n": data.n,
            "converged": fit.converged,
            "theta_hat": fit.theta_hat.to_dict(),
        },
    )


def _assignment_grid(
    config: AssignConfig, covariates: tuple[str, ...]
) -> DiscreteMarginal:
    if config.target is not None:
        grid = marginal_from_dict(read_json(config.target, "marginal"))
    else:
        grid = DiscreteMarginal.product_grid(config.covariate_grid)  # type: ignore

    if not covariates or tuple(grid.coordinate_names) == covariates:
        return grid
    missing = [c for c in covariates if c not in grid.coordinate_names]
    if missing:
        raise SchemaError(f"Target marginal lacks covariate coordinates: {missing}")
    columns = [grid.coordinate_names.index(c) for c in covariates]
    return DiscreteMarginal(
        grid.points, grid.masses, grid.coordinates[:, columns], covariates
    )


def cmd_assign(config: AssignConfig) -> CommandResult:
    """Build the requested rules and write the allocation tables.

    Writes allocation.csv (one block per rule), assignment.json, and, when both
    the plug-in and ex-post Bayes rules are requested, allocation_diff.csv.
    """
    if config.fit is not None:
        fit = read_fit(config.fit)
        if not fit.converged:
            raise NumericalFailure(f"Fit in {config.fit} did not converge")
    else:
        fit = TobitFit.pinned(config.theta)  # type: ignore
        if RuleKind.EX_POST_BAYES in config.rules:  # type: ignore
            log.warning(
                "Inline theta has no posterior spread; ex-post Bayes equals plug-in"
            )

    covariates = tuple(config.covariates or fit.covariate_names)
    grid = _assignment_grid(config, covariates)
    if grid.coordinates.shape[1] != len(fit.theta_hat.beta):
        raise SchemaError(
            f"Grid has {grid.coordinates.shape[1]} covariates, theta has "
            f"{len(fit.theta_hat.beta)} coefficients"
        )
    f_t = DiscreteMarginal.bernoulli(config.capacity)
    spec = config.welfare
    rng = np.random.default_rng(config.seed)

    builders: dict[RuleKind, Callable[[], RuleOutput]] = {
        RuleKind.ORACLE: lambda: oracle_rule(
            fit.theta_hat, grid, f_t, spec, config.tie_mode  # type: ignore
        ),
        RuleKind.PLUG_IN: lambda: plug_in_rule(
            fit, grid, f_t, spec, config.tie_mode  # type: ignore
        ),
        RuleKind.EX_POST_BAYES: lambda: ex_post_bayes_rule(
            fit, grid, f_t, spec, config.draws, rng, config.tie_mode  # type: ignore
        ),
    }
    results = {rule: builders[rule]() for rule in config.rules}  # type: ignore

    out = _out_dir(config)
    frames = []
    for rule, output in results.items():
        frame = output.allocation_frame()
        frame.insert(0, "rule", rule.value)
        frames.append(frame)
    outputs = {
        "allocation": str(
            write_frame(pd.concat(frames, ignore_index=True), out / "allocation.csv")
        ),
        "assignment": str(
            write_json(
                {
                    "rules": [rule_output_to_dict(o) for o in results.values()],
                    "tie_mode": config.tie_mode.value,  # type: ignore
                    "seed": config.seed,
                    "welfare": spec.to_dict(),  # type: ignore
                    "capacity": config.capacity,
                },
                out / "assignment.json",
            )
        ),
    }
    summary: dict[str, Any] = {
        "welfare": {r.value: o.welfare_at_solution for r, o in results.items()}
    }
    if RuleKind.PLUG_IN in results and RuleKind.EX_POST_BAYES in results:
        diff = allocation_difference(
            results[RuleKind.PLUG_IN], results[RuleKind.EX_POST_BAYES]
        )
        path = write_frame(diff, out / "allocation_diff.csv")
        outputs["allocation_diff"] = str(path)
        summary["max_allocation_difference"] = float(diff["difference"].abs().max())

    manifest_path = write_json(run_manifest(config), out / "run_manifest.json")
    outputs["manifest"] = str(manifest_path)
    return CommandResult(success=True, outputs=outputs, summary=summary)


def cmd_simulate(config: SimulateConfig) -> CommandResult:
    """Estimate risk curves and write risk_curve.csv and companion tables."""
    curve = RiskExperiment(config).run()
    averages = average_risk(curve)

    out = _out_dir(config)
    outputs = {
        "risk_curve": str(write_frame(curve.frame, out / "risk_curve.csv")),
        "replications": str(write_frame(curve.log, out / "replications.csv")),
        "average_risk": str(write_frame(averages, out / "average_risk.csv")),
    }
    if curve.heatmap is not None:
        outputs["allocation_heatmap"] = str(
            write_frame(curve.heatmap, out / "allocation_heatmap.csv")
        )
    manifest_path = write_json(run_manifest(config), out / "run_manifest.json")
    outputs["manifest"] = str(manifest_path)
    return CommandResult(
        success=True,
        outputs=outputs,
        summary={
            "average_risk": averages.to_dict(orient="records"),
            "n_excluded": int(curve.frame["n_excluded"].sum()),
        },
    )


def cmd_ot(config: OtConfig) -> CommandResult:
    """Solve a transport problem file, or measure a distance in distance mode."""
    out = _out_dir(config)

    if config.mode is OtMode.DISTANCE:
        content = read_json(config.problem, "distance")  # type: ignore
        mu, nu = marginal_from_dict(content["mu"]), marginal_from_dict(content["nu"])
        metric = metric_from_dict(content["metric"])
        distance, f, g = kantorovich_potentials(mu, nu, metric)
        distance = max(distance, 0.0)
        path = write_json(
            {"distance": distance, "potentials": {"f": f, "g": g}},
            out / "distance.json",
        )
        write_json(run_manifest(config), out / "run_manifest.json")
        return CommandResult(True, {"distance": str(path)}, {"distance": distance})

    content = read_json(config.problem, "problem")  # type: ignore
    problem = problem_from_dict(content)

    if config.mode is OtMode.PLAIN:
        report = solve_max_transport(problem)
    else:
        metric = metric_from_dict(
            content.get("metric"),
            problem.source,
            problem.target,
            config.treatment_weight,
        )
        reference = (
            coupling_from_dict(read_json(config.reference, "coupling"))
            if config.reference is not None
            else Coupling.independent(problem.source, problem.target)
        )
        if config.mode is OtMode.PENALIZED:
            report = solve_penalized(
                problem,
                reference,
                config.penalty,
                config.scale,
                metric,
                max_iterations=config.max_iterations,
                step_policy=config.step_policy,
            )
        else:
            coupling = minimal_h_selection(
                problem, reference, metric, max_iterations=config.max_iterations
            )
            report = SolveReport(
                coupling=coupling,
                value=problem.value(coupling.mass),
                iterations=0,
                status=SolveStatus.OPTIMAL,
            )

    path = write_json(report_to_dict(report), out / "solve_report.json")
    write_json(run_manifest(config), out / "run_manifest.json")
    if not report.optimal:
        log.warning("Transport solve stopped with status %s", report.status.value)
    return CommandResult(
        success=report.optimal,
        outputs={"solve_report": str(path)},
        summary={"value": report.value, "status": report.status.value},
    )


COMMANDS: dict[str, Callable[[Any], CommandResult]] = {
    "fit": cmd_fit,
    "assign": cmd_assign,
    "simulate": cmd_simulate,
    "ot": cmd_ot,
}


def run_command(config: BaseConfig) -> CommandResult:
    """Dispatch a configuration to its command."""
    try:
        command = COMMANDS[config.which]
    except KeyError:
        raise ValueError(f"No command for configuration {config.which!r}") from None
    return command(config)
