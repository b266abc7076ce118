"""Airflow operators for all policy-transport commands."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import Any, Iterator, Mapping, Optional, Union

from airflow import AirflowException
from airflow.models.baseoperator import BaseOperator
from airflow.models.xcom import XCOM_RETURN_KEY

from ..config import BaseConfig, parse_yaml_args
from ..hooks.policy import PolicyHook
from ..schemas import validate


class PolicyBaseOperator(BaseOperator):
    """The basic Airflow policy-transport operator.

    Defines how to build a configuration and execute a command. Does not set a
    command itself, subclasses should set it.

    Attributes:
        command: The command to execute.
        config: Command configuration as a mapping or a YAML string. Paths to inputs
            may be local or S3 URLs.
        out: Where to push the results directory. Local or an S3 URL.
        seed: Overrides the configuration's seed.
        input_conn_id: An Airflow connection ID to use when pulling inputs.
        output_conn_id: An Airflow connection ID to use when pushing results.
        replace_on_push: Whether to replace existing result files.
        delete_before_push: Whether to clear out before pushing results.
    """

    template_fields = ["config", "out"]
    input_fields: tuple[str, ...] = ()
    # File to take from an input given as an upstream results directory.
    result_members: dict[str, str] = {}

    def __init__(
        self,
        config: Optional[Union[str, Mapping[str, Any]]] = None,
        out: Optional[str] = None,
        seed: Optional[int] = None,
        input_conn_id: Optional[str] = None,
        output_conn_id: Optional[str] = None,
        replace_on_push: bool = False,
        delete_before_push: bool = False,
        **kwargs,
    ) -> None:
        super().__init__(**kwargs)
        self.config = config
        self.out = out
        self.seed = seed
        self.input_conn_id = input_conn_id
        self.output_conn_id = output_conn_id
        self.replace_on_push = replace_on_push
        self.delete_before_push = delete_before_push

        self._policy_hook: Optional[PolicyHook] = None

    def execute(self, context: dict):
        """Execute the command inside a temporary working directory.

        Args:
            context: The Airflow's task context
        """
        with self.working_directory() as work_dir:
            config = self.get_policy_config(work_dir)
            self.log.info("Running policy-transport configuration: %s", config)

            try:
                success, results = self.policy_hook.run_policy_task(config)
            except Exception as e:
                self.log.exception("There was an error running %s", self.command)
                raise AirflowException(
                    f"An error has occurred while running {self.command}"
                ) from e

            if self.out is not None:
                self.policy_hook.push_results(
                    config.out,  # type: ignore
                    self.out,
                    conn_id=self.output_conn_id,
                    replace=self.replace_on_push,
                    delete_before=self.delete_before_push,
                )
            results = self.relocate_outputs(results, config.out)  # type: ignore

            if self.do_xcom_push is True and context.get("ti", None) is not None:
                self.xcom_push(context, key=XCOM_RETURN_KEY, value=results)

        if success is not True:
            raise AirflowException(
                f"The {self.command} command finished with a flagged result"
            )

        return results

    @property
    def command(self) -> str:
        """Return the current command.

        Each subclass of PolicyBaseOperator should return its corresponding command.
        """
        raise NotImplementedError()

    def get_policy_config(self, work_dir: str) -> BaseConfig:
        """Validate the configuration, pull its inputs and build it.

        Input paths named in input_fields are pulled into work_dir, and the results
        are written to work_dir/results.
        """
        try:
            args = parse_yaml_args(self.config)
            args.pop("out", None)
            if self.seed is not None:
                args["seed"] = self.seed

            validate(args, self.command)
            for field in self.input_fields:
                if args.get(field) is None:
                    continue
                path = self.policy_hook.pull_input(
                    args[field],
                    Path(work_dir) / "inputs" / field,
                    conn_id=self.input_conn_id,
                    member=self.result_members.get(field),
                )
                args[field] = str(path)

            args["out"] = str(Path(work_dir) / "results")
            factory = self.policy_hook.get_config_factory(self.command)
            return factory.create_config(**args)
        except Exception as e:
            raise AirflowException(
                f"Failed to prepare the {self.command} configuration"
            ) from e

    def relocate_outputs(
        self, results: dict[str, Any], local_out: str
    ) -> dict[str, Any]:
        """Point output paths at their pushed location instead of the work dir."""
        if self.out is None:
            return {**results, "outputs": {}}
        outputs = {
            name: "/".join(
                (self.out.rstrip("/"), Path(path).relative_to(local_out).as_posix())
            )
            for name, path in results.get("outputs", {}).items()
        }
        return {**results, "outputs": outputs}

    @contextmanager
    def working_directory(self) -> Iterator[str]:
        """Provides a temporary directory to run a command in.

        Yields:
            The temporary directory's name.
        """
        with TemporaryDirectory(prefix="airflowtmp") as tmp_dir:
            self.log.info("Initializing temporary directory: %s", tmp_dir)
            yield tmp_dir

    @property
    def policy_hook(self) -> PolicyHook:
        """Provides an existing PolicyHook or creates one."""
        if self._policy_hook is None:
            self._policy_hook = PolicyHook()
        return self._policy_hook


class PolicyFitOperator(PolicyBaseOperator):
    """Fits the Tobit model to a training CSV.

    The data entry of the configuration is pulled before fitting. Results are
    fit.json, fit_summary.csv and run_manifest.json.
    """

    input_fields = ("data",)

    @property
    def command(self) -> str:
        """Return the fit command."""
        return "fit"


class PolicyAssignOperator(PolicyBaseOperator):
    """Builds assignment rules from a fit, or inline parameters, on a covariate grid."""

    input_fields = ("fit", "target")
    result_members = {"fit": "fit.json"}

    @property
    def command(self) -> str:
        """Return the assign command."""
        return "assign"


class PolicySimulateOperator(PolicyBaseOperator):
    """Runs the risk experiment.

    Simulation needs no input files; profile presets are accepted through the
    configuration's profile entry.
    """

    @property
    def command(self) -> str:
        """Return the simulate command."""
        return "simulate"


class PolicyTransportOperator(PolicyBaseOperator):
    """Solves a transport problem file or measures a distance."""

    input_fields = ("problem", "reference")

    @property
    def command(self) -> str:
        """Return the ot command."""
        return "ot"
