"""Provides a hook to run policy-transport commands from Airflow."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Optional
from urllib.parse import urlparse

try:
    from airflow.hooks.base import BaseHook
except ImportError:
    from airflow.hooks.base_hook import BaseHook

from ..commands import run_command
from ..config import BaseConfig, ConfigFactory
from ..serialization import to_serializable
from .backends import PolicyBackend, StrPath, build_backend


class PolicyHook(BaseHook):
    """A hook to run policy-transport commands.

    Moves command inputs and results between storage backends and a local working
    directory, and provides the configuration for each command.
    """

    def __init__(self, *args, **kwargs):
        self.backends: dict[tuple[str, Optional[str]], PolicyBackend] = {}
        super().__init__(*args, **kwargs)

    def get_backend(self, scheme: str, conn_id: Optional[str]) -> PolicyBackend:
        """The backend for a URL scheme and connection, built once per hook."""
        key = (scheme, conn_id)
        if key not in self.backends:
            self.backends[key] = build_backend(scheme, conn_id)
        return self.backends[key]

    def backend_for(self, url: StrPath, conn_id: Optional[str]) -> PolicyBackend:
        """The backend handling a path or URL."""
        return self.get_backend(urlparse(str(url)).scheme, conn_id)

    def pull_input(
        self,
        source: StrPath,
        destination: StrPath,
        conn_id: Optional[str] = None,
        member: Optional[str] = None,
    ) -> Path:
        """Pull one input file (data, fit, target, problem or reference) locally.

        A source ending in "/" is an upstream results directory; member names the
        file to take from it.
        """
        return self.backend_for(source, conn_id).pull_input(
            source, destination, member=member
        )

    def push_results(
        self,
        source: StrPath,
        destination: StrPath,
        conn_id: Optional[str] = None,
        replace: bool = False,
        delete_before: bool = False,
    ) -> None:
        """Push a command's output directory to a results location."""
        return self.backend_for(destination, conn_id).push_results(
            source, destination, replace=replace, delete_before=delete_before
        )

    def get_config_factory(self, command: str) -> ConfigFactory:
        """Get a ConfigFactory given a command string."""
        return ConfigFactory.from_str(command)

    def run_policy_task(self, config: BaseConfig) -> tuple[bool, dict[str, Any]]:
        """Run a command with a given configuration and return the results.

        The configuration used determines the command that will be ran.

        Returns:
            A tuple containing a boolean indicating success and a JSON-serializable
                mapping with the written artifacts and headline results.
        """
        self.log.info("Running %s command", config.which)
        result = run_command(config)
        return result.success, to_serializable(result.to_dict())
