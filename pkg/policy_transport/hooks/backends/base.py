"""Storage backends for command inputs and results.

A backend moves the files a command reads (training CSVs, fits, target grids,
transport problems, reference couplings) into a task's working directory, and the
files a command writes back out of it.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from os import PathLike
from pathlib import Path
from typing import Iterator, Optional, Union

from airflow.utils.log.logging_mixin import LoggingMixin

StrPath = Union[str, "PathLike[str]"]

MANIFEST_NAME = "run_manifest.json"


def result_files(source: StrPath) -> Iterator[Path]:
    """Every file under a command's output directory, the run manifest last.

    A manifest at the destination thus marks a push that went through.
    """
    files = sorted(f for f in Path(source).glob("**/*") if f.is_file())
    yield from (f for f in files if f.name != MANIFEST_NAME)
    yield from (f for f in files if f.name == MANIFEST_NAME)


class PolicyBackend(ABC, LoggingMixin):
    """Storage for policy-transport inputs and results.

    Subclasses implement the four transfer primitives. A backend may rely on an
    Airflow connection to build its own hook.

    Attributes:
        connection_id: An optional Airflow connection used by the backend's hook.
    """

    def __init__(self, connection_id: Optional[str] = None, *args, **kwargs):
        self.connection_id = connection_id
        super().__init__(*args, **kwargs)

    def pull_input(
        self, source: StrPath, destination: StrPath, member: Optional[str] = None
    ) -> Path:
        """Pull one input file into a working directory.

        A source ending in "/" names a results directory or prefix, such as the
        output of an upstream task. It is pulled whole and member picks the file.

        Args:
            source: Path or URL of the input file, or of a results directory.
            destination: A local directory, or a local file path with a suffix to
                rename the input.
            member: The file to use from a pulled results directory.

        Returns:
            The local path of the pulled file.

        Raises:
            FileNotFoundError: When member is not among the pulled results.
        """
        if str(source).endswith("/"):
            self.log.info("Pulling results directory %s into %s", source, destination)
            directory = self.pull_many(source, destination)
            if member is None:
                return directory
            if not (directory / member).is_file():
                raise FileNotFoundError(f"No {member} under {source}")
            return directory / member

        target = Path(destination)
        if target.is_dir() or not target.suffix:
            target /= Path(str(source)).name

        self.log.info("Pulling input %s into %s", source, target)
        self.pull_one(source, target)
        return target

    def push_results(
        self,
        source: StrPath,
        destination: StrPath,
        replace: bool = False,
        delete_before: bool = False,
    ) -> None:
        """Push a command's output directory.

        Args:
            source: Local directory holding the command's outputs.
            destination: Path or URL of the results directory.
            replace: Overwrite results already at destination.
            delete_before: Clear destination before pushing.
        """
        self.log.info("Pushing results from %s to %s", source, destination)
        pushed = self.push_many(
            source, destination, replace=replace, delete_before=delete_before
        )
        self.log.info("Pushed %s result files", pushed)

    @abstractmethod
    def pull_one(self, source: StrPath, destination: StrPath) -> Path:
        """Copy the file at source to the local path destination.

        Returns:
            The local path of the copy.
        """
        return NotImplemented

    @abstractmethod
    def pull_many(self, source: StrPath, destination: StrPath) -> Path:
        """Copy every file under source into the local directory destination.

        Returns:
            The local directory holding the copies.
        """
        return NotImplemented

    @abstractmethod
    def push_one(
        self, source: StrPath, destination: StrPath, replace: bool = False
    ) -> bool:
        """Copy a local file to destination; False when an existing file was kept."""
        return NotImplemented

    @abstractmethod
    def push_many(
        self,
        source: StrPath,
        destination: StrPath,
        replace: bool = False,
        delete_before: bool = False,
    ) -> int:
        """Copy every file under a local directory; returns how many were written."""
        return NotImplemented
