"""Backend for a filesystem shared by every task, as with a LocalExecutor."""
from __future__ import annotations

import shutil
from pathlib import Path

from .base import PolicyBackend, StrPath, result_files


class PolicyLocalFsBackend(PolicyBackend):
    """Inputs and results on a local filesystem.

    Two tasks pushing to the same results directory may interleave their files.
    """

    def pull_one(self, source: StrPath, destination: StrPath) -> Path:
        """Copy a local file, creating missing parent directories."""
        target = Path(destination)
        target.parent.mkdir(parents=True, exist_ok=True)
        return Path(shutil.copyfile(source, target))

    def pull_many(self, source: StrPath, destination: StrPath) -> Path:
        """Copy a local directory tree."""
        shutil.copytree(source, destination, dirs_exist_ok=True)
        return Path(destination)

    def push_one(
        self, source: StrPath, destination: StrPath, replace: bool = False
    ) -> bool:
        """Copy a result file, keeping an existing one unless replace is set."""
        target = Path(destination)
        if target.exists() and not replace:
            self.log.warning("Keeping existing result file %s", target)
            return False

        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, target)
        return True

    def push_many(
        self,
        source: StrPath,
        destination: StrPath,
        replace: bool = False,
        delete_before: bool = False,
    ) -> int:
        """Copy a command's output directory into a local results directory."""
        root = Path(destination)
        if delete_before and root.exists():
            self.log.info("Clearing results directory %s", root)
            shutil.rmtree(root)

        return sum(
            self.push_one(path, root / path.relative_to(source), replace=replace)
            for path in result_files(source)
        )
