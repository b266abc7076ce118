"""Backend for inputs and results stored in S3."""
from __future__ import annotations

from pathlib import Path, PurePosixPath
from typing import TYPE_CHECKING, Optional

from .base import PolicyBackend, StrPath, result_files

try:
    from airflow.providers.amazon.aws.hooks.s3 import S3Hook
except ImportError:
    from airflow.hooks.S3_hook import S3Hook

if TYPE_CHECKING:  # pragma: no cover
    from mypy_boto3_s3.service_resource import Object as S3Object


class PolicyS3Backend(PolicyBackend):
    """Inputs and results under S3 URLs, accessed through Airflow's S3Hook.

    Attributes:
        connection_id: An optional Airflow AWS connection for the S3Hook.
    """

    def __init__(self, connection_id: Optional[str] = None, *args, **kwargs):
        self._hook: Optional[S3Hook] = None
        super().__init__(connection_id, *args, **kwargs)

    @property
    def hook(self) -> S3Hook:
        """The S3Hook, built on first use."""
        if self._hook is None:
            self._hook = (
                S3Hook() if self.connection_id is None else S3Hook(self.connection_id)
            )
        return self._hook

    def pull_one(self, source: StrPath, destination: StrPath) -> Path:
        """Download one input object.

        Raises:
            FileNotFoundError: When there is no object at source.
        """
        bucket, key = self.hook.parse_s3_url(str(source))
        if not self.hook.check_for_key(key, bucket_name=bucket):
            raise FileNotFoundError(f"No S3 object at {source}")

        return self._download(self.hook.get_key(key, bucket_name=bucket), destination)

    def pull_many(self, source: StrPath, destination: StrPath) -> Path:
        """Download every object under a prefix, keeping the relative layout."""
        bucket, prefix = self.hook.parse_s3_url(str(source))
        prefix = prefix.rstrip("/") + "/"

        for key in self.hook.list_keys(bucket_name=bucket, prefix=prefix) or []:
            if key.endswith("/"):
                continue
            relative = PurePosixPath(key).relative_to(prefix)
            self._download(
                self.hook.get_key(key, bucket_name=bucket),
                Path(destination, *relative.parts),
            )
        return Path(destination)

    def push_one(
        self, source: StrPath, destination: StrPath, replace: bool = False
    ) -> bool:
        """Upload a result file to an S3 URL, keeping an existing key unless replace."""
        bucket, key = self.hook.parse_s3_url(str(destination))

        self.log.info("Uploading %s to s3://%s/%s", source, bucket, key)
        try:
            self.hook.load_file(str(source), key, bucket_name=bucket, replace=replace)
        except ValueError:
            # S3Hook.load_file refuses existing keys when replace is False.
            self.log.warning("Keeping existing result object s3://%s/%s", bucket, key)
            return False
        return True

    def push_many(
        self,
        source: StrPath,
        destination: StrPath,
        replace: bool = False,
        delete_before: bool = False,
    ) -> int:
        """Upload a command's output directory under an S3 prefix."""
        bucket, prefix = self.hook.parse_s3_url(str(destination))

        if delete_before:
            stale = self.hook.list_keys(bucket, prefix=prefix)
            if stale:
                self.log.info(
                    "Deleting %s objects under s3://%s/%s", len(stale), bucket, prefix
                )
                self.hook.delete_objects(bucket, stale)

        pushed = 0
        for path in result_files(source):
            relative = PurePosixPath(*path.relative_to(source).parts)
            key = "/".join(filter(None, (prefix.rstrip("/"), str(relative))))
            pushed += self.push_one(path, f"s3://{bucket}/{key}", replace=replace)
        return pushed

    def _download(self, s3_object: "S3Object", destination: StrPath) -> Path:
        target = Path(destination)
        target.parent.mkdir(parents=True, exist_ok=True)

        self.log.info("Downloading s3://%s/%s", s3_object.bucket_name, s3_object.key)
        with open(target, "wb+") as f:
            s3_object.download_fileobj(f)
        return target
