"""Storage backends for command inputs and results, chosen by URL scheme.

Local paths (no scheme) and S3 URLs are supported. The S3 backend needs the
Amazon provider for Airflow.
"""
from typing import Optional, Type

from .base import PolicyBackend, StrPath, result_files
from .localfs import PolicyLocalFsBackend

BACKENDS: dict[str, Type[PolicyBackend]] = {"": PolicyLocalFsBackend}

try:
    from .s3 import PolicyS3Backend
except ImportError:
    pass
else:
    BACKENDS["s3"] = PolicyS3Backend


def build_backend(scheme: str, conn_id: Optional[str] = None) -> PolicyBackend:
    """Build the backend for a URL scheme.

    Raises:
        NotImplementedError: When no installed backend handles scheme.
    """
    try:
        backend_cls = BACKENDS[scheme]
    except KeyError:
        raise NotImplementedError(f"Backend {scheme} is not supported") from None
    return backend_cls(conn_id)
