"""Unit test module for PolicyHook."""
import pytest

from policy_transport.config import ConfigFactory, OtConfig
from policy_transport.hooks.backends import PolicyLocalFsBackend

condition = False
try:
    from policy_transport.hooks.backends import PolicyS3Backend
except ImportError:
    condition = True
no_s3_backend = pytest.mark.skipif(
    condition, reason="S3 Backend not available, consider installing amazon extras"
)


@no_s3_backend
def test_policy_hook_get_s3_backend(hook):
    """Test the correct backend is procured."""
    try:
        from airflow.providers.amazon.aws.hooks.s3 import S3Hook
    except ImportError:
        from airflow.hooks.S3_hook import S3Hook

    backend = hook.get_backend("s3", "not_aws_default")

    assert isinstance(backend, PolicyS3Backend)
    assert isinstance(backend.hook, S3Hook)
    assert backend.hook.aws_conn_id == "not_aws_default"


def test_policy_hook_get_local_fs_backend(hook):
    """Test the correct backend is procured."""
    backend = hook.get_backend("", None)

    assert isinstance(backend, PolicyLocalFsBackend)


def test_policy_hook_caches_backends(hook):
    """Test a backend is built once per scheme and connection."""
    assert hook.get_backend("", None) is hook.get_backend("", None)


def test_policy_hook_get_backend_raises_not_implemented(hook):
    """Test an error is raised on unsupported backends."""
    with pytest.raises(NotImplementedError):
        hook.get_backend("gcs", None)


class FakeBackend:
    def pull_input(self, *args, **kwargs):
        return (args, kwargs)

    def push_results(self, *args, **kwargs):
        return (args, kwargs)


def test_policy_hook_pull_input(hook):
    """Test the hook delegates pulls to the backend of the source scheme."""
    hook.backends[("", None)] = FakeBackend()

    args, kwargs = hook.pull_input("/path/to/train.csv", "/path/to/store")

    assert args == ("/path/to/train.csv", "/path/to/store")
    assert kwargs == {}


def test_policy_hook_push_results(hook):
    """Test the hook delegates pushes to the backend of the destination scheme."""
    hook.backends[("s3", "my_conn")] = FakeBackend()

    args, kwargs = hook.push_results(
        "/path/to/out", "s3://bucket/results/", "my_conn", replace=True
    )

    assert args == ("/path/to/out", "s3://bucket/results/")
    assert kwargs == {"replace": True, "delete_before": False}


@pytest.mark.parametrize(
    "command,expected",
    [
        ("fit", ConfigFactory.FIT),
        ("assign", ConfigFactory.ASSIGN),
        ("simulate", ConfigFactory.SIMULATE),
        ("ot", ConfigFactory.OT),
    ],
)
def test_policy_hook_get_config_factory(hook, command, expected):
    """Test the hook maps command names to factories."""
    assert hook.get_config_factory(command) is expected


def test_policy_hook_run_policy_task(hook, problem_file, tmp_path):
    """Test a command runs and returns serializable results."""
    config = OtConfig(problem=str(problem_file), out=str(tmp_path))

    success, results = hook.run_policy_task(config)

    assert success is True
    assert results["success"] is True
    assert results["status"] == "optimal"
    assert isinstance(results["value"], float)
    assert (tmp_path / "solve_report.json").exists()
