"""Conftest file including setting common fixtures.

Common fixtures include small transport problems, Tobit parameters and datasets,
configuration files written to temporary directories and a mocked S3 bucket.
"""
import json

import boto3
import numpy as np
import pandas as pd
import pytest
from moto import mock_s3

from policy_transport.hooks.policy import PolicyHook
from policy_transport.tobit import TobitFit
from policy_transport.transport import DiscreteMarginal, TransportProblem
from policy_transport.welfare import ParamVector, WelfareSpec

THETA0 = {"beta": [-2.0, -3.0], "alpha": 4.0, "sigma": 10.0}

TIE_WELFARE = [
    [1.0, 0.0],
    [1.0, 0.0],
    [0.0, 0.0],
]


class FakeTaskInstance:
    """Collects XCom pushes made through a task context."""

    def __init__(self):
        self.xcoms = {}

    def xcom_push(self, key, value, execution_date=None, **kwargs):
        self.xcoms[key] = value


@pytest.fixture
def rng():
    """A seeded generator."""
    return np.random.default_rng(20221017)


@pytest.fixture
def theta0():
    """The local-asymptotic center θ₀ = (β = (-2, -3), α = 4, σ = 10)."""
    return ParamVector.from_dict(THETA0)


@pytest.fixture
def welfare_spec():
    """Zero-censored mean welfare."""
    return WelfareSpec(lam=1.0, eps_robust=0.8, tau=0.0, floor=0.0)


@pytest.fixture
def two_by_two():
    """A 2-bin, 2-level problem with a unique optimum."""
    source = DiscreteMarginal(("a", "b"), np.array([0.5, 0.5]))
    target = DiscreteMarginal.bernoulli(0.5)
    return TransportProblem(np.array([[0.0, 3.0], [0.0, 1.0]]), source, target)


@pytest.fixture
def tie_problem():
    """Three bins where two tie for a single level holding half the mass."""
    source = DiscreteMarginal(("x1", "x2", "x3"), np.full(3, 1 / 3))
    target = DiscreteMarginal(
        ("treated", "control"), np.array([1 / 3, 2 / 3]), np.array([[1.0], [0.0]])
    )
    return TransportProblem(np.array(TIE_WELFARE), source, target)


@pytest.fixture
def age_sex_grid():
    """A small (age, sex) covariate grid."""
    return DiscreteMarginal.product_grid({"age": [10.0, 12.0, 14.0], "sex": [0.0, 1.0]})


@pytest.fixture
def pinned_fit(theta0):
    """A converged fit sitting exactly at θ₀."""
    return TobitFit.pinned(theta0)


@pytest.fixture
def small_fit(theta0):
    """A converged fit at θ₀ with a moderate information matrix."""
    return TobitFit(
        theta_hat=theta0,
        loglik=-100.0,
        fisher=np.diag([0.5, 2.0, 1.0, 0.05]),
        n=200,
        converged=True,
        covariate_names=("age", "sex"),
    )


@pytest.fixture
def training_csv(tmp_path, theta0, rng):
    """A training CSV drawn from the simulation design at θ₀."""
    from policy_transport.experiment import sample_training_data

    data = sample_training_data(theta0, 400, rng)
    path = tmp_path / "train.csv"
    pd.DataFrame(
        {
            "y": data.y,
            "t": data.t.astype(int),
            "age": data.x[:, 0],
            "sex": data.x[:, 1].astype(int),
        }
    ).to_csv(path, index=False, float_format="%.17g")
    return path


@pytest.fixture
def problem_file(tmp_path, tie_problem):
    """The tie problem serialized as a problem JSON file."""
    from policy_transport.serialization import problem_to_dict

    path = tmp_path / "problem.json"
    path.write_text(json.dumps(problem_to_dict(tie_problem)))
    return path


@pytest.fixture
def write_config(tmp_path):
    """Write a configuration mapping to a YAML file and return its path."""
    import yaml

    def _write(content, name="config.yml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(content))
        return path

    return _write


@pytest.fixture
def hook():
    """Provide a PolicyHook."""
    return PolicyHook()


@pytest.fixture
def fake_ti():
    """A fake task instance to collect XComs."""
    return FakeTaskInstance()


@pytest.fixture
def mocked_s3_res():
    """Return a mocked s3 resource."""
    with mock_s3():
        yield boto3.resource("s3")


@pytest.fixture
def s3_hook():
    """Provide an S3 for testing."""
    try:
        from airflow.providers.amazon.aws.hooks.s3 import S3Hook
    except ImportError:
        from airflow.hooks.S3_hook import S3Hook

    return S3Hook()


@pytest.fixture
def s3_bucket(mocked_s3_res, s3_hook):
    """Return a mocked s3 bucket for testing.

    Bucket is cleaned after every use.
    """
    bucket = "policy-transport-test-s3-bucket"
    mocked_s3_res.create_bucket(Bucket=bucket)

    yield bucket

    keys = s3_hook.list_keys(bucket, "")
    if keys is not None and len(keys) > 0:
        s3_hook.delete_objects(bucket, keys)
        keys = s3_hook.list_keys(bucket, "")
    assert keys is None or len(keys) == 0


def pytest_addoption(parser):
    parser.addoption(
        "--run-integration",
        action="store_true",
        default=False,
        help="run integration tests",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-integration"):
        return

    skip_integration = pytest.mark.skip(
        reason="need --run-integration to run integration tests"
    )
    for item in items:
        if "integration" in item.keywords:
            item.add_marker(skip_integration)
