"""Airflow operators for policy-transport."""
from .policy import (
    PolicyAssignOperator,
    PolicyBaseOperator,
    PolicyFitOperator,
    PolicySimulateOperator,
    PolicyTransportOperator,
)

__all__ = [
    "PolicyAssignOperator",
    "PolicyBaseOperator",
    "PolicyFitOperator",
    "PolicySimulateOperator",
    "PolicyTransportOperator",
]
