"""Airflow hooks for policy-transport."""
from .policy import PolicyHook

__all__ = ["PolicyHook"]
