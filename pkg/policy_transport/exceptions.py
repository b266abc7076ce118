"""Exceptions raised by policy-transport.

Input problems subclass ValueError and numerical problems subclass RuntimeError, so
callers that only know the builtin hierarchy can still catch them. The CLI maps the
former to exit code 2 and the latter to exit code 1.
"""


class PolicyTransportError(Exception):
    """Base class for all policy-transport errors."""


class InfeasibleProblemError(PolicyTransportError, ValueError):
    """A transport problem whose marginals cannot be coupled."""


class SchemaError(PolicyTransportError, ValueError):
    """An input file or configuration that does not match its schema."""


class NumericalFailure(PolicyTransportError, RuntimeError):
    """A numerical routine failed or produced a result that cannot be trusted."""
