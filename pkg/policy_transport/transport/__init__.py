"""Discrete optimal transport over covariate bins × treatment levels."""
from .marginals import (
    Coupling,
    DiscreteMarginal,
    SolveReport,
    SolveStatus,
    TransportProblem,
)
from .penalized import minimal_h_selection, solve_penalized
from .simplex import TransportSimplex, solve_max_transport
from .wasserstein import (
    GroundMetric,
    coupling_distance,
    kantorovich_potentials,
    penalty_h,
    wasserstein1,
)

__all__ = [
    "Coupling",
    "DiscreteMarginal",
    "GroundMetric",
    "SolveReport",
    "SolveStatus",
    "TransportProblem",
    "TransportSimplex",
    "coupling_distance",
    "kantorovich_potentials",
    "minimal_h_selection",
    "penalty_h",
    "solve_max_transport",
    "solve_penalized",
    "wasserstein1",
]
