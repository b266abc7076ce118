"""Ground metrics, the Wasserstein-1 distance and the squared-Wasserstein penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..exceptions import NumericalFailure
from .marginals import FEASIBILITY_TOLERANCE, Coupling, DiscreteMarginal, SolveStatus
from .simplex import TransportSimplex

SYMMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class GroundMetric:
    """Pairwise distances over a finite support.

    Attributes:
        distances: Symmetric, nonnegative table with a zero diagonal.
        points: Optional support labels. When given, marginals supported on any
            subset of these labels can be measured with this metric.
    """

    distances: np.ndarray
    points: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        """Validate the metric table."""
        distances = np.array(self.distances, dtype=float)
        if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
            raise ValueError(f"Distances must be a square table, got {distances.shape}")
        if not np.all(np.isfinite(distances)) or np.any(distances < 0):
            raise ValueError("Distances must be finite and nonnegative")
        if np.any(np.diag(distances) != 0):
            raise ValueError("Distances must have a zero diagonal")
        if not np.allclose(distances, distances.T, rtol=0, atol=SYMMETRY_TOLERANCE):
            raise ValueError("Distances must be symmetric")
        distances.setflags(write=False)
        object.__setattr__(self, "distances", distances)

        if self.points is not None:
            points = tuple(str(p) for p in self.points)
            if len(points) != len(distances) or len(set(points)) != len(points):
                raise ValueError("Metric points must be distinct, one per row")
            object.__setattr__(self, "points", points)

    @property
    def size(self) -> int:
        """Number of support points."""
        return len(self.distances)

    @property
    def diameter(self) -> float:
        """Largest pairwise distance."""
        return float(self.distances.max(initial=0.0))

    @classmethod
    def euclidean(
        cls, coordinates: np.ndarray, points: Optional[Sequence[str]] = None
    ) -> GroundMetric:
        """Euclidean distances between coordinate rows."""
        coordinates = np.asarray(coordinates, dtype=float)
        if coordinates.ndim == 1:
            coordinates = coordinates.reshape(-1, 1)
        distances = cdist(coordinates, coordinates)
        np.fill_diagonal(distances, 0.0)
        return cls(distances, tuple(points) if points is not None else None)

    @classmethod
    def product(
        cls,
        source: DiscreteMarginal,
        target: DiscreteMarginal,
        treatment_weight: float = 1.0,
        standardize: bool = True,
    ) -> GroundMetric:
        """The default metric on bins × levels.

        d((x, t), (x', t')) = |x - x'| + treatment_weight·1[t ≠ t'], where |·| is the
        Euclidean norm on covariates standardized by their F_X standard deviations.
        Points follow the row-major order of a coupling's mass table.
        """
        if treatment_weight < 0:
            raise ValueError("treatment_weight must be nonnegative")
        x = np.asarray(source.coordinates, dtype=float)
        if standardize:
            mean = source.masses @ x
            sd = np.sqrt(source.masses @ (x - mean) ** 2)
            x = x / np.where(sd > 0, sd, 1.0)

        covariate = cdist(x, x)
        treatment = 1.0 - np.eye(len(target))
        distances = (
            covariate[:, None, :, None] + treatment_weight * treatment[None, :, None, :]
        ).reshape(len(source) * len(target), -1)
        np.fill_diagonal(distances, 0.0)
        points = tuple(f"{b}#{t}" for b in source.points for t in target.points)
        return cls(distances, points)

    def between(self, mu: DiscreteMarginal, nu: DiscreteMarginal) -> np.ndarray:
        """The cost table from the support of mu to the support of nu.

        Raises:
            ValueError: When either support has no entries in this metric.
        """
        if self.points is None:
            if len(mu) != self.size or len(nu) != self.size or mu.points != nu.points:
                raise ValueError(
                    "Mismatched supports: an unlabeled metric needs both marginals on "
                    f"the same {self.size} points"
                )
            return self.distances

        index = {p: k for k, p in enumerate(self.points)}
        missing = [p for p in (*mu.points, *nu.points) if p not in index]
        if missing:
            raise ValueError(f"No metric entries for support points: {missing[:5]}")
        rows = [index[p] for p in mu.points]
        columns = [index[p] for p in nu.points]
        return self.distances[np.ix_(rows, columns)]


def transport_cost(
    a: np.ndarray, b: np.ndarray, costs: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimum transport cost from masses a to masses b with its dual potentials.

    Returns:
        The optimal cost and potentials (f, g) with f_i + g_j ≤ c_ij and
        Σ a·f + Σ b·g equal to the cost.
    """
    result = TransportSimplex(-np.asarray(costs, dtype=float), a, b).solve()
    if result.status is not SolveStatus.OPTIMAL:
        raise NumericalFailure("Wasserstein transport solve hit its iteration limit")
    return -result.value, -result.u, -result.v


def kantorovich_potentials(
    mu: DiscreteMarginal, nu: DiscreteMarginal, metric: GroundMetric
) -> tuple[float, np.ndarray, np.ndarray]:
    """Return d_W(mu, nu) and one optimal pair of Kantorovich potentials."""
    return transport_cost(mu.masses, nu.masses, metric.between(mu, nu))


def wasserstein1(
    mu: DiscreteMarginal, nu: DiscreteMarginal, metric: GroundMetric
) -> float:
    """The Wasserstein distance of order one between two marginals."""
    distance, _, _ = kantorovich_potentials(mu, nu, metric)
    return max(distance, 0.0)


def coupling_distance(mu: Coupling, reference: Coupling, metric: GroundMetric) -> float:
    """d_W between two couplings viewed as distributions on bins × levels."""
    if mu.shape != reference.shape:
        raise ValueError(
            f"Couplings have different shapes: {mu.shape} and {reference.shape}"
        )
    if (
        np.abs(mu.source.masses - reference.source.masses).max() > FEASIBILITY_TOLERANCE
        or np.abs(mu.target.masses - reference.target.masses).max()
        > FEASIBILITY_TOLERANCE
    ):
        raise ValueError("Couplings must share both marginals")
    if metric.size != mu.mass.size:
        raise ValueError(
            f"Metric over {metric.size} points cannot measure {mu.mass.size} cells"
        )
    distance, _, _ = transport_cost(
        mu.mass.ravel(), reference.mass.ravel(), metric.distances
    )
    return max(distance, 0.0)


def penalty_h(mu: Coupling, reference: Coupling, metric: GroundMetric) -> float:
    """H(μ) = d_W(μ, ν)², the squared distance to a reference coupling."""
    return coupling_distance(mu, reference, metric) ** 2
