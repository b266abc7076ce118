"""Marginals, couplings and transport problems over covariate bins × treatment levels.

Every container here is immutable after construction: arrays are copied and flagged
read-only, so a single TransportProblem may be shared by many workers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..config import FromStrEnum

MASS_TOLERANCE = 1e-12
FEASIBILITY_TOLERANCE = 1e-9


def _frozen(values: Any, ndim: Optional[int] = None) -> np.ndarray:
    """Return a read-only float copy of values."""
    array = np.array(values, dtype=float)
    if ndim is not None and array.ndim != ndim:
        raise ValueError(
            f"Expected a {ndim}-dimensional array, got shape {array.shape}"
        )
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteMarginal:
    """A finite probability distribution over labeled support points.

    Attributes:
        points: Distinct support labels.
        masses: Nonnegative probabilities summing to one.
        coordinates: One coordinate vector per point, for example (age, sex) for a
            covariate bin or the treatment level for a treatment arm. Defaults to the
            point index.
        coordinate_names: Names of the coordinate columns.
    """

    points: tuple[str, ...]
    masses: np.ndarray
    coordinates: Optional[np.ndarray] = None
    coordinate_names: tuple[str, ...] = ()

    def __post_init__(self):
        """Validate masses and normalize points and coordinates."""
        points = tuple(str(p) for p in self.points)
        masses = _frozen(self.masses, ndim=1)

        if len(points) != len(masses):
            raise ValueError(
                f"Got {len(points)} points but {len(masses)} masses in marginal"
            )
        if len(set(points)) != len(points):
            raise ValueError("Marginal points must be distinct")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise ValueError("Marginal masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"Marginal masses sum to {masses.sum()!r}, not 1")

        if self.coordinates is None:
            coordinates = _frozen(np.arange(len(points)).reshape(-1, 1))
            names = self.coordinate_names or ("index",)
        else:
            coordinates = _frozen(self.coordinates)
            if coordinates.ndim == 1:
                coordinates = _frozen(coordinates.reshape(-1, 1))
            if coordinates.shape[0] != len(points):
                raise ValueError("Marginal coordinates must have one row per point")
            names = self.coordinate_names or tuple(
                f"x{i}" for i in range(coordinates.shape[1])
            )
        if len(names) != coordinates.shape[1]:
            raise ValueError("One coordinate name is required per coordinate column")

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "coordinates", coordinates)
        object.__setattr__(self, "coordinate_names", tuple(names))

    def __len__(self) -> int:
        """Return the number of support points."""
        return len(self.points)

    def as_mapping(self) -> dict[str, float]:
        """Return the marginal as a label to mass mapping."""
        return {p: float(m) for p, m in zip(self.points, self.masses)}

    @classmethod
    def from_mapping(
        cls,
        masses: Mapping[str, float],
        coordinates: Optional[Mapping[str, Sequence[float]]] = None,
        coordinate_names: Sequence[str] = (),
    ) -> DiscreteMarginal:
        """Build a marginal from a label to mass mapping."""
        points = tuple(masses)
        coords = None
        if coordinates is not None:
            coords = np.array([coordinates[p] for p in points], dtype=float)
        return cls(
            points,
            np.array([masses[p] for p in points], dtype=float),
            coords,
            tuple(coordinate_names),
        )

    @classmethod
    def bernoulli(cls, p: float) -> DiscreteMarginal:
        """The treatment marginal treating a fraction p of the population.

        Levels are 0 (control) and 1 (treated), with coordinate equal to the level.
        """
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"Treatment fraction must lie in [0, 1], got {p}")
        return cls(("0", "1"), np.array([1.0 - p, p]), np.array([[0.0], [1.0]]), ("t",))

    @classmethod
    def product_grid(
        cls,
        values: Mapping[str, Sequence[float]],
        masses: Optional[Sequence[float]] = None,
    ) -> DiscreteMarginal:
        """A marginal on the Cartesian product of coordinate values.

        Points are ordered with the last coordinate varying fastest. Masses default
        to uniform.
        """
        names = tuple(values)
        grid = np.array(
            list(itertools.product(*(values[n] for n in names))), dtype=float
        )
        if masses is None:
            weights = np.full(len(grid), 1.0 / len(grid))
        else:
            weights = np.asarray(masses, dtype=float)
        return cls(_grid_labels(names, grid), weights, grid, names)

    @classmethod
    def empirical(cls, rows: np.ndarray, names: Sequence[str]) -> DiscreteMarginal:
        """The empirical distribution of the given covariate rows."""
        rows = np.asarray(rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        unique, counts = np.unique(rows, axis=0, return_counts=True)
        return cls(
            _grid_labels(tuple(names), unique),
            counts / counts.sum(),
            unique,
            tuple(names),
        )


def _grid_labels(names: tuple[str, ...], grid: np.ndarray) -> tuple[str, ...]:
    return tuple(
        "|".join(f"{n}={v:.10g}" for n, v in zip(names, row)) for row in grid
    )


@dataclass(frozen=True, eq=False)
class Coupling:
    """A joint mass table over covariate bins × treatment levels.

    Row sums reproduce the covariate marginal and column sums the treatment marginal,
    so any coupling satisfies the capacity constraint.
    """

    mass: np.ndarray
    source: DiscreteMarginal
    target: DiscreteMarginal

    def __post_init__(self):
        """Validate shape, sign and both marginals."""
        mass = np.array(self.mass, dtype=float)
        expected = (len(self.source), len(self.target))
        if mass.shape != expected:
            raise ValueError(f"Coupling shape {mass.shape} does not match {expected}")
        if not np.all(np.isfinite(mass)) or np.any(mass < -FEASIBILITY_TOLERANCE):
            raise ValueError("Coupling mass must be finite and nonnegative")
        mass = np.maximum(mass, 0.0)

        row_error = np.abs(mass.sum(axis=1) - self.source.masses).max()
        column_error = np.abs(mass.sum(axis=0) - self.target.masses).max()
        if row_error > FEASIBILITY_TOLERANCE:
            raise ValueError(f"Coupling row sums deviate from F_X by {row_error:.3g}")
        if column_error > FEASIBILITY_TOLERANCE:
            raise ValueError(
                f"Coupling column sums deviate from F_T by {column_error:.3g}"
            )
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def shape(self) -> tuple[int, int]:
        """Bins × levels."""
        return self.mass.shape  # type: ignore

    @classmethod
    def independent(
        cls, source: DiscreteMarginal, target: DiscreteMarginal
    ) -> Coupling:
        """The product coupling F_X ⊗ F_T."""
        return cls(np.outer(source.masses, target.masses), source, target)

    def conditional(self) -> np.ndarray:
        """Return μ(t|x); rows of zero-mass bins are left at zero."""
        row = self.mass.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(row > 0, self.mass / np.where(row > 0, row, 1.0), 0.0)

    def deviation(self, other: Coupling) -> float:
        """Total absolute mass difference to another coupling."""
        return float(np.abs(self.mass - other.mass).sum())

    def mix(self, other: Coupling, weight: float = 0.5) -> Coupling:
        """Return (1 - weight)·self + weight·other."""
        return Coupling(
            (1.0 - weight) * self.mass + weight * other.mass, self.source, self.target
        )


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Maximize Σ w·μ over couplings of source and target."""

    welfare_matrix: np.ndarray
    source: DiscreteMarginal
    target: DiscreteMarginal

    def __post_init__(self):
        """Validate dimensions and finiteness."""
        matrix = _frozen(self.welfare_matrix, ndim=2)
        expected = (len(self.source), len(self.target))
        if matrix.shape != expected:
            raise ValueError(
                f"Welfare matrix shape {matrix.shape} does not match"
                f" marginals {expected}"
            )
        if not np.all(np.isfinite(matrix)):
            raise ValueError("Welfare matrix entries must be finite")
        object.__setattr__(self, "welfare_matrix", matrix)

    def value(self, mass: np.ndarray) -> float:
        """The objective Σ w·μ of a mass table."""
        return float(np.sum(self.welfare_matrix * mass))

    def shifted(self, constant: float) -> TransportProblem:
        """The same problem with a constant added to every welfare entry."""
        return TransportProblem(
            self.welfare_matrix + constant, self.source, self.target
        )


class SolveStatus(FromStrEnum):
    """Termination status of a transport solve."""

    OPTIMAL = "optimal"
    ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Result of a transport solve.

    Attributes:
        coupling: The returned coupling.
        value: Σ w·μ at the returned coupling.
        iterations: Pivots for the simplex, Frank–Wolfe steps for penalized solves.
        status: Whether the solver certified optimality.
        potentials: Optimal dual potentials (u, v) of a plain solve.
        gap: Achieved Frank–Wolfe duality gap of a penalized solve.
        objective: The penalized objective scale·W − ε·H of a penalized solve.
    """

    coupling: Coupling
    value: float
    iterations: int
    status: SolveStatus
    potentials: Optional[tuple[np.ndarray, np.ndarray]] = field(
        default=None, repr=False
    )
    gap: Optional[float] = None
    objective: Optional[float] = None

    @property
    def optimal(self) -> bool:
        """Return True when the solver certified optimality."""
        return self.status is SolveStatus.OPTIMAL
