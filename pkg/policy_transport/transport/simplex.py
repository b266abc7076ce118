"""A transportation simplex solver.

The solver maximizes Σ w·flow subject to fixed row sums (supply) and column sums
(demand). Bases are spanning trees of the bipartite row/column graph. Pivoting follows
Bland's rule: the entering cell is the lowest flat index with a positive reduced
cost, and the leaving cell is the lowest flat index among the blocking cells.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from airflow.utils.log.logging_mixin import LoggingMixin

from ..exceptions import InfeasibleProblemError
from .marginals import (
    FEASIBILITY_TOLERANCE,
    Coupling,
    SolveReport,
    SolveStatus,
    TransportProblem,
)

Cell = tuple[int, int]

# Residual supply or demand at or below this is exhausted.
ZERO_MASS = 1e-14


@dataclass(frozen=True)
class SimplexResult:
    """Raw output of TransportSimplex.solve."""

    flow: np.ndarray
    value: float
    u: np.ndarray
    v: np.ndarray
    iterations: int
    status: SolveStatus


class TransportSimplex(LoggingMixin):
    """Transportation simplex maximizing Σ weights·flow.

    Attributes:
        weights: The m × n objective table.
        supply: Row sums, length m.
        demand: Column sums, length n.
        tolerance: Reduced costs above this value make a cell eligible to enter.
        max_iterations: Pivot cap, 10·(m·n)² by default.
    """

    def __init__(
        self,
        weights: np.ndarray,
        supply: np.ndarray,
        demand: np.ndarray,
        tolerance: Optional[float] = None,
        max_iterations: Optional[int] = None,
    ):
        super().__init__()
        self.weights = np.asarray(weights, dtype=float)
        self.supply = np.asarray(supply, dtype=float)
        self.demand = np.asarray(demand, dtype=float)

        if self.weights.ndim != 2 or self.weights.shape != (
            len(self.supply),
            len(self.demand),
        ):
            raise InfeasibleProblemError(
                f"Objective table of shape {self.weights.shape} does not match "
                f"{len(self.supply)} rows and {len(self.demand)} columns"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Objective entries must be finite")
        if np.any(self.supply < 0) or np.any(self.demand < 0):
            raise InfeasibleProblemError("Supply and demand must be nonnegative")

        total_supply, total_demand = self.supply.sum(), self.demand.sum()
        if abs(total_supply - total_demand) > FEASIBILITY_TOLERANCE * max(
            1.0, total_supply
        ):
            raise InfeasibleProblemError(
                f"Infeasible marginals: total supply {total_supply!r} differs from "
                f"total demand {total_demand!r}"
            )

        self.m, self.n = self.weights.shape
        scale = max(1.0, float(np.abs(self.weights).max(initial=0.0)))
        self.tolerance = 1e-11 * scale if tolerance is None else tolerance
        self.max_iterations = (
            10 * (self.m * self.n) ** 2 if max_iterations is None else max_iterations
        )

        self._row_adjacent: list[set[int]] = [set() for _ in range(self.m)]
        self._column_adjacent: list[set[int]] = [set() for _ in range(self.n)]

    def solve(self) -> SimplexResult:
        """Run the simplex from a greedy starting basis."""
        self._set_basis(self.initial_basis())
        flow = self.tree_flow()

        status = SolveStatus.OPTIMAL
        iterations = 0
        while True:
            u, v = self.potentials()
            reduced = self.weights - u[:, None] - v[None, :]
            eligible = np.flatnonzero(reduced > self.tolerance)
            if eligible.size == 0:
                break
            if iterations >= self.max_iterations:
                status = SolveStatus.ITERATION_LIMIT
                self.log.warning(
                    "Transport simplex stopped at the iteration limit %s",
                    self.max_iterations,
                )
                break

            entering = divmod(int(eligible[0]), self.n)
            self._pivot(entering, flow)
            iterations += 1

        flow = np.maximum(flow, 0.0)
        value = float(np.sum(self.weights * flow))
        self.log.debug(
            "Transport simplex finished: status=%s iterations=%s value=%s",
            status.value,
            iterations,
            value,
        )
        return SimplexResult(flow, value, u, v, iterations, status)

    def initial_basis(self) -> list[Cell]:
        """Build a spanning-tree basis.

        Cells are first allocated greedily in decreasing order of the row-centered
        weights, then the forest is completed to a spanning tree with the lowest-index
        cells that join two components.
        """
        centered = self.weights - self.weights.mean(axis=1, keepdims=True)
        supply, demand = self.supply.copy(), self.demand.copy()
        active_rows, active_columns = supply > ZERO_MASS, demand > ZERO_MASS

        parent = list(range(self.m + self.n))

        def find(node: int) -> int:
            while parent[node] != node:
                parent[node] = parent[parent[node]]
                node = parent[node]
            return node

        basis: list[Cell] = []

        def join(i: int, j: int) -> bool:
            a, b = find(i), find(self.m + j)
            if a == b:
                return False
            parent[a] = b
            basis.append((i, j))
            return True

        for flat in np.argsort(-centered, axis=None, kind="stable"):
            if not (active_rows.any() and active_columns.any()):
                break
            i, j = divmod(int(flat), self.n)
            if not (active_rows[i] and active_columns[j]):
                continue
            quantity = min(supply[i], demand[j])
            if not join(i, j):
                continue
            supply[i] -= quantity
            demand[j] -= quantity
            if supply[i] <= ZERO_MASS:
                active_rows[i] = False
            if demand[j] <= ZERO_MASS:
                active_columns[j] = False

        for flat in range(self.m * self.n):
            if len(basis) == self.m + self.n - 1:
                break
            join(*divmod(flat, self.n))

        return basis

    def tree_flow(self) -> np.ndarray:
        """Solve for the basic flows of the current tree by peeling leaves."""
        flow = np.zeros((self.m, self.n))
        residual = np.concatenate([self.supply, self.demand])
        # Node ids: rows are 0..m-1, columns are m..m+n-1.
        adjacent = [{self.m + j for j in self._row_adjacent[i]} for i in range(self.m)]
        adjacent += [set(self._column_adjacent[j]) for j in range(self.n)]
        leaves = deque(node for node, cells in enumerate(adjacent) if len(cells) == 1)

        while leaves:
            node = leaves.popleft()
            if len(adjacent[node]) != 1:
                continue
            other = adjacent[node].pop()
            adjacent[other].discard(node)
            i, j = (node, other - self.m) if node < self.m else (other, node - self.m)
            flow[i, j] = residual[node]
            residual[other] -= residual[node]
            residual[node] = 0.0
            if len(adjacent[other]) == 1:
                leaves.append(other)

        return np.maximum(flow, 0.0)

    def potentials(self) -> tuple[np.ndarray, np.ndarray]:
        """Dual potentials with u[0] = 0 and u_i + v_j = w_ij on basic cells."""
        u = np.full(self.m, np.nan)
        v = np.full(self.n, np.nan)
        u[0] = 0.0
        queue = deque([0])
        while queue:
            node = queue.popleft()
            if node < self.m:
                for j in self._row_adjacent[node]:
                    if np.isnan(v[j]):
                        v[j] = self.weights[node, j] - u[node]
                        queue.append(self.m + j)
            else:
                j = node - self.m
                for i in self._column_adjacent[j]:
                    if np.isnan(u[i]):
                        u[i] = self.weights[i, j] - v[j]
                        queue.append(i)
        return u, v

    def _set_basis(self, basis: list[Cell]) -> None:
        for adjacent in self._row_adjacent:
            adjacent.clear()
        for adjacent in self._column_adjacent:
            adjacent.clear()
        for i, j in basis:
            self._row_adjacent[i].add(j)
            self._column_adjacent[j].add(i)

    def _tree_path(self, entering: Cell) -> list[Cell]:
        """Basic cells on the tree path from the entering row to its column."""
        start, goal = entering[0], self.m + entering[1]
        previous: dict[int, int] = {start: start}
        queue = deque([start])
        while goal not in previous:
            node = queue.popleft()
            if node < self.m:
                neighbours = [self.m + j for j in self._row_adjacent[node]]
            else:
                neighbours = list(self._column_adjacent[node - self.m])
            for neighbour in neighbours:
                if neighbour not in previous:
                    previous[neighbour] = node
                    queue.append(neighbour)

        path: list[Cell] = []
        node = goal
        while node != start:
            before = previous[node]
            if node < self.m:
                path.append((node, before - self.m))
            else:
                path.append((before, node - self.m))
            node = before
        path.reverse()
        return path

    def _pivot(self, entering: Cell, flow: np.ndarray) -> None:
        path = self._tree_path(entering)
        # The first path cell shares the entering row and loses mass.
        losing, gaining = path[0::2], path[1::2]
        theta = min(flow[cell] for cell in losing)
        leaving = min(
            (cell for cell in losing if flow[cell] <= theta + ZERO_MASS),
            key=lambda cell: cell[0] * self.n + cell[1],
        )

        flow[entering] += theta
        for cell in losing:
            flow[cell] -= theta
        for cell in gaining:
            flow[cell] += theta
        flow[leaving] = 0.0

        self.log.debug(
            "Pivot: %s enters, %s leaves, theta=%s", entering, leaving, theta
        )
        self._row_adjacent[leaving[0]].discard(leaving[1])
        self._column_adjacent[leaving[1]].discard(leaving[0])
        self._row_adjacent[entering[0]].add(entering[1])
        self._column_adjacent[entering[1]].add(entering[0])


def solve_max_transport(problem: TransportProblem) -> SolveReport:
    """Solve max Σ w·μ over the couplings of the problem's marginals.

    Raises:
        InfeasibleProblemError: When the marginals cannot be coupled.
    """
    result = TransportSimplex(
        problem.welfare_matrix, problem.source.masses, problem.target.masses
    ).solve()
    coupling = Coupling(result.flow, problem.source, problem.target)
    return SolveReport(
        coupling=coupling,
        value=problem.value(coupling.mass),
        iterations=result.iterations,
        status=result.status,
        potentials=(result.u, result.v),
    )
