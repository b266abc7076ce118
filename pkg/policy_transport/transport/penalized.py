"""Wasserstein-penalized transport and minimal-penalty selection on the optimal face.

The penalized problem maximizes scale·W(μ) - ε·H(μ) with H(μ) = d_W(μ, ν)². We work
in the joint polytope of pairs (μ, γ), where μ is a coupling of F_X and F_T and γ is
a transport plan from μ to the reference ν on bins × levels. Over that polytope the
objective scale·⟨w, μ⟩ - ε·⟨c, γ⟩² is smooth and concave, and maximizing out γ
recovers the penalized problem because ⟨c, γ⟩ ≥ d_W(μ, ν) with equality at an optimal
plan. Each Frank–Wolfe step solves one linear program over the joint polytope.

Both the objective and its gradient depend on (μ, γ) only through the two numbers
A = ⟨w, μ⟩ and R = ⟨c, γ⟩, so iterates are tracked as convex combinations of
visited vertices together with their (a, r) images.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from airflow.utils.log.logging_mixin import LoggingMixin

from ..config import StepPolicy
from ..exceptions import NumericalFailure
from .marginals import Coupling, SolveReport, SolveStatus, TransportProblem
from .simplex import solve_max_transport
from .wasserstein import GroundMetric

FW_TOLERANCE = 1e-8
FW_MAX_ITERATIONS = 10_000
# Slack granted to the welfare row when restricting to the optimal face.
FACE_TOLERANCE = 1e-9
LP_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class Vertex:
    """A vertex (μ, γ) of the joint polytope and its image (a, r)."""

    mass: np.ndarray
    plan: np.ndarray
    a: float
    r: float

    def same_as(self, other: Vertex) -> bool:
        """Whether both vertices carry the same coupling and plan."""
        return np.allclose(self.mass, other.mass, rtol=0, atol=1e-12) and np.allclose(
            self.plan, other.plan, rtol=0, atol=1e-12
        )


class JointTransportLP:
    """Linear programs over pairs (μ, γ).

    Variables are the N = bins·levels coupling cells followed by the N² plan cells
    (row-major, from coupling cell to reference cell). With a floor on the welfare,
    a slack variable turns ⟨w, μ⟩ ≥ floor into an equality row.
    """

    def __init__(
        self,
        problem: TransportProblem,
        reference: Coupling,
        metric: GroundMetric,
        welfare_floor: Optional[float] = None,
    ):
        if reference.shape != problem.welfare_matrix.shape:
            raise ValueError(
                f"Reference coupling shape {reference.shape} does not match problem "
                f"shape {problem.welfare_matrix.shape}"
            )
        n_cells = problem.welfare_matrix.size
        if metric.size != n_cells:
            raise ValueError(
                f"Metric over {metric.size} points cannot measure {n_cells} cells"
            )

        self.problem = problem
        self.reference = reference
        self.welfare = problem.welfare_matrix.ravel()
        self.costs = metric.distances.ravel()
        self.n_cells = n_cells
        self.welfare_floor = welfare_floor
        self._a_eq, self._b_eq = self._constraints()

    @property
    def n_variables(self) -> int:
        """Coupling cells, plan cells and the optional slack."""
        return self.n_cells + self.n_cells**2 + int(self.welfare_floor is not None)

    def _constraints(self) -> tuple[sparse.csr_matrix, np.ndarray]:
        bins, levels = self.problem.welfare_matrix.shape
        n = self.n_cells
        eye_n = sparse.identity(n, format="csr")
        ones_n = sparse.csr_matrix(np.ones((1, n)))

        mu_rows = sparse.kron(sparse.identity(bins), np.ones((1, levels)))
        mu_columns = sparse.kron(np.ones((1, bins)), sparse.identity(levels))
        zeros_mu = sparse.csr_matrix((bins + levels, n * n))

        # Σ_k γ[c, k] - μ[c] = 0 and Σ_c γ[c, k] = ν[k].
        plan_rows = sparse.kron(eye_n, ones_n)
        plan_columns = sparse.kron(ones_n, eye_n)

        blocks = [
            [sparse.vstack([mu_rows, mu_columns]), zeros_mu],
            [-eye_n, plan_rows],
            [sparse.csr_matrix((n, n)), plan_columns],
        ]
        b_eq = [
            self.problem.source.masses,
            self.problem.target.masses,
            np.zeros(n),
            self.reference.mass.ravel(),
        ]
        a_eq = sparse.bmat(blocks, format="csr")

        if self.welfare_floor is not None:
            rows = a_eq.shape[0]
            slack = sparse.csr_matrix(([-1.0], ([rows], [0])), shape=(rows + 1, 1))
            face_row = sparse.hstack(
                [sparse.csr_matrix(self.welfare), sparse.csr_matrix((1, n * n))]
            )
            a_eq = sparse.hstack([sparse.vstack([a_eq, face_row]), slack], format="csr")
            b_eq.append([self.welfare_floor])

        return a_eq, np.concatenate(b_eq)

    def vertex(self, weight_a: float, weight_r: float) -> Vertex:
        """Maximize weight_a·⟨w, μ⟩ + weight_r·⟨c, γ⟩ over the joint polytope.

        Raises:
            NumericalFailure: When the LP solver does not return an optimal vertex.
        """
        objective = np.concatenate([-weight_a * self.welfare, -weight_r * self.costs])
        if self.welfare_floor is not None:
            objective = np.append(objective, 0.0)

        result = linprog(
            objective,
            A_eq=self._a_eq,
            b_eq=self._b_eq,
            bounds=(0, None),
            method="highs-ds",
            options={
                "primal_feasibility_tolerance": LP_TOLERANCE,
                "dual_feasibility_tolerance": LP_TOLERANCE,
            },
        )
        if result.status != 0:
            raise NumericalFailure(f"Joint transport LP failed: {result.message}")

        x = np.maximum(result.x, 0.0)
        mass = x[: self.n_cells]
        plan = x[self.n_cells : self.n_cells + self.n_cells**2]
        return Vertex(
            mass=mass,
            plan=plan,
            a=float(self.welfare @ mass),
            r=float(self.costs @ plan),
        )


class PenalizedSolver(LoggingMixin):
    """Frank–Wolfe for max scale·A - ε·R² over the joint polytope.

    Attributes:
        lp: The linear oracle.
        eps: Penalty weight ε > 0.
        scale: Weight on the welfare term.
        tolerance: Stop once the Frank–Wolfe gap falls below this value.
        max_iterations: Step cap; reaching it flags ITERATION_LIMIT.
        step_policy: CORRECTIVE re-optimizes over the triangle spanned by the
            current support and the new vertex, OPEN_LOOP takes the 2/(k+2) step.
    """

    def __init__(
        self,
        lp: JointTransportLP,
        eps: float,
        scale: float = 1.0,
        tolerance: float = FW_TOLERANCE,
        max_iterations: int = FW_MAX_ITERATIONS,
        step_policy: StepPolicy = StepPolicy.CORRECTIVE,
    ):
        super().__init__()
        if eps <= 0:
            raise ValueError(f"Penalty eps must be positive, got {eps}")
        self.lp = lp
        self.eps = eps
        self.scale = scale
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.step_policy = step_policy

    def objective(self, a: float, r: float) -> float:
        """scale·A - ε·R²."""
        return self.scale * a - self.eps * r * r

    def solve(self) -> tuple[np.ndarray, np.ndarray, float, int, SolveStatus]:
        """Run Frank–Wolfe from the vertex maximizing scale·a - ε·r.

        Returns:
            The coupling cells, the plan cells, the final gap, the number of steps
            and the termination status.
        """
        vertices = [self.lp.vertex(self.scale, -self.eps)]
        weights = np.array([1.0])
        status = SolveStatus.ITERATION_LIMIT
        gap = np.inf
        iteration = 0

        while True:
            a = float(weights @ [v.a for v in vertices])
            r = float(weights @ [v.r for v in vertices])
            candidate = self.lp.vertex(self.scale, -2.0 * self.eps * r)
            gap = self.scale * (candidate.a - a) - 2.0 * self.eps * r * (
                candidate.r - r
            )
            self.log.debug(
                "Frank-Wolfe step %s: gap=%s objective=%s",
                iteration,
                gap,
                self.objective(a, r),
            )
            if gap < self.tolerance:
                status = SolveStatus.OPTIMAL
                break
            if iteration >= self.max_iterations:
                self.log.warning(
                    "Penalized solve stopped at the iteration limit %s with gap %s",
                    self.max_iterations,
                    gap,
                )
                break

            index = next(
                (i for i, v in enumerate(vertices) if v.same_as(candidate)), None
            )
            if index is None:
                vertices.append(candidate)
                weights = np.append(weights, 0.0)
                index = len(vertices) - 1

            step = 2.0 / (iteration + 2.0)
            weights = (1.0 - step) * weights
            weights[index] += step
            if self.step_policy is StepPolicy.CORRECTIVE:
                weights = self._corrective(vertices, weights, index)

            keep = weights > 0
            vertices = [v for v, k in zip(vertices, keep) if k]
            weights = weights[keep] / weights[keep].sum()
            iteration += 1

        mass = sum(w * v.mass for w, v in zip(weights, vertices))
        plan = sum(w * v.plan for w, v in zip(weights, vertices))
        return mass, plan, max(float(gap), 0.0), iteration, status

    def _corrective(
        self, vertices: list[Vertex], weights: np.ndarray, newest: int
    ) -> np.ndarray:
        """Best point of the hull of the current support and the newest vertex.

        The objective is concave and increasing in a when scale > 0, so its maximum
        over a polygon lies at a corner or on an edge; every pair is checked.
        """
        support = sorted(set(np.flatnonzero(weights > 0)) | {newest})
        a = float(weights @ [v.a for v in vertices])
        r = float(weights @ [v.r for v in vertices])
        best_value, best = self.objective(a, r), weights

        for i in support:
            value = self.objective(vertices[i].a, vertices[i].r)
            if value > best_value:
                best_value, best = value, self._unit(len(vertices), i)

        for i, j in itertools.combinations(support, 2):
            delta_a = vertices[j].a - vertices[i].a
            delta_r = vertices[j].r - vertices[i].r
            if delta_r == 0.0:
                continue
            # Stationary point of the concave objective along the edge.
            s = self.scale * delta_a / (2.0 * self.eps * delta_r) - vertices[i].r
            s = float(np.clip(s / delta_r, 0.0, 1.0))
            value = self.objective(
                vertices[i].a + s * delta_a, vertices[i].r + s * delta_r
            )
            if value > best_value:
                best_value = value
                best = (1.0 - s) * self._unit(len(vertices), i) + s * self._unit(
                    len(vertices), j
                )
        return best

    @staticmethod
    def _unit(size: int, index: int) -> np.ndarray:
        unit = np.zeros(size)
        unit[index] = 1.0
        return unit


def _default_metric(
    problem: TransportProblem, metric: Optional[GroundMetric]
) -> GroundMetric:
    if metric is None:
        return GroundMetric.product(problem.source, problem.target)
    return metric


def _as_coupling(mass: np.ndarray, problem: TransportProblem) -> Coupling:
    return Coupling(
        mass.reshape(problem.welfare_matrix.shape), problem.source, problem.target
    )


def solve_penalized(
    problem: TransportProblem,
    reference: Coupling,
    eps: float,
    scale: float = 1.0,
    metric: Optional[GroundMetric] = None,
    *,
    tolerance: float = FW_TOLERANCE,
    max_iterations: int = FW_MAX_ITERATIONS,
    step_policy: Union[StepPolicy, str] = StepPolicy.CORRECTIVE,
) -> SolveReport:
    """Maximize scale·W(μ) - eps·H(μ) over the couplings of the problem's marginals.

    Args:
        problem: The welfare matrix and both marginals.
        reference: The coupling ν that H measures distance to.
        eps: Penalty weight, strictly positive.
        scale: Weight on the welfare term.
        metric: Ground metric on bins × levels; GroundMetric.product by default.
        tolerance: Frank–Wolfe gap at which the solve stops.
        max_iterations: Frank–Wolfe step cap.
        step_policy: "corrective" or "open-loop".

    Returns:
        A SolveReport with the Frank–Wolfe gap and the penalized objective. Hitting
        the step cap sets status ITERATION_LIMIT.
    """
    if eps <= 0:
        raise ValueError(f"Penalty eps must be positive, got {eps}")
    lp = JointTransportLP(problem, reference, _default_metric(problem, metric))
    solver = PenalizedSolver(
        lp,
        eps,
        scale,
        tolerance=tolerance,
        max_iterations=max_iterations,
        step_policy=StepPolicy.coerce(step_policy),
    )
    mass, plan, gap, iterations, status = solver.solve()
    coupling = _as_coupling(mass, problem)
    value = problem.value(coupling.mass)
    distance = float(lp.costs @ plan)
    solver.log.info(
        "Penalized solve finished: status=%s steps=%s value=%s distance=%s",
        status.value,
        iterations,
        value,
        distance,
    )
    return SolveReport(
        coupling=coupling,
        value=value,
        iterations=iterations,
        status=status,
        gap=gap,
        objective=scale * value - eps * distance**2,
    )


def minimal_h_selection(
    problem: TransportProblem,
    reference: Coupling,
    metric: Optional[GroundMetric] = None,
    *,
    tolerance: float = FW_TOLERANCE,
    max_iterations: int = FW_MAX_ITERATIONS,
) -> Coupling:
    """The coupling of least H among those attaining the maximal welfare.

    The optimal face is {μ : ⟨w, μ⟩ ≥ V* - 1e-9} where V* comes from the transport
    simplex; H is then minimized over it with Frank–Wolfe.

    H is convex but not strictly so: d_W can be flat along an edge of the face. The
    least H value is then unique but the coupling attaining it is not, and the
    returned coupling is whichever minimizer Frank–Wolfe reaches first. Callers
    comparing selections should compare H, not masses, in that case.
    """
    optimum = solve_max_transport(problem)
    if not optimum.optimal:
        raise NumericalFailure(
            "Cannot select on the optimal face: LP solve not optimal"
        )
    lp = JointTransportLP(
        problem,
        reference,
        _default_metric(problem, metric),
        welfare_floor=optimum.value - FACE_TOLERANCE,
    )
    solver = PenalizedSolver(
        lp, eps=1.0, scale=0.0, tolerance=tolerance, max_iterations=max_iterations
    )
    mass, _, gap, iterations, status = solver.solve()
    if status is not SolveStatus.OPTIMAL:
        solver.log.warning("Minimal-H selection stopped with gap %s", gap)
    solver.log.info("Minimal-H selection finished after %s steps", iterations)
    return _as_coupling(mass, problem)
