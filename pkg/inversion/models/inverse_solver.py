"""Conjugate gradient recovery of the coefficient d_f from space-time height data.

The objective is

    J(d_f) = 1/2 int_0^T ||u(d_f) - g||^2 dt + delta/2 ||d_f'||^2.

Its derivative is computed with one adjoint solve, smoothed in H1 and
combined with the previous direction by the Fletcher-Reeves rule. The step
length comes from a sensitivity solve along the direction.
"""
import dataclasses
import logging
from typing import List, Optional

import numpy as np

from inversion.models.dsw_model import (
    DryStateError,
    ModelParams,
    adjoint_rhs,
    coefficient_flux_density,
    linearize_trajectory,
    sensitivity_rhs,
)
from inversion.models.mesh_fem import (
    Mesh1D,
    SingularMatrixError,
    assemble_stiffness,
    element_gradient,
    h1_semi_inner,
    h1_seminorm,
    helmholtz_smooth,
    l2_norm,
    space_time_inner,
    space_time_l2,
    trapezoid_weights,
)
from inversion.models.time_integrator import (
    GenAlphaConfig,
    NewtonConvergenceError,
    TimeGrid,
    solve_forward,
    solve_linear_backward,
    solve_linear_forward,
)

SOLVER_ERRORS = (DryStateError, NewtonConvergenceError, SingularMatrixError)


class NullDirectionError(ArithmeticError):
    """Raised when the step length denominator vanishes."""


@dataclasses.dataclass(frozen=True, eq=False)
class ForwardProblem:
    """Everything but the coefficient needed to run a forward solve."""

    mesh: Mesh1D
    grid: TimeGrid
    params: ModelParams
    u0: np.ndarray
    integrator: GenAlphaConfig = GenAlphaConfig()

    def solve(self, d_f):
        return solve_forward(self.mesh, self.grid, self.params, d_f, self.u0, self.integrator)

    def linearize(self, d_f, u_traj):
        return linearize_trajectory(self.mesh, self.params, d_f, u_traj)

    def sensitivity(self, d_f, u_traj, direction):
        """v = u'(d_f) direction, linearized around ``u_traj``."""
        operator = self.linearize(d_f, u_traj)
        loads = sensitivity_rhs(self.mesh, self.params, u_traj, direction)
        return solve_linear_forward(operator, loads, self.grid, self.integrator)

    def adjoint(self, d_f, u_traj, r_traj):
        """Adjoint state p with p(T) = 0 driven by the misfit ``r_traj``."""
        operator = self.linearize(d_f, u_traj)
        loads = adjoint_rhs(self.mesh, r_traj)
        return solve_linear_backward(operator, loads, self.grid, self.integrator)


@dataclasses.dataclass(frozen=True, eq=False)
class InversionConfig:
    """Settings of the conjugate gradient loop.

    Parameters
    ----------
    delta: float
        Tikhonov weight of the H1 seminorm penalty.
    step_stop: float
        The loop stops when the step length falls below this value.
    max_cg_iters: int
        Maximum number of accepted iterations.
    initial_guess: Optional[np.ndarray]
        Starting coefficient; the constant 1 when omitted.
    coef_floor: float
        Iterates are clamped from below at this value to keep k positive.
    """

    delta: float = 0.0
    step_stop: float = 1e-3
    max_cg_iters: int = 100
    initial_guess: Optional[np.ndarray] = None
    coef_floor: float = 1e-3

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}.")
        if not self.step_stop > 0:
            raise ValueError(f"step_stop must be positive, got {self.step_stop}.")
        if self.max_cg_iters < 0:
            raise ValueError(f"max_cg_iters must be non-negative, got {self.max_cg_iters}.")
        if not self.coef_floor > 0:
            raise ValueError(f"coef_floor must be positive, got {self.coef_floor}.")

    def start(self, mesh):
        if self.initial_guess is None:
            return np.ones(mesh.node_count)
        return np.array(self.initial_guess, dtype=float)


@dataclasses.dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    error: Optional[float]
    theta: float
    beta: float
    grad_norm: float
    restarted: bool = False


@dataclasses.dataclass(eq=False)
class InversionReport:
    """History and result of one inversion."""

    records: List[IterationRecord]
    final_coefficient: np.ndarray
    termination_reason: str
    initial_objective: float
    initial_error: Optional[float] = None
    best_error: Optional[float] = None
    best_iteration: Optional[int] = None
    best_coefficient: Optional[np.ndarray] = None

    @property
    def iterations(self):
        return len(self.records)

    @property
    def objectives(self):
        return [self.initial_objective] + [r.objective for r in self.records]

    @property
    def final_objective(self):
        return self.objectives[-1]

    @property
    def final_error(self):
        if self.records:
            return self.records[-1].error
        return self.initial_error

    @property
    def failed(self):
        return self.termination_reason.startswith("solver_failure")


def evaluate_objective(problem, d_f, data_g, delta):
    """Evaluate J at ``d_f``.

    Returns
    -------
    Tuple[float, np.ndarray, np.ndarray]
        The objective value, the forward trajectory and the misfit u - g.
    """
    u_traj = problem.solve(d_f)
    r_traj = u_traj - np.asarray(data_g, dtype=float)
    misfit = 0.5 * space_time_l2(problem.mesh, problem.grid, r_traj) ** 2
    penalty = 0.5 * delta * h1_seminorm(problem.mesh, d_f) ** 2
    return misfit + penalty, u_traj, r_traj


def gradient_from_adjoint(problem, u_traj, p_traj):
    """Dual vector of -int_0^T (u - z)^alpha / |u_x|^(1 - gamma) p_x u_x dt."""
    mesh, grid = problem.mesh, problem.grid
    weights = trapezoid_weights(grid.level_count, grid.dt)
    dual = np.zeros(mesh.node_count)
    for weight, u, p in zip(weights, u_traj, p_traj):
        density = coefficient_flux_density(mesh, problem.params, u) * element_gradient(mesh, p)
        half = -0.5 * mesh.h * weight * density
        dual[:-1] += half
        dual[1:] += half
    return dual


def compute_raw_gradient(problem, d_f, u_traj, r_traj, delta):
    """Assembled derivative J'(d_f) as a dual vector (one adjoint solve)."""
    p_traj = problem.adjoint(d_f, u_traj, r_traj)
    dual = gradient_from_adjoint(problem, u_traj, p_traj)
    if delta:
        dual += delta * (assemble_stiffness(problem.mesh) @ d_f)
    return dual


def smooth_gradient(mesh, raw):
    """H1 Riesz representative of the derivative."""
    return helmholtz_smooth(mesh, raw)


def fletcher_reeves_beta(mesh, grad_k, grad_prev):
    """Fletcher-Reeves coefficient, 0 without a previous gradient."""
    if grad_prev is None:
        return 0.0
    denominator = l2_norm(mesh, grad_prev) ** 2
    if denominator == 0:
        raise ValueError("Previous gradient has zero norm; the iteration should have stopped.")
    return l2_norm(mesh, grad_k) ** 2 / denominator


def step_size(mesh, grid, r_traj, v_traj, d_f, d_k, delta):
    """Step length minimizing the linearized objective along -d_k."""
    numerator = space_time_inner(mesh, grid.dt, r_traj, v_traj) + delta * h1_semi_inner(
        mesh, d_f, d_k
    )
    denominator = space_time_inner(mesh, grid.dt, v_traj, v_traj) + delta * h1_semi_inner(
        mesh, d_k, d_k
    )
    if denominator <= 0:
        raise NullDirectionError("The search direction does not change the objective.")
    return numerator / denominator


@dataclasses.dataclass
class _LineStep:
    theta: float
    accepted: bool
    reason: str = ""
    coefficient: Optional[np.ndarray] = None
    objective: float = np.nan
    u_traj: Optional[np.ndarray] = None
    r_traj: Optional[np.ndarray] = None


def _project(coefficient, floor):
    clamped = coefficient < floor
    if np.any(clamped):
        logging.warning(
            f"Clamping {int(clamped.sum())} coefficient values to the floor {floor}"
        )
        coefficient = np.maximum(coefficient, floor)
    return coefficient


def _line_step(problem, data_g, config, d_f, u_traj, r_traj, objective, direction):
    v_traj = problem.sensitivity(d_f, u_traj, direction)
    theta = step_size(problem.mesh, problem.grid, r_traj, v_traj, d_f, direction, config.delta)
    if theta < config.step_stop:
        return _LineStep(theta, False, "step_below_threshold")
    while theta >= config.step_stop:
        candidate = _project(d_f - theta * direction, config.coef_floor)
        try:
            new_objective, new_u, new_r = evaluate_objective(
                problem, candidate, data_g, config.delta
            )
        except SOLVER_ERRORS as err:
            logging.warning(f"Forward solve failed at theta={theta:.3e}: {err}")
            new_objective = np.inf
        if new_objective <= objective:
            return _LineStep(theta, True, "", candidate, new_objective, new_u, new_r)
        logging.warning(
            f"theta={theta:.3e} increases J ({new_objective:.6e} > {objective:.6e}); halving"
        )
        theta *= 0.5
    return _LineStep(theta, False, "no_descent")


def _relative_error(mesh, d_f, truth):
    if truth is None:
        return None
    return l2_norm(mesh, d_f - truth) / l2_norm(mesh, truth)


def run_cg(problem, data_g, config, truth=None):
    """Run the conjugate gradient inversion.

    Parameters
    ----------
    problem: ForwardProblem
        Mesh, time grid, model parameters, initial height and integrator.
    data_g: np.ndarray
        Observed heights, shape (levels, nodes).
    config: InversionConfig
        Loop settings.
    truth: Optional[np.ndarray]
        Exact coefficient; enables the error history.

    Returns
    -------
    InversionReport
        Iteration history, final coefficient and termination reason. Solver
        failures end the loop and are reported, never raised.
    """
    mesh = problem.mesh
    d_f = config.start(mesh)
    try:
        objective, u_traj, r_traj = evaluate_objective(problem, d_f, data_g, config.delta)
    except SOLVER_ERRORS as err:
        logging.error(f"Initial forward solve failed: {err}")
        return InversionReport([], d_f, f"solver_failure: {err}", np.nan)

    initial_error = _relative_error(mesh, d_f, truth)
    report = InversionReport(
        [], d_f, "max_iterations", objective, initial_error,
        best_error=initial_error, best_iteration=0 if truth is not None else None,
        best_coefficient=d_f.copy() if truth is not None else None,
    )
    logging.info(f"CG start: J={objective:.6e}, e={initial_error}")

    grad_prev = direction_prev = None
    for k in range(config.max_cg_iters):
        try:
            raw = compute_raw_gradient(problem, d_f, u_traj, r_traj, config.delta)
            grad = smooth_gradient(mesh, raw)
            grad_norm = l2_norm(mesh, grad)
            if grad_norm == 0:
                report.termination_reason = "stationary"
                break
            beta = fletcher_reeves_beta(mesh, grad, grad_prev)
            direction = grad if direction_prev is None else grad + beta * direction_prev
            step = _line_step(problem, data_g, config, d_f, u_traj, r_traj, objective, direction)
            restarted = False
            if not step.accepted and beta != 0:
                logging.warning(f"Iteration {k + 1}: restarting with steepest descent")
                beta, direction, restarted = 0.0, grad, True
                step = _line_step(
                    problem, data_g, config, d_f, u_traj, r_traj, objective, direction
                )
        except NullDirectionError:
            report.termination_reason = "null_direction"
            break
        except SOLVER_ERRORS as err:
            logging.error(f"Iteration {k + 1} failed: {err}")
            report.termination_reason = f"solver_failure: {err}"
            break
        if not step.accepted:
            logging.info(f"Iteration {k + 1}: stopping ({step.reason}, theta={step.theta:.3e})")
            report.termination_reason = step.reason
            break

        d_f, objective, u_traj, r_traj = step.coefficient, step.objective, step.u_traj, step.r_traj
        error = _relative_error(mesh, d_f, truth)
        report.records.append(
            IterationRecord(k + 1, objective, error, step.theta, beta, grad_norm, restarted)
        )
        report.final_coefficient = d_f
        if error is not None and error < report.best_error:
            report.best_error, report.best_iteration = error, k + 1
            report.best_coefficient = d_f.copy()
        logging.info(
            f"CG iteration {k + 1}: J={objective:.6e}, e={error}, "
            f"theta={step.theta:.4e}, beta={beta:.4e}"
        )
        grad_prev, direction_prev = grad, direction
    return report
