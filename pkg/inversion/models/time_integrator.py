"""Generalized-alpha time stepping for the DSW forward, sensitivity and adjoint problems.

Every step works on the intermediate state y = u_{n+alpha_f}. Given (u_n,
udot_n), the rate at the intermediate time is the affine function

    ydot = (1 - alpha_m / gamma_t) udot_n + shift (y - u_n),
    shift = alpha_m / (alpha_f gamma_t dt),

so the Newton matrix of R(y, ydot) is ``dR/dy + shift dR/dydot``. The new
level follows from u_{n+1} = u_n + (y - u_n) / alpha_f and
udot_{n+1} = udot_n + (ydot - udot_n) / alpha_m.
"""
import dataclasses
import logging

import numpy as np

from inversion.models.dsw_model import (
    DryStateError,
    assemble_load,
    flux_stiffness,
    forward_jacobian,
    forward_residual,
    residual_scale,
)
from inversion.models.mesh_fem import assemble_mass, solve_tridiagonal


class NewtonConvergenceError(RuntimeError):
    """Raised when the corrector loop does not reach the tolerance."""

    def __init__(self, step, history):
        super().__init__(
            f"Newton iteration did not converge in time step {step} after "
            f"{len(history) - 1} iterations; residual norms: "
            + ", ".join(f"{r:.3e}" for r in history)
        )
        self.step = step
        self.history = list(history)


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t_start, t_end]."""

    t_start: float
    t_end: float
    dt: float
    step_count: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got dt={self.dt}.")
        span = self.t_end - self.t_start
        if abs(self.step_count * self.dt - span) > 1e-9 * max(1.0, span):
            raise ValueError(
                f"step_count * dt = {self.step_count * self.dt} does not match "
                f"the interval length {span}."
            )

    @property
    def times(self):
        return np.linspace(self.t_start, self.t_end, self.step_count + 1)

    @property
    def level_count(self):
        return self.step_count + 1


def build_time_grid(t_end, dt, t_start=0.0):
    """Build a TimeGrid, rejecting steps that do not divide the interval."""
    if not dt > 0:
        raise ValueError(f"Time step must be positive, got dt={dt}.")
    ratio = (t_end - t_start) / dt
    step_count = int(round(ratio))
    if step_count < 1 or abs(ratio - step_count) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"Time step dt={dt} does not divide the interval [{t_start}, {t_end}]."
        )
    return TimeGrid(float(t_start), float(t_end), (t_end - t_start) / step_count, step_count)


def genalpha_params(rho_inf):
    """Generalized-alpha parameters from the spectral radius at infinity.

    Parameters
    ----------
    rho_inf: float
        Spectral radius in [0, 1].

    Returns
    -------
    Tuple[float, float, float]
        (alpha_f, alpha_m, gamma_t).
    """
    if not 0 <= rho_inf <= 1:
        raise ValueError(f"rho_inf must lie in [0, 1], got {rho_inf}.")
    alpha_f = 1.0 / (1.0 + rho_inf)
    alpha_m = (3.0 - rho_inf) / (2.0 * (1.0 + rho_inf))
    gamma_t = 1.0 / (1.0 + rho_inf)
    return alpha_f, alpha_m, gamma_t


@dataclasses.dataclass(frozen=True)
class GenAlphaConfig:
    """Integrator settings.

    Parameters
    ----------
    rho_inf: float
        Spectral radius at infinity.
    newton_tol: float
        Relative residual reduction that stops the corrector loop.
    max_iter: int
        Maximum number of corrector iterations per step.
    newton_atol: float
        Residual norm, relative to the size of the residual's terms, below
        which the state counts as converged (round-off level).
    max_halvings: int
        Maximum number of step halvings in the corrector line search.
    """

    rho_inf: float = 0.1
    newton_tol: float = 1e-6
    max_iter: int = 20
    newton_atol: float = 1e-12
    max_halvings: int = 10

    def __post_init__(self):
        alpha_f, alpha_m, _ = genalpha_params(self.rho_inf)
        if not alpha_m >= alpha_f >= 0.5:
            raise ValueError("Generalized-alpha parameters are not unconditionally stable.")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be positive, got {self.newton_tol}.")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}.")
        if self.max_halvings < 0:
            raise ValueError(f"max_halvings must be non-negative, got {self.max_halvings}.")

    @property
    def params(self):
        return genalpha_params(self.rho_inf)


def initial_rate(mesh, params, d_f, u0):
    """Consistent initial rate: M udot0 = F(0) - K(u0) u0."""
    u0 = np.asarray(u0, dtype=float)
    rhs = assemble_load(mesh, params, 0.0) - flux_stiffness(mesh, params, d_f, u0) @ u0
    return solve_tridiagonal(assemble_mass(mesh), rhs)


def _damped_update(residual_fn, y, increment, norm, mass, max_halvings):
    """Backtracking on the residual norm along the Newton increment.

    Trial steps ``lam = 1, 1/2, 1/4, ...`` are tried until one fails to
    improve on the best decreasing trial so far. The part of the increment
    that is cut away is replaced by a constant with the same volume, so
    ``1^T M y`` takes its full-step value for every ``lam``.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        The accepted state and its residual.
    """
    ones = np.ones_like(y)
    volume_shift = np.dot(ones, mass @ increment) / np.dot(ones, mass @ ones)
    best, error, fallback = None, None, None
    lam = 1.0
    for _ in range(max_halvings + 1):
        trial = y + lam * increment + (1.0 - lam) * volume_shift
        try:
            residual = residual_fn(trial)
        except DryStateError as err:
            error = err
        else:
            trial_norm = float(np.linalg.norm(residual))
            if fallback is None:
                fallback = (trial, residual)
            if np.isfinite(trial_norm):
                if best is not None and trial_norm >= best[2] and best[2] < norm:
                    break
                if best is None or trial_norm < best[2]:
                    best = (trial, residual, trial_norm)
        lam *= 0.5
    if best is None:
        if fallback is None:
            raise error
        return fallback
    if best[2] >= norm:
        logging.debug(f"Line search found no decrease below {norm:.3e}")
    return best[0], best[1]


def solve_forward(mesh, grid, params, d_f, u0, config):
    """Integrate the nonlinear DSW problem with the generalized-alpha method.

    Parameters
    ----------
    mesh: Mesh1D
        Spatial mesh.
    grid: TimeGrid
        Time partition.
    params: ModelParams
        Model parameters.
    d_f: np.ndarray
        Nodal coefficient.
    u0: np.ndarray
        Initial water height.
    config: GenAlphaConfig
        Integrator settings.

    Returns
    -------
    np.ndarray
        Trajectory of shape (grid.level_count, mesh.node_count).

    Raises
    ------
    NewtonConvergenceError
        When a step does not converge within ``config.max_iter`` iterations.
    DryStateError
        When an iterate leaves the admissible regime u > z.
    """
    alpha_f, alpha_m, gamma_t = config.params
    dt = grid.dt
    shift = alpha_m / (alpha_f * gamma_t * dt)
    d_f = np.asarray(d_f, dtype=float)

    u_n = np.asarray(u0, dtype=float).copy()
    udot_n = initial_rate(mesh, params, d_f, u_n)
    mass = assemble_mass(mesh)
    trajectory = np.empty((grid.level_count, mesh.node_count))
    trajectory[0] = u_n

    for step in range(grid.step_count):
        t_af = grid.times[step] + alpha_f * dt
        # predictor: u_{n+1} = u_n, udot_{n+1} = (gamma_t - 1) / gamma_t udot_n
        y = u_n.copy()
        ydot_base = (1.0 - alpha_m / gamma_t) * udot_n
        ydot = ydot_base.copy()
        residual = forward_residual(mesh, params, d_f, y, ydot, t_af)
        history = [float(np.linalg.norm(residual))]
        for iteration in range(config.max_iter + 1):
            norm = history[-1]
            scale = residual_scale(mesh, params, d_f, y, ydot, t_af)
            if norm <= config.newton_atol * scale or (
                iteration > 0 and norm <= config.newton_tol * history[0]
            ):
                break
            if iteration == config.max_iter:
                raise NewtonConvergenceError(step, history)
            jacobian = forward_jacobian(mesh, params, d_f, y, ydot, shift)
            increment = solve_tridiagonal(jacobian, -residual, level=step + 1)
            y, residual = _damped_update(
                lambda trial: forward_residual(
                    mesh, params, d_f, trial, ydot_base + shift * (trial - u_n), t_af
                ),
                y, increment, norm, mass, config.max_halvings,
            )
            ydot = ydot_base + shift * (y - u_n)
            history.append(float(np.linalg.norm(residual)))
        logging.debug(f"Step {step + 1}: {len(history) - 1} Newton iterations")

        u_n, udot_n = u_n + (y - u_n) / alpha_f, udot_n + (ydot - udot_n) / alpha_m
        trajectory[step + 1] = u_n
    return trajectory


def _linear_step_data(operator, loads, n, alpha_f):
    """Operator and load interpolated to t_{n+alpha_f}."""
    w0, w1 = 1.0 - alpha_f, alpha_f
    matrix = w0 * operator.level(n) + w1 * operator.level(n + 1)
    load = w0 * loads[n] + w1 * loads[n + 1]
    return matrix, load


def solve_linear_forward(operator, loads, grid, config):
    """Generalized-alpha for M vdot + L_n v = load_n with v(0) = 0.

    Parameters
    ----------
    operator: LinearizedOperator
        Per-level spatial operators, one per time level.
    loads: np.ndarray
        Per-level load vectors, shape (levels, nodes).
    grid: TimeGrid
        Time partition.
    config: GenAlphaConfig
        Integrator settings (only the spectral radius is used).

    Returns
    -------
    np.ndarray
        Trajectory of shape (levels, nodes).
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    if operator.level_count != grid.level_count or len(loads) != grid.level_count:
        raise ValueError(
            f"Operator ({operator.level_count}) and load ({len(loads)}) levels "
            f"must match the time grid ({grid.level_count})."
        )
    alpha_f, alpha_m, gamma_t = config.params
    shift = alpha_m / (alpha_f * gamma_t * grid.dt)
    mass = operator.mass
    node_count = mass.size

    v_n = np.zeros(node_count)
    vdot_n = solve_tridiagonal(mass, loads[0], level=0)
    trajectory = np.zeros((grid.level_count, node_count))

    for n in range(grid.step_count):
        matrix, load = _linear_step_data(operator, loads, n, alpha_f)
        ydot_base = (1.0 - alpha_m / gamma_t) * vdot_n - shift * v_n
        y = solve_tridiagonal(shift * mass + matrix, load - mass @ ydot_base, level=n + 1)
        ydot = ydot_base + shift * y
        v_n, vdot_n = v_n + (y - v_n) / alpha_f, vdot_n + (ydot - vdot_n) / alpha_m
        trajectory[n + 1] = v_n
    return trajectory


def solve_linear_backward(operator, loads, grid, config):
    """Solve the adjoint problem -M pdot + L_n^T p = load_n with p(T) = 0.

    The substitution tau = T - t turns it into a forward problem with the
    level order reversed and the transposed spatial operators. The result
    is indexed in forward time.
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    reversed_solution = solve_linear_forward(
        operator.transposed().reversed(), loads[::-1], grid, config
    )
    return reversed_solution[::-1].copy()

