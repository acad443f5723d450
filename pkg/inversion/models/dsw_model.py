"""Diffusive wave (DSW) physics on the P1 mesh.

The water height ``u`` satisfies

    u_t - (k(u, u_x) u_x)_x = f,   k = d_f (u - z)^alpha / |u_x|^(1 - gamma)

with Neumann flux ``h`` on the boundary. Nonlinear coefficients are
evaluated at element midpoints from the nodal values and the element
gradient (one-point quadrature).
"""
import dataclasses
import logging
from typing import Callable, List, Optional, Union

import numpy as np

from inversion.models.mesh_fem import (
    TriDiagMatrix,
    assemble_mass,
    assemble_weighted_stiffness,
    element_gradient,
    element_midpoint_values,
)


class DryStateError(ValueError):
    """Raised when the water depth u - z is not strictly positive."""

    def __init__(self, index, depth):
        super().__init__(
            f"Dry state: water depth u - z = {depth} at index {index} "
            f"(must be strictly positive)."
        )
        self.index = index
        self.depth = depth


@dataclasses.dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of the DSW model.

    Parameters
    ----------
    alpha: float
        Depth exponent, 1 < alpha < 2 (Manning: 5/3).
    gamma_exp: float
        Gradient exponent, 0 < gamma_exp <= 1 (Manning: 1/2).
    grad_floor: float
        Lower clamp for |u_x| inside every coefficient evaluation.
    forcing: Optional[Callable[[np.ndarray, float], np.ndarray]]
        Source term f(x, t); zero when omitted.
    neumann_data: Optional[Callable[[np.ndarray, float], np.ndarray]]
        Boundary flux h(x, t) evaluated at both endpoints; zero when omitted.
    bathymetry: Optional[Union[float, np.ndarray]]
        Bed elevation z, nodal or constant; zero when omitted.
    """

    alpha: float = 5.0 / 3.0
    gamma_exp: float = 0.5
    grad_floor: float = 1e-8
    forcing: Optional[Callable] = None
    neumann_data: Optional[Callable] = None
    bathymetry: Optional[Union[float, np.ndarray]] = None

    def __post_init__(self):
        if not 0 < self.gamma_exp <= 1:
            raise ValueError(f"gamma_exp must lie in (0, 1], got {self.gamma_exp}.")
        if not 1 < self.alpha < 2:
            raise ValueError(f"alpha must lie in (1, 2), got {self.alpha}.")
        if not self.grad_floor > 0:
            raise ValueError(f"grad_floor must be positive, got {self.grad_floor}.")

    def bed(self, mesh):
        if self.bathymetry is None:
            return np.zeros(mesh.node_count)
        z = np.asarray(self.bathymetry, dtype=float)
        if z.ndim == 0:
            return np.full(mesh.node_count, float(z))
        if z.shape != (mesh.node_count,):
            raise ValueError(
                f"Bathymetry has shape {z.shape}, expected ({mesh.node_count},)."
            )
        return z


def _check_depth(depth):
    dry = np.flatnonzero(~(np.asarray(depth) > 0))
    if dry.size:
        index = int(dry[0])
        raise DryStateError(index, float(np.ravel(depth)[index]))


def diffusion_k(u_val, du, z_val, df_val, params):
    """Pointwise diffusion coefficient k(u, u_x).

    Parameters
    ----------
    u_val: Union[float, np.ndarray]
        Water height.
    du: Union[float, np.ndarray]
        Gradient of the water height.
    z_val: Union[float, np.ndarray]
        Bed elevation.
    df_val: Union[float, np.ndarray]
        Coefficient d_f (positive).
    params: ModelParams
        Model exponents and gradient floor.

    Returns
    -------
    Union[float, np.ndarray]
        d_f (u - z)^alpha / max(|u_x|, grad_floor)^(1 - gamma).
    """
    depth = np.asarray(u_val, dtype=float) - np.asarray(z_val, dtype=float)
    _check_depth(depth)
    df_val = np.asarray(df_val, dtype=float)
    if np.any(~(df_val > 0)):
        raise ValueError("The coefficient d_f must be strictly positive.")
    grad = np.maximum(np.abs(du), params.grad_floor)
    k = df_val * depth ** params.alpha / grad ** (1.0 - params.gamma_exp)
    return k if np.ndim(k) else float(k)


def attenuation_factor(params):
    """Scalar form of I - (1 - gamma) eta x eta in one dimension.

    eta x eta is identically one in 1D, so the linearized diffusion along
    the gradient direction is gamma * k.
    """
    return params.gamma_exp


def element_states(mesh, params, d_f, u):
    """Midpoint depth, element gradient, coefficient and k per element."""
    z = params.bed(mesh)
    _check_depth(np.asarray(u, dtype=float) - z)
    depth = element_midpoint_values(u) - element_midpoint_values(z)
    du = element_gradient(mesh, u)
    df_mid = element_midpoint_values(d_f)
    k = diffusion_k(depth, du, 0.0, df_mid, params)
    return depth, du, df_mid, k


def assemble_load(mesh, params, t):
    """Load vector (f, w) + (h, w) on the boundary."""
    load = np.zeros(mesh.node_count)
    if params.forcing is not None:
        f = np.broadcast_to(params.forcing(mesh.node_coords, t), (mesh.node_count,))
        load += assemble_mass(mesh) @ f
    if params.neumann_data is not None:
        ends = np.array([mesh.left_endpoint, mesh.right_endpoint])
        flux = np.broadcast_to(params.neumann_data(ends, t), (2,))
        load[0] += flux[0]
        load[-1] += flux[1]
    return load


def flux_stiffness(mesh, params, d_f, u):
    """Matrix K(u) with (K(u) u)_i = (k(u, u_x) u_x, phi_i')."""
    _, _, _, k = element_states(mesh, params, d_f, u)
    return assemble_weighted_stiffness(mesh, k)


def forward_residual(mesh, params, d_f, u, udot, t):
    """Discrete residual M udot + K(u) u - F(t)."""
    stiffness = flux_stiffness(mesh, params, d_f, u)
    return assemble_mass(mesh) @ udot + stiffness @ u - assemble_load(mesh, params, t)


def residual_scale(mesh, params, d_f, u, udot, t):
    """Size of the terms of the residual before cancellation.

    ``|M| |udot| + |K(u)| |u| + |F|`` in the Euclidean norm; a residual far
    below this is round-off.
    """
    stiffness = flux_stiffness(mesh, params, d_f, u)
    terms = (
        abs(assemble_mass(mesh)) @ np.abs(udot)
        + abs(stiffness) @ np.abs(u)
        + np.abs(assemble_load(mesh, params, t))
    )
    return float(np.linalg.norm(terms))


def _midpoint_coupling(mesh, elem_values):
    """Matrix of (c v, w') with v taken at element midpoints."""
    half = 0.5 * np.asarray(elem_values, dtype=float)
    diag = np.zeros(mesh.node_count)
    diag[:-1] -= half
    diag[1:] += half
    return TriDiagMatrix(half.copy(), diag, -half)


def diffusion_matrix(mesh, params, d_f, u):
    """Attenuated diffusion gamma * k assembled on the stiffness pattern."""
    _, _, _, k = element_states(mesh, params, d_f, u)
    return assemble_weighted_stiffness(mesh, attenuation_factor(params) * k)


def convection_matrix(mesh, params, d_f, u):
    """Nonsymmetric term (alpha k / (u - z) v u_x, w')."""
    depth, du, _, k = element_states(mesh, params, d_f, u)
    return _midpoint_coupling(mesh, params.alpha * k / depth * du)


def forward_jacobian(mesh, params, d_f, u, udot, shift):
    """Newton matrix shift * M + A(u).

    A(u) is the derivative of K(u) u with respect to u: the attenuated
    diffusion plus the convection coupling. ``udot`` enters the residual
    linearly through the constant mass matrix.
    """
    del udot
    return (
        shift * assemble_mass(mesh)
        + diffusion_matrix(mesh, params, d_f, u)
        + convection_matrix(mesh, params, d_f, u)
    )


@dataclasses.dataclass(frozen=True, eq=False)
class LinearizedOperator:
    """Spatial operators of the linearized problem around a frozen trajectory.

    The sensitivity operator at level n is ``diffusion[n] + convection[n]``,
    the adjoint operator ``diffusion[n] + convection[n].T``.
    """

    mass: TriDiagMatrix
    diffusion: List[TriDiagMatrix]
    convection: List[TriDiagMatrix]

    def __post_init__(self):
        if len(self.diffusion) != len(self.convection):
            raise ValueError("Diffusion and convection level counts differ.")

    @property
    def level_count(self):
        return len(self.diffusion)

    def level(self, n):
        return self.diffusion[n] + self.convection[n]

    def transposed(self):
        return LinearizedOperator(self.mass, list(self.diffusion), [c.T for c in self.convection])

    def reversed(self):
        return LinearizedOperator(self.mass, self.diffusion[::-1], self.convection[::-1])


def linearize_trajectory(mesh, params, d_f, u_traj):
    """Assemble the per-level linearized operators along ``u_traj``."""
    diffusion, convection = [], []
    for u in np.atleast_2d(u_traj):
        diffusion.append(diffusion_matrix(mesh, params, d_f, u))
        convection.append(convection_matrix(mesh, params, d_f, u))
    logging.debug(f"Linearized {len(diffusion)} levels")
    return LinearizedOperator(assemble_mass(mesh), diffusion, convection)


def coefficient_flux_density(mesh, params, u):
    """Per-element (u - z)^alpha / |u_x|^(1 - gamma) u_x, i.e. the flux per unit d_f."""
    depth, du, _, _ = element_states(mesh, params, np.ones(mesh.node_count), u)
    grad = np.maximum(np.abs(du), params.grad_floor)
    return depth ** params.alpha / grad ** (1.0 - params.gamma_exp) * du


def sensitivity_rhs(mesh, params, u_traj, d):
    """Per-level load -(d (u - z)^alpha / |u_x|^(1 - gamma) u_x, w')."""
    d_mid = element_midpoint_values(d)
    loads = []
    for u in np.atleast_2d(u_traj):
        s = d_mid * coefficient_flux_density(mesh, params, u)
        load = np.zeros(mesh.node_count)
        load[:-1] += s
        load[1:] -= s
        loads.append(load)
    return np.array(loads)


def adjoint_rhs(mesh, residual_traj):
    """Per-level load (r_n, w) = M r_n."""
    mass = assemble_mass(mesh)
    return np.array([mass @ r for r in np.atleast_2d(residual_traj)])
