"""The three one-dimensional benchmark examples and their error metric."""
import dataclasses
import functools
from typing import Optional

import numpy as np

from inversion.models.dsw_model import ModelParams
from inversion.models.inverse_solver import ForwardProblem
from inversion.models.mesh_fem import build_mesh, l2_norm
from inversion.models.time_integrator import GenAlphaConfig, build_time_grid

DOMAIN = (-2.0, 2.0)
T_END = 0.5
DT = 1.0 / 40.0
EXAMPLE_IDS = ("cont", "discont", "disc2")
DEFAULT_MESH_SIZE = {"cont": 0.25, "discont": 0.25, "disc2": 0.125}


def _indicator(x, left, right):
    return ((x >= left) & (x <= right)).astype(float)


def exact_coefficient(example_id, x):
    """Exact coefficient d_f of an example.

    Parameters
    ----------
    example_id: str
        One of ``cont``, ``discont``, ``disc2``.
    x: Union[float, np.ndarray]
        Positions in [-2, 2].

    Returns
    -------
    Union[float, np.ndarray]
        Coefficient values; indicator intervals are closed.
    """
    x_arr = np.asarray(x, dtype=float)
    if example_id == "cont":
        values = 1.0 + (x_arr ** 2 - 4.0) ** 2 / 16.0
    elif example_id == "discont":
        values = 1.0 + _indicator(x_arr, -1.25, 0.75)
    elif example_id == "disc2":
        values = (
            1.0
            - 0.5 * _indicator(x_arr, -0.875, -0.375)
            + 0.5 * _indicator(x_arr, 0.625, 1.125)
        )
    else:
        raise ValueError(
            f"Unknown example '{example_id}'. Available examples are {list(EXAMPLE_IDS)}."
        )
    return values if np.ndim(values) else float(values)


def initial_condition(x):
    """Initial water height -x/4 + 3/2 shared by all examples."""
    values = -0.25 * np.asarray(x, dtype=float) + 1.5
    return values if np.ndim(values) else float(values)


def constant_field(value, x, t):
    """Space-time constant, usable as forcing or boundary flux."""
    return np.full(np.shape(x), float(value))


def constant_forcing(value):
    """Picklable constant f(x, t); None for zero."""
    if not value:
        return None
    return functools.partial(constant_field, value)


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    """One inversion experiment.

    Parameters
    ----------
    example_id: str
        Example identifier.
    h: Optional[float]
        Mesh size, the example default when omitted.
    dt: float
        Time step.
    noise_level: float
        Relative noise level epsilon.
    seed: int
        Seed of the noise generator.
    delta: Optional[float]
        Regularization weight, the shipped default when omitted.
    t_end: float
        Final time.
    fine_data: bool
        Generate the data on a mesh refined once and interpolate it.
    u0_constant: Optional[float]
        Constant initial height instead of the sloped one.
    """

    example_id: str
    h: Optional[float] = None
    dt: float = DT
    noise_level: float = 0.0
    seed: int = 0
    delta: Optional[float] = None
    t_end: float = T_END
    fine_data: bool = False
    u0_constant: Optional[float] = None

    def __post_init__(self):
        if self.example_id not in EXAMPLE_IDS:
            raise ValueError(
                f"Unknown example '{self.example_id}'. Available examples are {list(EXAMPLE_IDS)}."
            )
        if not self.noise_level >= 0:
            raise ValueError(f"Noise level must be non-negative, got {self.noise_level}.")
        if self.delta is not None and not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}.")

    @property
    def mesh_size(self):
        return DEFAULT_MESH_SIZE[self.example_id] if self.h is None else self.h


def build_problem(spec, params=None, integrator=None, u0_constant=None, refine=1):
    """Forward problem of an experiment.

    Parameters
    ----------
    spec: ExperimentSpec
        The experiment.
    params: Optional[ModelParams]
        Model parameters, Manning exponents with z = f = h = 0 when omitted.
    integrator: Optional[GenAlphaConfig]
        Time integrator settings.
    u0_constant: Optional[float]
        Replace the initial height by a constant, overriding the experiment.
    refine: int
        Divide the mesh size by this factor.

    Returns
    -------
    ForwardProblem
        The assembled problem.
    """
    mesh = build_mesh(DOMAIN[0], DOMAIN[1], spec.mesh_size / refine)
    grid = build_time_grid(spec.t_end, spec.dt)
    if params is None:
        params = ModelParams()
    if u0_constant is None:
        u0_constant = spec.u0_constant
    if u0_constant is None:
        u0 = initial_condition(mesh.node_coords)
    else:
        u0 = np.full(mesh.node_count, float(u0_constant))
    return ForwardProblem(mesh, grid, params, u0, integrator or GenAlphaConfig())


def nodal_truth(spec, mesh):
    return exact_coefficient(spec.example_id, mesh.node_coords)


def relative_error(mesh, d_f, d_f_truth):
    """Relative L2 error ||d_f - truth|| / ||truth|| with the mass matrix norm."""
    reference = l2_norm(mesh, d_f_truth)
    if reference == 0:
        raise ValueError("The reference coefficient has zero L2 norm.")
    return l2_norm(mesh, np.asarray(d_f) - np.asarray(d_f_truth)) / reference


def manning_coefficient(d_f):
    """Manning roughness c_f = 1 / d_f."""
    d_f = np.asarray(d_f, dtype=float)
    if np.any(~(d_f > 0)):
        raise ValueError("The coefficient d_f must be strictly positive.")
    return 1.0 / d_f
