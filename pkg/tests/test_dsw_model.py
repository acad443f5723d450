import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inversion.experiments.examples import constant_forcing, initial_condition
from inversion.models.dsw_model import (
    DryStateError,
    LinearizedOperator,
    ModelParams,
    assemble_load,
    attenuation_factor,
    coefficient_flux_density,
    convection_matrix,
    diffusion_k,
    diffusion_matrix,
    element_states,
    forward_jacobian,
    forward_residual,
    linearize_trajectory,
    residual_scale,
    sensitivity_rhs,
)
from inversion.models.mesh_fem import (
    TriDiagMatrix,
    assemble_mass,
    assemble_weighted_stiffness,
    build_mesh,
)


@pytest.fixture
def mesh():
    return build_mesh(-2.0, 2.0, 0.25)


@pytest.fixture
def sloped_state(mesh):
    return initial_condition(mesh.node_coords) + 0.1 * np.sin(mesh.node_coords)


def test_diffusion_k_manning_value():
    params = ModelParams()
    assert diffusion_k(2.0, 1.0, 0.0, 1.0, params) == pytest.approx(2.0 ** (5.0 / 3.0))
    assert diffusion_k(3.0, -4.0, 1.0, 2.0, params) == pytest.approx(
        2.0 * 2.0 ** (5.0 / 3.0) / 2.0
    )


def test_diffusion_k_gradient_floor():
    params = ModelParams(grad_floor=1e-8)
    assert diffusion_k(2.0, 0.0, 0.0, 1.0, params) == pytest.approx(2.0 ** (5.0 / 3.0) * 1e4)


@pytest.mark.parametrize("u_val", [0.0, -1.0, np.nan])
def test_diffusion_k_rejects_dry_states(u_val):
    with pytest.raises(DryStateError):
        diffusion_k(u_val, 1.0, 0.0, 1.0, ModelParams())


def test_diffusion_k_rejects_non_positive_coefficient():
    with pytest.raises(ValueError):
        diffusion_k(2.0, 1.0, 0.0, 0.0, ModelParams())


@settings(max_examples=50, deadline=None)
@given(
    depth=st.floats(min_value=1e-3, max_value=10.0),
    grad=st.floats(min_value=-10.0, max_value=10.0),
    coefficient=st.floats(min_value=1e-3, max_value=10.0),
)
def test_diffusion_k_positive_on_admissible_states(depth, grad, coefficient):
    assert diffusion_k(depth, grad, 0.0, coefficient, ModelParams()) > 0


@pytest.mark.parametrize(
    "kwargs", [{"alpha": 1.0}, {"alpha": 2.0}, {"gamma_exp": 0.0}, {"grad_floor": 0.0}]
)
def test_model_params_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_attenuation_is_gamma():
    assert attenuation_factor(ModelParams(gamma_exp=0.3)) == pytest.approx(0.3)


def test_bed_shapes(mesh):
    np.testing.assert_allclose(ModelParams(bathymetry=0.5).bed(mesh), 0.5)
    np.testing.assert_allclose(ModelParams().bed(mesh), 0.0)
    with pytest.raises(ValueError):
        ModelParams(bathymetry=np.zeros(3)).bed(mesh)


def test_residual_vanishes_at_rest(mesh):
    u = np.full(mesh.node_count, 1.5)
    residual = forward_residual(
        mesh, ModelParams(), np.ones(mesh.node_count), u, np.zeros(mesh.node_count), 0.0
    )
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


def test_rest_residual_is_round_off_of_its_terms(mesh):
    u, udot = np.full(mesh.node_count, 1.5), np.zeros(mesh.node_count)
    d_f = 1.0 + 0.5 * np.cos(mesh.node_coords)
    residual = forward_residual(mesh, ModelParams(), d_f, u, udot, 0.0)
    scale = residual_scale(mesh, ModelParams(), d_f, u, udot, 0.0)
    # the gradient floor makes the flux terms large at rest
    assert scale > 1e4
    assert np.linalg.norm(residual) <= 1e-12 * scale


def test_flux_conserves_mass(mesh, sloped_state):
    d_f = 1.0 + 0.5 * np.cos(mesh.node_coords)
    residual = forward_residual(
        mesh, ModelParams(), d_f, sloped_state, np.zeros(mesh.node_count), 0.0
    )
    assert residual.sum() == pytest.approx(0.0, abs=1e-12)


def test_jacobian_matches_finite_differences(mesh, sloped_state):
    params = ModelParams()
    d_f = 1.0 + 0.5 * np.cos(mesh.node_coords)
    udot = np.zeros(mesh.node_count)
    jacobian = forward_jacobian(mesh, params, d_f, sloped_state, udot, shift=0.0)
    direction = np.cos(2.0 * mesh.node_coords)
    eps = 1e-6
    plus = forward_residual(mesh, params, d_f, sloped_state + eps * direction, udot, 0.0)
    minus = forward_residual(mesh, params, d_f, sloped_state - eps * direction, udot, 0.0)
    np.testing.assert_allclose(
        jacobian @ direction, (plus - minus) / (2.0 * eps), rtol=1e-5, atol=1e-7
    )


def test_jacobian_shift_adds_mass(mesh, sloped_state):
    params = ModelParams()
    d_f = np.ones(mesh.node_count)
    udot = np.zeros(mesh.node_count)
    base = forward_jacobian(mesh, params, d_f, sloped_state, udot, 0.0)
    shifted = forward_jacobian(mesh, params, d_f, sloped_state, udot, 40.0)
    np.testing.assert_allclose(
        (shifted - base).to_dense(), 40.0 * assemble_mass(mesh).to_dense(), atol=1e-10
    )


def test_sensitivity_load_is_coefficient_derivative(mesh, sloped_state):
    params = ModelParams()
    d_f = 1.0 + 0.5 * np.cos(mesh.node_coords)
    d = 0.3 * np.sin(mesh.node_coords)
    udot = np.zeros(mesh.node_count)
    change = forward_residual(mesh, params, d_f + d, sloped_state, udot, 0.0) - forward_residual(
        mesh, params, d_f, sloped_state, udot, 0.0
    )
    load = sensitivity_rhs(mesh, params, sloped_state[None, :], d)
    assert load.shape == (1, mesh.node_count)
    np.testing.assert_allclose(load[0], -change, atol=1e-12)


def test_flux_density_sign(mesh, sloped_state):
    density = coefficient_flux_density(mesh, ModelParams(), sloped_state)
    assert np.all(density < 0)


def test_load_with_forcing_and_neumann(mesh):
    params = ModelParams(forcing=constant_forcing(2.0), neumann_data=lambda x, t: np.array([1.0, -3.0]))
    load = assemble_load(mesh, params, 0.1)
    assert load.sum() == pytest.approx(2.0 * 4.0 + 1.0 - 3.0)
    np.testing.assert_allclose(assemble_load(mesh, ModelParams(), 0.0), 0.0)


def test_linearized_operator(mesh, sloped_state):
    trajectory = np.array([sloped_state, sloped_state + 0.05])
    operator = linearize_trajectory(mesh, ModelParams(), np.ones(mesh.node_count), trajectory)
    assert operator.level_count == 2
    transposed = operator.transposed()
    np.testing.assert_allclose(
        transposed.level(0).to_dense(), operator.level(0).to_dense().T, atol=1e-12
    )
    reversed_operator = operator.reversed()
    np.testing.assert_allclose(reversed_operator.level(0).diag, operator.level(1).diag)


def test_linearized_operator_level_mismatch(mesh):
    zeros = TriDiagMatrix.zeros(mesh.node_count)
    with pytest.raises(ValueError):
        LinearizedOperator(assemble_mass(mesh), [zeros, zeros], [zeros])


@pytest.mark.parametrize("gamma_exp", [0.5, 0.8, 1.0])
def test_diffusion_is_attenuated_by_gamma(mesh, sloped_state, gamma_exp):
    params = ModelParams(gamma_exp=gamma_exp)
    d_f = 1.0 + 0.5 * np.cos(mesh.node_coords)
    _, _, _, k = element_states(mesh, params, d_f, sloped_state)
    expected = gamma_exp * assemble_weighted_stiffness(mesh, k)
    actual = diffusion_matrix(mesh, params, d_f, sloped_state)
    np.testing.assert_allclose(actual.to_dense(), expected.to_dense(), rtol=1e-14, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 16))
def test_adjoint_operator_is_transpose(seed):
    mesh = build_mesh(-2.0, 2.0, 0.25)
    state = initial_condition(mesh.node_coords) + 0.1 * np.sin(mesh.node_coords)
    params, d_f = ModelParams(), 1.0 + 0.5 * np.cos(mesh.node_coords)
    rng = np.random.default_rng(seed)
    v, p = rng.standard_normal(mesh.node_count), rng.standard_normal(mesh.node_count)
    diffusion = diffusion_matrix(mesh, params, d_f, state)
    convection = convection_matrix(mesh, params, d_f, state)
    forward_side = np.dot((diffusion + convection) @ v, p)
    adjoint_side = np.dot(v, (diffusion + convection.T) @ p)
    scale = np.abs((abs(diffusion) + abs(convection)) @ np.abs(v)) @ np.abs(p)
    assert abs(forward_side - adjoint_side) <= 1e-12 * scale
