import numpy as np
import pytest

from inversion.experiments.examples import ExperimentSpec, nodal_truth
from inversion.experiments.table1 import run_inversion
from inversion.models.inverse_solver import (
    ForwardProblem,
    InversionConfig,
    NullDirectionError,
    compute_raw_gradient,
    evaluate_objective,
    fletcher_reeves_beta,
    gradient_from_adjoint,
    run_cg,
    smooth_gradient,
    step_size,
)
from inversion.models import inverse_solver
from inversion.models.mesh_fem import SingularMatrixError, assemble_mass, build_mesh, h1_seminorm
from inversion.models.time_integrator import build_time_grid
from util.config import default_delta, load_defaults
from util.dataset_generator import generate_data


@pytest.fixture
def coarse_data(coarse_spec, coarse_problem):
    return coarse_problem.solve(nodal_truth(coarse_spec, coarse_problem.mesh))


def test_objective_vanishes_at_the_truth(coarse_spec, coarse_problem, coarse_data):
    truth = nodal_truth(coarse_spec, coarse_problem.mesh)
    objective, u_traj, r_traj = evaluate_objective(coarse_problem, truth, coarse_data, 0.0)
    assert objective == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_array_equal(u_traj, coarse_data)
    np.testing.assert_array_equal(r_traj, 0.0)


def test_objective_penalty(coarse_spec, coarse_problem, coarse_data):
    truth = nodal_truth(coarse_spec, coarse_problem.mesh)
    objective, _, _ = evaluate_objective(coarse_problem, truth, coarse_data, 1e-2)
    assert objective == pytest.approx(0.5e-2 * h1_seminorm(coarse_problem.mesh, truth) ** 2)


def test_fletcher_reeves_beta():
    mesh = build_mesh(-2.0, 2.0, 0.5)
    ones = np.ones(mesh.node_count)
    assert fletcher_reeves_beta(mesh, ones, None) == 0.0
    assert fletcher_reeves_beta(mesh, 2.0 * ones, ones) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        fletcher_reeves_beta(mesh, ones, np.zeros(mesh.node_count))


def test_step_size_of_proportional_residual():
    mesh = build_mesh(-2.0, 2.0, 0.5)
    grid = build_time_grid(0.5, 0.05)
    v_traj = np.outer(grid.times, np.cos(mesh.node_coords))
    d_f = np.ones(mesh.node_count)
    d_k = np.sin(mesh.node_coords)
    assert step_size(mesh, grid, 2.0 * v_traj, v_traj, d_f, d_k, 0.0) == pytest.approx(2.0)
    # constant d_f has no penalty gradient, only the denominator changes
    theta = step_size(mesh, grid, 2.0 * v_traj, v_traj, d_f, d_k, 1e-3)
    assert 0 < theta < 2.0


def test_step_size_null_direction():
    mesh = build_mesh(-2.0, 2.0, 0.5)
    grid = build_time_grid(0.5, 0.05)
    zeros = np.zeros((grid.level_count, mesh.node_count))
    with pytest.raises(NullDirectionError):
        step_size(mesh, grid, zeros, zeros, np.ones(mesh.node_count),
                  np.zeros(mesh.node_count), 0.0)


def test_smooth_gradient_of_constant_load():
    mesh = build_mesh(-2.0, 2.0, 0.5)
    smooth = smooth_gradient(mesh, assemble_mass(mesh) @ np.full(mesh.node_count, 3.0))
    np.testing.assert_allclose(smooth, 3.0, atol=1e-12)


def test_gradient_matches_finite_difference(default_problem, tight_integrator):
    spec = ExperimentSpec("cont")
    data = generate_data(spec, integrator=tight_integrator).data
    mesh = default_problem.mesh
    d_f = np.ones(mesh.node_count)
    direction = np.cos(np.pi * mesh.node_coords / 4.0)
    _, u_traj, r_traj = evaluate_objective(default_problem, d_f, data, 0.0)
    derivative = np.dot(compute_raw_gradient(default_problem, d_f, u_traj, r_traj, 0.0), direction)
    eps = 1e-4
    plus, _, _ = evaluate_objective(default_problem, d_f + eps * direction, data, 0.0)
    minus, _, _ = evaluate_objective(default_problem, d_f - eps * direction, data, 0.0)
    assert derivative == pytest.approx((plus - minus) / (2.0 * eps), rel=5e-2)


def test_gradient_is_linear_in_adjoint(coarse_spec, coarse_problem, coarse_data):
    mesh = coarse_problem.mesh
    p_traj = np.outer(np.ones(coarse_problem.grid.level_count), mesh.node_coords)
    single = gradient_from_adjoint(coarse_problem, coarse_data, p_traj)
    double = gradient_from_adjoint(coarse_problem, coarse_data, 2.0 * p_traj)
    np.testing.assert_allclose(double, 2.0 * single)
    # the data decreases left to right, so the flux density is negative
    assert single.sum() > 0


def test_inversion_config_validation():
    with pytest.raises(ValueError):
        InversionConfig(delta=-1.0)
    with pytest.raises(ValueError):
        InversionConfig(step_stop=0.0)
    with pytest.raises(ValueError):
        InversionConfig(max_cg_iters=-1)
    mesh = build_mesh(-2.0, 2.0, 0.5)
    np.testing.assert_array_equal(InversionConfig().start(mesh), 1.0)
    np.testing.assert_array_equal(
        InversionConfig(initial_guess=np.full(mesh.node_count, 2.0)).start(mesh), 2.0
    )


def test_run_cg_without_iterations(coarse_spec, coarse_problem, coarse_data):
    truth = nodal_truth(coarse_spec, coarse_problem.mesh)
    report = run_cg(coarse_problem, coarse_data, InversionConfig(max_cg_iters=0), truth)
    assert report.iterations == 0
    assert report.termination_reason == "max_iterations"
    assert report.final_error == pytest.approx(report.initial_error)
    np.testing.assert_array_equal(report.final_coefficient, 1.0)


def test_singular_trial_solve_halves_the_step(monkeypatch, coarse_spec, coarse_problem, coarse_data):
    calls = []
    evaluate = inverse_solver.evaluate_objective

    def singular_on_first_trial(*args):
        calls.append(args)
        if len(calls) == 2:
            raise SingularMatrixError("Zero pivot in the trial solve", level=1)
        return evaluate(*args)

    monkeypatch.setattr(inverse_solver, "evaluate_objective", singular_on_first_trial)
    truth = nodal_truth(coarse_spec, coarse_problem.mesh)
    report = run_cg(coarse_problem, coarse_data, InversionConfig(delta=1e-6, max_cg_iters=1), truth)
    assert len(calls) >= 3
    assert not report.termination_reason.startswith("solver_failure")


def test_run_cg_decreases_objective(coarse_spec, coarse_problem, coarse_data):
    truth = nodal_truth(coarse_spec, coarse_problem.mesh)
    report = run_cg(coarse_problem, coarse_data, InversionConfig(delta=1e-6, max_cg_iters=15), truth)
    assert not report.failed
    assert report.iterations >= 1
    objectives = np.array(report.objectives)
    assert np.all(objectives > 0)
    assert np.all(np.diff(objectives) <= 0)
    assert report.final_error < report.initial_error
    assert report.best_error <= report.final_error
    assert report.records[0].beta == 0.0
    assert np.all(report.final_coefficient >= 1e-3)


def test_run_cg_without_truth(coarse_problem, coarse_data):
    report = run_cg(coarse_problem, coarse_data, InversionConfig(max_cg_iters=2))
    assert report.initial_error is None
    assert all(record.error is None for record in report.records)
    assert report.best_iteration is None


def test_run_cg_reports_solver_failure(coarse_problem, coarse_data):
    dry = ForwardProblem(
        coarse_problem.mesh, coarse_problem.grid, coarse_problem.params,
        np.full(coarse_problem.mesh.node_count, -1.0),
    )
    report = run_cg(dry, coarse_data, InversionConfig())
    assert report.failed
    assert report.termination_reason.startswith("solver_failure")
    assert report.iterations == 0


@pytest.mark.slow
@pytest.mark.parametrize("example_id, bound", [("cont", 2e-2), ("discont", 9e-2), ("disc2", 8e-2)])
def test_noise_free_reconstruction(example_id, bound):
    delta = default_delta(load_defaults()["default_deltas"], example_id, 0.0)
    report, _, _ = run_inversion(ExperimentSpec(example_id, delta=delta))
    assert not report.failed
    assert report.final_error <= bound
    assert np.all(np.diff(report.objectives) <= 0)
