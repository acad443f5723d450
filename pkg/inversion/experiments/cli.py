"""Command line entry point: forward solves, inversions, the noise sweep and the property checks."""
import dataclasses
import json
import logging
import os
import sys

# add base path to sys
sys.path.append(os.path.join(os.path.dirname(__file__), "..", ".."))

import numpy as np
from brain_pipe.utils.log import DefaultFormatter, default_logging

from inversion import __version__
from inversion.experiments.examples import build_problem, manning_coefficient, nodal_truth
from inversion.experiments.properties import (
    PropertyResult,
    bounded_map_check,
    duality_check,
    frechet_check,
    frechet_remainders,
    gradient_check,
    gradient_refinement_check,
    lipschitz_check,
    log_results,
    smooth_random_field,
)
from inversion.experiments.table1 import (
    run_inversion,
    run_table1,
    summarize,
    tune_default_deltas,
    tune_delta,
    write_csv,
    write_table,
)
from inversion.models.inverse_solver import SOLVER_ERRORS
from util.config import ConfigError, parse_config
from util.dataset_generator import generate_data

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

# Corrector tolerance of the finite-difference and remainder checks.
PROPERTY_NEWTON_TOL = 1e-10


def setup_logging(out_dir):
    """Log to ``<out_dir>/dsw.log`` and the console."""
    os.makedirs(out_dir, exist_ok=True)
    file_handler = logging.FileHandler(os.path.join(out_dir, "dsw.log"))
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(DefaultFormatter())
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(DefaultFormatter())
    default_logging(handlers=[file_handler, console_handler])


def write_manifest(config, outputs, status, partial=False, extra=None):
    """JSON manifest next to the outputs: resolved config, seed and code version."""
    manifest = {
        "version": __version__,
        "subcommand": config.subcommand,
        "seed": config.seed,
        "status": status,
        "partial": partial,
        "outputs": [os.path.basename(path) for path in outputs],
        "config": dataclasses.asdict(config),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(config.out, "manifest.json")
    with open(path, "w") as fp:
        json.dump(manifest, fp, indent=2)
    logging.info(f"Manifest saved at {path}")
    return path


def cmd_forward(config):
    """Forward solve at the exact coefficient; writes trajectory.csv (t, x, u)."""
    spec = config.experiment()
    problem = build_problem(spec, config.model_params(), config.integrator())
    try:
        u_traj = problem.solve(nodal_truth(spec, problem.mesh))
    except SOLVER_ERRORS as err:
        logging.error(f"Forward solve failed: {err}")
        write_manifest(config, [], f"solver_failure: {err}", partial=True)
        return EXIT_FAILURE
    rows = [
        (t, x, u)
        for t, level in zip(problem.grid.times, u_traj)
        for x, u in zip(problem.mesh.node_coords, level)
    ]
    path = write_csv(os.path.join(config.out, "trajectory.csv"), ("t", "x", "u"), rows)
    logging.info(f"Trajectory with {len(u_traj)} levels saved at {path}")
    write_manifest(config, [path], "ok")
    return EXIT_OK


def cmd_invert(config):
    """One inversion; writes reconstruction.csv and convergence.csv."""
    spec = config.experiment()
    params, integrator = config.model_params(), config.integrator()
    inversion = config.inversion(spec.delta)
    extra = {}
    try:
        if config.tune_delta:
            delta, errors = tune_delta(spec, config.delta_grid, inversion, params, integrator)
            spec = dataclasses.replace(spec, delta=delta)
            extra["delta_errors"] = {repr(k): v for k, v in errors.items()}
        report, problem, _ = run_inversion(spec, inversion, params, integrator)
    except SOLVER_ERRORS as err:
        logging.error(f"Data generation failed: {err}")
        write_manifest(config, [], f"solver_failure: {err}", partial=True, extra=extra)
        return EXIT_FAILURE

    mesh = problem.mesh
    truth = nodal_truth(spec, mesh)
    reconstruction = write_csv(
        os.path.join(config.out, "reconstruction.csv"),
        ("x", "d_f", "d_f_true", "c_f"),
        zip(mesh.node_coords, report.final_coefficient, truth,
            manning_coefficient(report.final_coefficient)),
    )
    history = [(0, report.initial_objective, report.initial_error, np.nan, np.nan)]
    history += [(r.iteration, r.objective, r.error, r.theta, r.beta) for r in report.records]
    convergence = write_csv(
        os.path.join(config.out, "convergence.csv"), ("k", "J", "e", "theta", "beta"), history
    )
    extra.update({
        "delta": spec.delta,
        "termination": report.termination_reason,
        "iterations": report.iterations,
        "final_error": report.final_error,
        "best_error": report.best_error,
        "best_iteration": report.best_iteration,
    })
    logging.info(
        f"{spec.example_id}: e={report.final_error} after {report.iterations} iterations "
        f"({report.termination_reason})"
    )
    status = "ok" if not report.failed else report.termination_reason
    write_manifest(config, [reconstruction, convergence], status, report.failed, extra)
    return EXIT_FAILURE if report.failed else EXIT_OK


def _tuned_deltas(config, cells, params, integrator):
    """Grid search of delta per (example, noise level) on ``config.seed``."""
    specs = [config.experiment(example, noise, config.seed) for example, noise in cells]
    deltas, rows = tune_default_deltas(
        specs, config.delta_grid, config.inversion(0.0), params, integrator
    )
    path = write_csv(
        os.path.join(config.out, "delta_tuning.csv"),
        ("example", "noise", "delta", "error", "selected"),
        rows,
    )
    logging.info(f"Selected default_deltas: {json.dumps(deltas)}")
    return deltas, path


def cmd_table1(config):
    """Noise sweep over examples, noise levels and seeds."""
    params, integrator = config.model_params(), config.integrator()
    cells = [(example, noise) for example in config.examples for noise in config.noise_levels]
    outputs, extra = [], {"seeds": config.seeds()}
    deltas = None
    if config.tune_delta:
        try:
            deltas, tuning = _tuned_deltas(config, cells, params, integrator)
        except SOLVER_ERRORS as err:
            logging.error(f"Delta tuning failed: {err}")
            write_manifest(config, [], f"solver_failure: {err}", partial=True, extra=extra)
            return EXIT_FAILURE
        outputs.append(tuning)
        extra["default_deltas"] = deltas
    specs = []
    for example, noise in cells:
        for seed in config.seeds():
            spec = config.experiment(example, noise, seed)
            if deltas is not None:
                spec = dataclasses.replace(spec, delta=deltas[example][str(float(noise))])
            specs.append(spec)
    logging.info(f"Running {len(specs)} inversions on {config.processes} process(es)")
    rows = run_table1(specs, config.inversion(0.0), params, integrator, config.processes)
    table = write_table(os.path.join(config.out, "table1.csv"), rows)
    summary_rows = summarize(rows)
    summary = write_csv(
        os.path.join(config.out, "table1_summary.csv"),
        ("example", "noise", "mean_error", "runs", "failed"),
        [[entry[key] for key in ("example", "noise", "mean_error", "runs", "failed")]
         for entry in summary_rows],
    )
    failed = sum(entry["failed"] for entry in summary_rows)
    for entry in summary_rows:
        logging.info(
            f"{entry['example']} eps={entry['noise']}: mean e={entry['mean_error']:.4e} "
            f"over {entry['runs']} run(s)"
        )
    status = "ok" if not failed else f"{failed} failed run(s)"
    write_manifest(config, outputs + [table, summary], status, partial=bool(failed), extra=extra)
    return EXIT_FAILURE if failed else EXIT_OK


def _fixed_direction(seed):
    def direction(problem):
        return smooth_random_field(problem.mesh, np.random.default_rng(seed))

    return direction


def _property_integrator(config):
    integrator = config.integrator()
    return dataclasses.replace(integrator, newton_tol=min(integrator.newton_tol, PROPERTY_NEWTON_TOL))


def gradient_suite(config):
    """Finite-difference and duality checks of the adjoint gradient at d_f = 1."""
    spec = config.experiment()
    params, integrator = config.model_params(), _property_integrator(config)
    fine_spec = dataclasses.replace(spec, h=spec.mesh_size / 2.0, dt=spec.dt / 2.0)
    coarse = build_problem(spec, params, integrator)
    fine = build_problem(fine_spec, params, integrator)
    data = {
        coarse: generate_data(spec, params, integrator).data,
        fine: generate_data(fine_spec, params, integrator).data,
    }
    direction = _fixed_direction(config.seed)
    start = config.inversion(spec.delta).start
    return [
        gradient_check(coarse, start(coarse.mesh), data[coarse], spec.delta,
                       direction(coarse)),
        gradient_refinement_check(
            coarse, fine, lambda p: start(p.mesh), lambda p: data[p], spec.delta, direction
        ),
        duality_check(coarse, start(coarse.mesh), data[coarse], direction(coarse)),
    ]


def regularity_suite(config):
    """Frechet remainder, Lipschitz and bounded linearization checks."""
    spec = config.experiment()
    problem = build_problem(spec, config.model_params(), _property_integrator(config))
    rng = np.random.default_rng(config.seed)
    d_f = nodal_truth(spec, problem.mesh)
    directions = [smooth_random_field(problem.mesh, rng) for _ in range(3)]
    zero_ratios = frechet_remainders(problem, d_f, np.zeros(problem.mesh.node_count))
    return [
        frechet_check(problem, d_f, directions),
        PropertyResult("frechet_zero_direction", all(r == 0 for r in zero_ratios),
                       {"ratios": zero_ratios}),
        lipschitz_check(problem, rng),
        bounded_map_check(problem, d_f, rng),
    ]


def _report_properties(config, results):
    for result in results:
        print(result.summary())
    passed = log_results(results)
    path = os.path.join(config.out, "properties.json")
    with open(path, "w") as fp:
        json.dump([dataclasses.asdict(result) for result in results], fp, indent=2)
    write_manifest(config, [path], "ok" if passed else "property_failure")
    return EXIT_OK if passed else EXIT_FAILURE


def _run_suites(config, suites):
    results = []
    try:
        for suite in suites:
            results.extend(suite(config))
    except SOLVER_ERRORS as err:
        logging.error(f"Property check aborted: {err}")
        write_manifest(config, [], f"solver_failure: {err}", partial=True)
        return EXIT_FAILURE
    return _report_properties(config, results)


def cmd_grad_check(config):
    return _run_suites(config, [gradient_suite])


def cmd_props(config):
    return _run_suites(config, [gradient_suite, regularity_suite])


COMMANDS = {
    "forward": cmd_forward,
    "invert": cmd_invert,
    "table1": cmd_table1,
    "grad-check": cmd_grad_check,
    "props": cmd_props,
}


def main(argv=None):
    try:
        config = parse_config(argv)
    except (ConfigError, OSError) as err:
        logging.error(str(err))
        return EXIT_CONFIG
    setup_logging(config.out)
    logging.info(f"Running '{config.subcommand}' (version {__version__})")
    return COMMANDS[config.subcommand](config)


if __name__ == "__main__":
    sys.exit(main())
