"""Noise-level sweep over the examples and result persistence."""
import concurrent.futures
import csv
import dataclasses
import logging
import os
import time

import numpy as np

from inversion.experiments.examples import build_problem, nodal_truth
from inversion.models.inverse_solver import InversionConfig, run_cg
from util.dataset_generator import DataGenerator, generate_data

TABLE_COLUMNS = (
    "example", "noise", "seed", "delta", "error", "iterations",
    "final_objective", "termination", "wall_time",
)


@dataclasses.dataclass(frozen=True)
class TableRow:
    example: str
    noise: float
    seed: int
    delta: float
    error: float
    iterations: int
    final_objective: float
    termination: str
    wall_time: float

    def sort_key(self):
        return (self.example, self.noise, self.seed, self.delta)

    @property
    def failed(self):
        return self.termination.startswith(("solver_failure", "error")) or not np.isfinite(self.error)

    def as_list(self):
        return [getattr(self, column) for column in TABLE_COLUMNS]


def run_inversion(spec, inversion=None, params=None, integrator=None, data=None):
    """Generate the data of ``spec`` and invert it.

    Parameters
    ----------
    spec: ExperimentSpec
        The experiment; ``spec.delta`` must be resolved.
    inversion: Optional[InversionConfig]
        Loop settings; its delta is replaced by ``spec.delta``.
    params: Optional[ModelParams]
        Model parameters.
    integrator: Optional[GenAlphaConfig]
        Time integrator settings.
    data: Optional[NoisyData]
        Observations; generated from ``spec`` when omitted.

    Returns
    -------
    Tuple[InversionReport, ForwardProblem, NoisyData]
        The report, the inversion problem and the data.
    """
    if spec.delta is None:
        raise ValueError("The experiment has no regularization weight.")
    inversion = dataclasses.replace(inversion or InversionConfig(), delta=spec.delta)
    problem = build_problem(spec, params, integrator)
    if data is None:
        data = generate_data(spec, params, integrator)
    report = run_cg(problem, data.data, inversion, truth=nodal_truth(spec, problem.mesh))
    return report, problem, data


def tune_delta(spec, grid, inversion=None, params=None, integrator=None):
    """Pick delta from ``grid`` by the smallest final error (trial and error).

    Returns
    -------
    Tuple[float, Dict[float, float]]
        The selected delta and the final error of every candidate.
    """
    data = generate_data(spec, params, integrator)
    errors = {}
    for delta in grid:
        candidate = dataclasses.replace(spec, delta=float(delta))
        report, _, _ = run_inversion(candidate, inversion, params, integrator, data)
        errors[float(delta)] = report.final_error if not report.failed else np.inf
        logging.info(
            f"delta={delta:.1e}: e={errors[float(delta)]:.4e} "
            f"({report.iterations} iterations, {report.termination_reason})"
        )
    best = min(errors, key=errors.get)
    logging.info(f"Selected delta={best:.1e} for {spec.example_id}, eps={spec.noise_level}")
    return best, errors


def tune_default_deltas(specs, grid, inversion=None, params=None, integrator=None):
    """Run ``tune_delta`` for each experiment of ``specs`` (one seed each).

    Returns
    -------
    Tuple[Dict[str, Dict[str, float]], List[Tuple[str, float, float, float, bool]]]
        The selected weights in the ``default_deltas`` layout of
        util/config.json and one (example, noise, delta, error, selected)
        row per candidate.
    """
    table, rows = {}, []
    for spec in specs:
        best, errors = tune_delta(spec, grid, inversion, params, integrator)
        table.setdefault(spec.example_id, {})[str(float(spec.noise_level))] = best
        rows.extend(
            (spec.example_id, spec.noise_level, delta, error, delta == best)
            for delta, error in errors.items()
        )
    return table, rows


def _failed_row(spec, err, wall_time):
    logging.error(f"{spec.example_id} eps={spec.noise_level} seed={spec.seed} failed: {err}")
    return TableRow(
        spec.example_id, spec.noise_level, spec.seed, spec.delta, float("nan"), 0,
        float("nan"), f"error: {err}", wall_time,
    )


def _run_cell(job):
    spec, data, inversion, params, integrator = job
    start = time.perf_counter()
    try:
        report, _, _ = run_inversion(spec, inversion, params, integrator, data)
    except Exception as err:  # noqa: BLE001
        return _failed_row(spec, err, time.perf_counter() - start)
    return TableRow(
        spec.example_id,
        spec.noise_level,
        spec.seed,
        spec.delta,
        float(report.final_error),
        report.iterations,
        float(report.final_objective),
        report.termination_reason,
        time.perf_counter() - start,
    )


def _sweep_jobs(specs, inversion, params, integrator):
    """One DataGenerator (one clean solve) per experiment, noisy data per seed."""
    groups = {}
    for spec in specs:
        groups.setdefault(dataclasses.replace(spec, seed=0), []).append(spec)
    jobs, failed = [], []
    for base, members in groups.items():
        try:
            generator = DataGenerator(base, [spec.seed for spec in members], params, integrator)
        except Exception as err:  # noqa: BLE001
            failed.extend(_failed_row(spec, err, 0.0) for spec in members)
            continue
        jobs.extend(
            (spec, data, inversion, params, integrator)
            for spec, data in zip(members, generator())
        )
    return jobs, failed


def run_table1(specs, inversion=None, params=None, integrator=None, processes=1):
    """Run every experiment of the sweep.

    Parameters
    ----------
    specs: Sequence[ExperimentSpec]
        One spec per (example, noise level, seed) with resolved delta.
    inversion: Optional[InversionConfig]
        Loop settings shared by all cells.
    params: Optional[ModelParams]
        Model parameters.
    integrator: Optional[GenAlphaConfig]
        Time integrator settings.
    processes: int
        Number of worker processes; cells are independent.

    Returns
    -------
    List[TableRow]
        Rows sorted by (example, noise, seed, delta).
    """
    jobs, rows = _sweep_jobs(specs, inversion, params, integrator)
    if processes > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=processes) as executor:
            rows += list(executor.map(_run_cell, jobs))
    else:
        rows += [_run_cell(job) for job in jobs]
    for row in rows:
        logging.info(
            f"{row.example} eps={row.noise} seed={row.seed}: e={row.error:.4e} "
            f"({row.iterations} iterations, {row.termination})"
        )
    return sorted(rows, key=TableRow.sort_key)


def summarize(rows):
    """Mean error per (example, noise level) over seeds, failures excluded."""
    groups = {}
    for row in rows:
        groups.setdefault((row.example, row.noise), []).append(row)
    summary = []
    for (example, noise), group in sorted(groups.items()):
        finite = [row.error for row in group if not row.failed]
        mean = float(np.mean(finite)) if finite else float("nan")
        summary.append({"example": example, "noise": noise, "mean_error": mean,
                        "runs": len(group), "failed": len(group) - len(finite)})
    return summary


def _format(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """Write rows with a header (UTF-8, '.' decimals, floats at full precision)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(value) for value in row])
    return path


def write_table(path, rows, timing=True):
    """Write the sweep rows; ``timing=False`` drops the wall time column."""
    columns = TABLE_COLUMNS if timing else TABLE_COLUMNS[:-1]
    return write_csv(path, columns, [row.as_list()[: len(columns)] for row in rows])


def mean_error(rows, example, noise):
    for entry in summarize(rows):
        if entry["example"] == example and entry["noise"] == noise:
            return entry["mean_error"]
    return None
