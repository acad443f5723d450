"""Empirical checks of the gradient and of the forward map's regularity.

Each check returns a PropertyResult with the measured quantities, so the
command line can report them and tests can assert on them.
"""
import dataclasses
import logging
from typing import Any, Dict

import numpy as np

from inversion.models.inverse_solver import (
    compute_raw_gradient,
    evaluate_objective,
    gradient_from_adjoint,
)
from inversion.models.mesh_fem import space_time_h1, space_time_inner


@dataclasses.dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    measured: Dict[str, Any]

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        details = ", ".join(f"{key}={_short(value)}" for key, value in self.measured.items())
        return f"[{status}] {self.name}: {details}"


def _short(value):
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    if isinstance(value, (float, np.floating)):
        return f"{value:.4e}"
    return str(value)


def smooth_random_field(mesh, rng, low=-1.0, high=1.0, modes=3):
    """Random combination of cosine modes mapped into a random sub-interval of [low, high].

    The field is a function of position only, so the same generator state
    gives the same function on every mesh of the interval.
    """
    x = (mesh.node_coords - mesh.left_endpoint) / (mesh.right_endpoint - mesh.left_endpoint)
    amplitudes = rng.standard_normal(modes)
    phases = rng.uniform(0.0, np.pi, modes)
    lo, hi = np.sort(rng.uniform(low, high, size=2))
    field = sum(
        a * np.cos((m + 1) * np.pi * x + phase)
        for m, (a, phase) in enumerate(zip(amplitudes, phases))
    )
    scale = np.sum(np.abs(amplitudes))
    if scale == 0:
        return np.full(mesh.node_count, 0.5 * (lo + hi))
    return lo + (hi - lo) * 0.5 * (field / scale + 1.0)


def gradient_check(problem, d_f, data_g, delta, direction, eps=1e-4, rtol=5e-2):
    """Adjoint directional derivative against a central difference of J."""
    _, u_traj, r_traj = evaluate_objective(problem, d_f, data_g, delta)
    raw = compute_raw_gradient(problem, d_f, u_traj, r_traj, delta)
    adjoint = float(np.dot(raw, direction))
    j_plus, _, _ = evaluate_objective(problem, d_f + eps * direction, data_g, delta)
    j_minus, _, _ = evaluate_objective(problem, d_f - eps * direction, data_g, delta)
    finite_difference = (j_plus - j_minus) / (2.0 * eps)
    rel_error = abs(adjoint - finite_difference) / max(abs(finite_difference), 1e-300)
    return PropertyResult(
        "gradient",
        bool(rel_error <= rtol),
        {"adjoint": adjoint, "finite_difference": finite_difference, "rel_error": rel_error},
    )


def gradient_refinement_check(coarse, fine, d_f_fn, data_fn, delta, direction_fn, eps=1e-4, rtol=5e-2):
    """The gradient mismatch passes on the coarse problem and shrinks on the fine one.

    ``d_f_fn``, ``data_fn`` and ``direction_fn`` map a ForwardProblem to the
    coefficient, the data and the direction on its mesh.
    """
    results = [
        gradient_check(p, d_f_fn(p), data_fn(p), delta, direction_fn(p), eps, rtol)
        for p in (coarse, fine)
    ]
    coarse_err, fine_err = (r.measured["rel_error"] for r in results)
    return PropertyResult(
        "gradient_refinement",
        bool(coarse_err <= rtol and fine_err < coarse_err),
        {"coarse_rel_error": coarse_err, "fine_rel_error": fine_err},
    )


def duality_check(problem, d_f, data_g, direction, rtol=1e-2):
    """int <r, u'(d_f) d> dt against -int int d w p_x u_x dx dt."""
    _, u_traj, r_traj = evaluate_objective(problem, d_f, data_g, 0.0)
    v_traj = problem.sensitivity(d_f, u_traj, direction)
    p_traj = problem.adjoint(d_f, u_traj, r_traj)
    lhs = space_time_inner(problem.mesh, problem.grid.dt, r_traj, v_traj)
    rhs = float(np.dot(gradient_from_adjoint(problem, u_traj, p_traj), direction))
    rel_error = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return PropertyResult(
        "duality", bool(rel_error <= rtol), {"sensitivity_side": lhs, "adjoint_side": rhs,
                                             "rel_error": rel_error}
    )


def frechet_remainders(problem, d_f, direction, ts=(1e-1, 1e-2, 1e-3)):
    """||u(d_f + t d) - u(d_f) - t u'(d_f) d||_{L2(H1)} / t for each t."""
    u_traj = problem.solve(d_f)
    v_traj = problem.sensitivity(d_f, u_traj, direction)
    ratios = []
    for t in ts:
        remainder = problem.solve(d_f + t * direction) - u_traj - t * v_traj
        ratios.append(space_time_h1(problem.mesh, problem.grid, remainder) / t)
    return ratios


def frechet_check(problem, d_f, directions, ts=(1e-1, 1e-2, 1e-3)):
    """Remainder ratios strictly decrease with t for every direction."""
    all_ratios = [frechet_remainders(problem, d_f, d, ts) for d in directions]
    passed = all(
        all(later < earlier for earlier, later in zip(ratios, ratios[1:])) or not any(ratios)
        for ratios in all_ratios
    )
    return PropertyResult("frechet_remainder", bool(passed), {"ratios": all_ratios})


def lipschitz_check(problem, rng, pairs=10, low=0.5, high=3.0, max_spread=10.0):
    """Difference quotients of the forward map stay within one bounded band."""
    quotients = []
    for _ in range(pairs):
        first = smooth_random_field(problem.mesh, rng, low, high)
        second = smooth_random_field(problem.mesh, rng, low, high)
        gap = np.max(np.abs(first - second))
        if gap == 0:
            continue
        difference = problem.solve(first) - problem.solve(second)
        quotients.append(space_time_h1(problem.mesh, problem.grid, difference) / gap)
    if not quotients:
        return PropertyResult("lipschitz", False, {"pairs": 0})
    quotients = np.array(quotients)
    spread = quotients.max() / quotients.min() if quotients.min() > 0 else np.inf
    return PropertyResult(
        "lipschitz",
        bool(np.all(np.isfinite(quotients)) and spread <= max_spread),
        {"max_quotient": float(quotients.max()), "min_quotient": float(quotients.min()),
         "spread": float(spread)},
    )


def bounded_map_check(problem, d_f, rng, directions=10, max_spread=10.0):
    """||u'(d_f) d||_{L2(H1)} over random directions with ||d||_inf = 1."""
    u_traj = problem.solve(d_f)
    norms = []
    for _ in range(directions):
        direction = smooth_random_field(problem.mesh, rng, -1.0, 1.0)
        direction /= np.max(np.abs(direction))
        v_traj = problem.sensitivity(d_f, u_traj, direction)
        norms.append(space_time_h1(problem.mesh, problem.grid, v_traj))
    if not norms:
        return PropertyResult("bounded_linearization", False, {"directions": 0})
    norms = np.array(norms)
    spread = norms.max() / norms.min() if norms.min() > 0 else np.inf
    return PropertyResult(
        "bounded_linearization",
        bool(np.all(np.isfinite(norms)) and spread <= max_spread),
        {"max_norm": float(norms.max()), "min_norm": float(norms.min()), "spread": float(spread)},
    )


def log_results(results):
    for result in results:
        log = logging.info if result.passed else logging.warning
        log(result.summary())
    return all(result.passed for result in results)
