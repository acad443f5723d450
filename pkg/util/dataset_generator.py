"""Code for generating the (noisy) height data of the examples."""
import dataclasses
import logging

import numpy as np

from inversion.experiments.examples import build_problem, nodal_truth


@dataclasses.dataclass(frozen=True, eq=False)
class NoisyData:
    """Observed heights and the clean trajectory they were made from."""

    data: np.ndarray
    clean: np.ndarray
    noise_level: float
    seed: int


def clean_trajectory(spec, params=None, integrator=None):
    """Forward solve at the exact coefficient on the inversion mesh.

    With ``spec.fine_data`` the solve runs on a mesh refined once and is
    interpolated nodally onto the inversion mesh.

    Returns
    -------
    np.ndarray
        Clean heights, shape (levels, nodes) of the inversion mesh.
    """
    problem = build_problem(spec, params, integrator)
    if not spec.fine_data:
        return problem.solve(nodal_truth(spec, problem.mesh))
    fine = build_problem(spec, params, integrator, refine=2)
    fine_traj = fine.solve(nodal_truth(spec, fine.mesh))
    logging.info(f"Interpolating data from {fine.mesh.node_count} to {problem.mesh.node_count} nodes")
    return np.array(
        [np.interp(problem.mesh.node_coords, fine.mesh.node_coords, u) for u in fine_traj]
    )


def add_noise(clean, noise_level, seed):
    """Pointwise Gaussian noise eps * max|u| * zeta, zeta ~ N(0, 1) per node and level.

    Parameters
    ----------
    clean: np.ndarray
        Clean space-time field.
    noise_level: float
        Relative noise level eps.
    seed: int
        Seed of ``numpy.random.default_rng`` (PCG64).

    Returns
    -------
    NoisyData
        The noisy data; ``data`` is a copy of ``clean`` when eps = 0.
    """
    if noise_level == 0:
        return NoisyData(clean.copy(), clean, 0.0, seed)
    zeta = np.random.default_rng(seed).standard_normal(clean.shape)
    data = clean + noise_level * np.max(np.abs(clean)) * zeta
    return NoisyData(data, clean, noise_level, seed)


def generate_data(spec, params=None, integrator=None):
    """Synthetic observations of an experiment."""
    return add_noise(clean_trajectory(spec, params, integrator), spec.noise_level, spec.seed)


class DataGenerator:
    """Generate noisy data of one experiment for a sequence of seeds."""

    def __init__(self, spec, seeds, params=None, integrator=None):
        """Initialize the DataGenerator.

        Parameters
        ----------
        spec: ExperimentSpec
            Experiment; its own seed is ignored.
        seeds: Sequence[int]
            Noise seeds.
        params: Optional[ModelParams]
            Model parameters.
        integrator: Optional[GenAlphaConfig]
            Time integrator settings.
        """
        self.spec = spec
        self.seeds = list(seeds)
        self.clean = clean_trajectory(spec, params, integrator)

    def __len__(self):
        return len(self.seeds)

    def __getitem__(self, index):
        return add_noise(self.clean, self.spec.noise_level, self.seeds[index])

    def __call__(self):
        for idx in range(self.__len__()):
            yield self.__getitem__(idx)
