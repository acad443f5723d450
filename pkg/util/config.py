"""Run configuration: shipped defaults < key=value config file < command line flags."""
import argparse
import dataclasses
import json
import os
from typing import Dict, List, Optional

from inversion.experiments.examples import (
    DOMAIN,
    EXAMPLE_IDS,
    ExperimentSpec,
    constant_forcing,
)
from inversion.models.dsw_model import ModelParams
from inversion.models.inverse_solver import InversionConfig
from inversion.models.mesh_fem import build_mesh
from inversion.models.time_integrator import GenAlphaConfig, build_time_grid

SUBCOMMANDS = ("forward", "invert", "table1", "grad-check", "props")
DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json")


class ConfigError(ValueError):
    """Invalid or unknown configuration key."""

    def __init__(self, key, message):
        super().__init__(f"Invalid configuration for '{key}': {message}")
        self.key = key


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one CLI invocation."""

    subcommand: str
    example: str
    h: Optional[float]
    dt: float
    t_end: float
    noise: float
    seed: int
    delta: Optional[float]
    rho_inf: float
    newton_tol: float
    newton_atol: float
    max_newton: int
    step_stop: float
    max_cg: int
    coef_floor: float
    grad_floor: float
    alpha: float
    gamma_exp: float
    bathymetry: float
    forcing: float
    u0_constant: Optional[float]
    fine_data: bool
    tune_delta: bool
    out: str
    num_seeds: int
    processes: int
    examples: List[str]
    noise_levels: List[float]
    delta_grid: List[float]
    default_deltas: Dict[str, Dict[str, float]]

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"must be one of {list(SUBCOMMANDS)}")
        for key in [self.example] + list(self.examples):
            if key not in EXAMPLE_IDS:
                raise ConfigError("example", f"unknown example '{key}'")
        h_values = [self.h] if self.h is not None else []
        for h in h_values:
            try:
                build_mesh(DOMAIN[0], DOMAIN[1], h)
            except ValueError as err:
                raise ConfigError("h", str(err)) from err
        try:
            build_time_grid(self.t_end, self.dt)
        except ValueError as err:
            raise ConfigError("dt", str(err)) from err
        positive = ("newton_tol", "step_stop", "coef_floor", "grad_floor")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        non_negative = ("noise", "newton_atol")
        for key in non_negative:
            if not getattr(self, key) >= 0:
                raise ConfigError(key, "must be non-negative")
        if any(level < 0 for level in self.noise_levels):
            raise ConfigError("noise_levels", "must be non-negative")
        if self.delta is not None and not self.delta >= 0:
            raise ConfigError("delta", "must be non-negative")
        if not 0 <= self.rho_inf <= 1:
            raise ConfigError("rho_inf", "must lie in [0, 1]")
        if not 1 < self.alpha < 2:
            raise ConfigError("alpha", "must lie in (1, 2)")
        if not 0 < self.gamma_exp <= 1:
            raise ConfigError("gamma_exp", "must lie in (0, 1]")
        for key in ("max_newton", "num_seeds", "processes"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be at least 1")
        if self.max_cg < 0:
            raise ConfigError("max_cg", "must be non-negative")
        if self.u0_constant is not None and not self.u0_constant > self.bathymetry:
            raise ConfigError("u0_constant", "must exceed the bathymetry (positive depth)")

    def experiment(self, example=None, noise=None, seed=None):
        """ExperimentSpec for one cell of the run."""
        example = self.example if example is None else example
        noise = self.noise if noise is None else noise
        return ExperimentSpec(
            example_id=example,
            h=self.h,
            dt=self.dt,
            noise_level=noise,
            seed=self.seed if seed is None else seed,
            delta=self.resolved_delta(example, noise),
            t_end=self.t_end,
            fine_data=self.fine_data,
            u0_constant=self.u0_constant,
        )

    def resolved_delta(self, example, noise):
        if self.delta is not None:
            return self.delta
        return default_delta(self.default_deltas, example, noise)

    def model_params(self):
        return ModelParams(
            alpha=self.alpha,
            gamma_exp=self.gamma_exp,
            grad_floor=self.grad_floor,
            forcing=constant_forcing(self.forcing),
            bathymetry=self.bathymetry or None,
        )

    def integrator(self):
        return GenAlphaConfig(
            rho_inf=self.rho_inf,
            newton_tol=self.newton_tol,
            max_iter=self.max_newton,
            newton_atol=self.newton_atol,
        )

    def inversion(self, delta):
        return InversionConfig(
            delta=delta,
            step_stop=self.step_stop,
            max_cg_iters=self.max_cg,
            coef_floor=self.coef_floor,
        )

    def seeds(self):
        return list(range(self.seed, self.seed + self.num_seeds))


FILE_KEYS = tuple(
    f.name for f in dataclasses.fields(RunConfig) if f.name not in ("subcommand", "default_deltas")
)


def default_delta(table, example, noise):
    """Shipped delta of the noise level closest to ``noise``."""
    levels = {float(level): value for level, value in table[example].items()}
    closest = min(levels, key=lambda level: abs(level - noise))
    return float(levels[closest])


def load_defaults(path=DEFAULT_CONFIG_PATH):
    with open(path) as fp:
        return json.load(fp)


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text}")


def _optional(convert):
    def parse(text):
        if str(text).strip().lower() in ("", "none", "null"):
            return None
        return convert(text)

    return parse


def _list_of(convert):
    def parse(text):
        return [convert(item.strip()) for item in str(text).split(",") if item.strip()]

    return parse


CONVERTERS = {
    "example": str,
    "h": _optional(float),
    "dt": float,
    "t_end": float,
    "noise": float,
    "seed": int,
    "delta": _optional(float),
    "rho_inf": float,
    "newton_tol": float,
    "newton_atol": float,
    "max_newton": int,
    "step_stop": float,
    "max_cg": int,
    "coef_floor": float,
    "grad_floor": float,
    "alpha": float,
    "gamma_exp": float,
    "bathymetry": float,
    "forcing": float,
    "u0_constant": _optional(float),
    "fine_data": _parse_bool,
    "tune_delta": _parse_bool,
    "out": str,
    "num_seeds": int,
    "processes": int,
    "examples": _list_of(str),
    "noise_levels": _list_of(float),
    "delta_grid": _list_of(float),
}


def read_config_file(path):
    """Read a flat ``key = value`` file ('#' starts a comment).

    Returns
    -------
    Dict[str, Any]
        Converted values.

    Raises
    ------
    ConfigError
        For unknown keys, malformed lines and unparsable values.
    """
    values = {}
    with open(path) as fp:
        for line_number, line in enumerate(fp, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_number}", f"expected 'key = value' in {path}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONVERTERS:
                raise ConfigError(key, f"unknown key in {path}")
            try:
                values[key] = CONVERTERS[key](value)
            except ValueError as err:
                raise ConfigError(key, str(err)) from err
    return values


def build_parser():
    parser = argparse.ArgumentParser(
        description="Forward solves and coefficient inversion for the diffusive wave equation"
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=str, default=None, help="Flat key=value config file")
    parser.add_argument("--example", type=str, choices=EXAMPLE_IDS, default=None)
    parser.add_argument("--h", type=float, default=None, help="Mesh size")
    parser.add_argument("--dt", type=float, default=None, help="Time step")
    parser.add_argument("--t-end", type=float, default=None, help="Final time")
    parser.add_argument("--noise", type=float, default=None, help="Relative noise level")
    parser.add_argument("--seed", type=int, default=None, help="Noise seed (first seed for table1)")
    parser.add_argument("--delta", type=float, default=None, help="Regularization weight")
    parser.add_argument("--rho-inf", type=float, default=None)
    parser.add_argument("--newton-tol", type=float, default=None)
    parser.add_argument("--newton-atol", type=float, default=None)
    parser.add_argument("--max-newton", type=int, default=None)
    parser.add_argument("--step-stop", type=float, default=None)
    parser.add_argument("--max-cg", type=int, default=None)
    parser.add_argument("--coef-floor", type=float, default=None)
    parser.add_argument("--grad-floor", type=float, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--gamma-exp", type=float, default=None)
    parser.add_argument("--bathymetry", type=float, default=None, help="Constant bed elevation")
    parser.add_argument("--forcing", type=float, default=None, help="Constant source term")
    parser.add_argument("--u0-constant", type=float, default=None, help="Constant initial height")
    parser.add_argument("--fine-data", action="store_true", default=None)
    parser.add_argument("--tune-delta", action="store_true", default=None)
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--num-seeds", type=int, default=None)
    parser.add_argument("--processes", type=int, default=None)
    parser.add_argument("--examples", nargs="+", choices=EXAMPLE_IDS, default=None)
    parser.add_argument("--noise-levels", nargs="+", type=float, default=None)
    parser.add_argument("--delta-grid", nargs="+", type=float, default=None)
    return parser


def parse_config(args=None, defaults_path=DEFAULT_CONFIG_PATH):
    """Resolve the run configuration.

    Parameters
    ----------
    args: Optional[Sequence[str]]
        Command line arguments (``sys.argv[1:]`` when omitted).
    defaults_path: str
        JSON file with the shipped defaults.

    Returns
    -------
    RunConfig
        The validated configuration.

    Raises
    ------
    ConfigError
        Unknown key or invariant violation.
    """
    namespace = build_parser().parse_args(args)
    defaults = load_defaults(defaults_path)
    values = {key: defaults[key] for key in FILE_KEYS}
    values["default_deltas"] = defaults["default_deltas"]
    if namespace.config is not None:
        values.update(read_config_file(namespace.config))
    for key in FILE_KEYS:
        flag = getattr(namespace, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(subcommand=namespace.subcommand, **values)
