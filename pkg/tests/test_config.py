import numpy as np
import pytest

from inversion.models.mesh_fem import build_mesh
from util.config import ConfigError, default_delta, parse_config, read_config_file


def test_invert_defaults():
    config = parse_config(["invert"])
    spec = config.experiment()
    assert spec.example_id == "cont"
    assert spec.mesh_size == 0.25
    assert spec.dt == pytest.approx(1.0 / 40.0)
    assert config.integrator().rho_inf == pytest.approx(0.1)
    inversion = config.inversion(spec.delta)
    assert inversion.step_stop == pytest.approx(1e-3)
    np.testing.assert_array_equal(inversion.start(build_mesh(-2.0, 2.0, 0.25)), 1.0)
    assert config.model_params().alpha == pytest.approx(5.0 / 3.0)
    assert config.model_params().forcing is None


def test_noise_flag():
    config = parse_config(["invert", "--noise", "0.02"])
    assert config.experiment().noise_level == 0.02


def test_non_dividing_mesh_size_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(["forward", "--h", "0.3"])
    assert info.value.key == "h"


@pytest.mark.parametrize(
    "flags, key",
    [
        (["--rho-inf", "1.5"], "rho_inf"),
        (["--dt", "0.3"], "dt"),
        (["--noise", "-0.1"], "noise"),
        (["--max-newton", "0"], "max_newton"),
        (["--alpha", "2.5"], "alpha"),
        (["--u0-constant", "-1"], "u0_constant"),
    ],
)
def test_invalid_values_name_the_key(flags, key):
    with pytest.raises(ConfigError) as info:
        parse_config(["invert"] + flags)
    assert info.value.key == key
    assert key in str(info.value)


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        parse_config(["plot"])


def test_precedence_flags_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# sweep settings\nnoise = 0.01\nseed = 3\nfine-data = yes\nexamples = cont, disc2\n")
    config = parse_config(["table1", "--config", str(path), "--seed", "5"])
    assert config.noise == 0.01
    assert config.seed == 5
    assert config.fine_data is True
    assert config.examples == ["cont", "disc2"]
    assert config.seeds() == [5, 6, 7, 8, 9]


def test_unknown_file_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("mesh_width = 0.25\n")
    with pytest.raises(ConfigError) as info:
        read_config_file(path)
    assert info.value.key == "mesh_width"


def test_malformed_file_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = three\n")
    with pytest.raises(ConfigError) as info:
        read_config_file(path)
    assert info.value.key == "seed"
    path.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_optional_values_in_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("h = none\ndelta = 1e-4\n")
    values = read_config_file(path)
    assert values == {"h": None, "delta": 1e-4}


def test_delta_resolution():
    config = parse_config(["invert", "--noise", "0.018"])
    assert config.experiment().delta == default_delta(config.default_deltas, "cont", 0.02)
    assert parse_config(["invert", "--delta", "0.003"]).experiment().delta == 0.003


def test_default_delta_picks_nearest_level():
    table = {"cont": {"0.0": 1.0, "0.01": 2.0, "0.02": 3.0}}
    assert default_delta(table, "cont", 0.0) == 1.0
    assert default_delta(table, "cont", 0.018) == 3.0
    assert default_delta(table, "cont", 0.5) == 3.0


def test_model_overrides():
    config = parse_config(["forward", "--bathymetry", "0.2", "--forcing", "0.1", "--gamma-exp", "0.4"])
    params = config.model_params()
    assert params.bathymetry == 0.2
    assert params.gamma_exp == 0.4
    np.testing.assert_allclose(params.forcing(np.zeros(3), 0.0), 0.1)
