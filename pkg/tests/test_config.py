import math
import textwrap
from pathlib import Path

import pytest

from maxfl_sim.config import (ExperimentConfig, MeanEstConfig, is_meanest_config, load_toml,
                              meanest_from_dict, parse_config, parse_meanest_config)
from maxfl_sim.core import ConfigError, WeightMode
from maxfl_sim.data import Scheme
from maxfl_sim.server import AlgorithmKind, ParticipationMode

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[algorithm]
kind = "maxfl"

[data]
scheme = "dirichlet"
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    assert cfg.warmup_steps == 100
    assert cfg.data.split_ratio == 0.6
    assert (cfg.M, cfg.m, cfg.T) == (50, 5, 100)
    assert cfg.algorithm.kind is AlgorithmKind.MAXFL
    assert cfg.algorithm.mode is WeightMode.SIGMOID_DERIVATIVE
    assert cfg.algorithm.epsilon > 0
    assert cfg.participation.mode is ParticipationMode.APPEAL_BASED
    assert cfg.participation.mandatory_rounds == math.ceil(0.05 * cfg.T)
    assert cfg.data.scheme is Scheme.DIRICHLET and cfg.data.n_clients == cfg.M
    assert cfg.seeds == (0,)


def test_mandatory_rounds_follow_T(tmp_path):
    cfg = parse_config(write(tmp_path, "T = 41\n" + MINIMAL))
    assert cfg.participation.mandatory_rounds == 3


@pytest.mark.parametrize("prefix, needle", [
    ("m = 60\n", "m=60"),
    ("T = 0\n", "T"),
    ("eta_l = 0.0\n", "eta_l"),
    ("learnig_rate = 0.1\n", "learnig_rate"),
    ("M = 1.5\n", "M"),
    ("seeds = 'zero'\n", "seeds"),
    ("weight_mode = 'tanh'\n", "weight_mode"),
])
def test_invalid_top_level(tmp_path, prefix, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(write(tmp_path, prefix + MINIMAL))


def test_unknown_key_in_table_is_named(tmp_path):
    text = MINIMAL.replace('kind = "maxfl"', 'kind = "maxfl"\nlearnig_rate = 0.1')
    with pytest.raises(ConfigError, match="algorithm.'learnig_rate'"):
        parse_config(write(tmp_path, text))


def test_unknown_source_key(tmp_path):
    with pytest.raises(ConfigError, match="data.source.'sep'"):
        parse_config(write(tmp_path, MINIMAL + "\n[data.source]\nsep = 2.0\n"))


def test_missing_required(tmp_path):
    with pytest.raises(ConfigError, match="'data'"):
        parse_config(write(tmp_path, '[algorithm]\nkind = "fedavg"\n'))
    with pytest.raises(ConfigError, match="algorithm.kind"):
        parse_config(write(tmp_path, '[algorithm]\n[data]\nscheme = "dirichlet"\n'))


def test_unknown_algorithm_lists_choices(tmp_path):
    with pytest.raises(ConfigError, match="fedavg"):
        parse_config(write(tmp_path, MINIMAL.replace('"maxfl"', '"fedsgd"')))


def test_byzantine_fraction_range(tmp_path):
    with pytest.raises(ConfigError, match="byzantine.fraction"):
        parse_config(write(tmp_path, MINIMAL + "\n[byzantine]\nfraction = 1.5\n"))


def test_bad_toml_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "M = = 3\n"))


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.toml")


@pytest.mark.parametrize("name", ["flagship.toml", "flagship_fedavg.toml"])
def test_round_trip(name):
    cfg = parse_config(CONFIGS / name)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_round_trip_minimal(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL + "\n[byzantine]\nfraction = 0.1\n"))
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.to_dict() == cfg.to_dict()


def test_full_batch_spelled_as_zero(tmp_path):
    cfg = parse_config(write(tmp_path, "b = 0\n" + MINIMAL))
    assert cfg.algorithm.b is None
    assert ExperimentConfig.from_dict(cfg.to_dict()).algorithm.b is None


def test_mean_estimation_needs_matching_theta(tmp_path):
    text = """
    M = 2
    m = 2
    [algorithm]
    kind = "maxfl"
    [data]
    scheme = "mean_estimation"
    theta = [0.0, 1.0, 2.0]
    [model]
    kind = "scalar_quadratic"
    """
    with pytest.raises(ConfigError, match="theta"):
        parse_config(write(tmp_path, text))


class TestMeanEst:
    def test_shipped_config(self):
        assert is_meanest_config(load_toml(CONFIGS / "meanest.toml"))
        cfg = parse_meanest_config(CONFIGS / "meanest.toml")
        assert cfg.grid[0] == 0.0 and cfg.grid[-1] == math.sqrt(20.0)
        assert len(cfg.grid) == cfg.grid_points

    def test_defaults(self):
        cfg = meanest_from_dict({"meanest": {}})
        assert cfg.trials == 10_000
        assert cfg.grid[0] == 0.0 and cfg.grid[-1] == math.sqrt(20.0)

    def test_round_trip(self):
        cfg = MeanEstConfig(grid_points=5, trials=10)
        assert meanest_from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("sub, needle", [
        ({"grid_points": 1}, "grid_points"),
        ({"gamma2": 0.0}, "gamma2"),
        ({"estimators": ["median"]}, "median"),
        ({"trails": 10}, "trails"),
    ])
    def test_invalid(self, sub, needle):
        with pytest.raises(ConfigError, match=needle):
            meanest_from_dict({"meanest": sub})
