from pathlib import Path

import pytest

from app.core.config import config_hash, parse_config
from app.core.errors import ConfigError
from app.models.benchmark import TRUE_THETA
from app.schemas.policy import CaseId

MINIMAL = "model = benchmark\n"


def test_desk_preset_fills_the_sizes(write_config):
    config = parse_config(write_config(MINIMAL))
    assert (config.design.N, config.design.M, config.design.M_u) == (50, 500, 500)
    assert config.validate_.runs == 100
    assert config.cases == [CaseId.case4]
    assert config.validate_.theta_star == list(TRUE_THETA)
    assert config.phi == "trace"


def test_paper_preset(write_config):
    config = parse_config(write_config("preset = paper\n"))
    assert config.preset == "paper"
    assert (config.design.N, config.design.M, config.design.M_u) == (100, 2000, 2000)
    assert config.validate_.runs == 500


def test_full_is_an_alias_of_the_paper_preset(write_config):
    path = write_config(MINIMAL)
    assert parse_config(path, {"preset": "full"}) == parse_config(path, {"preset": "paper"})


@pytest.mark.parametrize("line", ["design.N 12", "design.M: 30", "seed"])
def test_malformed_line_is_rejected(write_config, line):
    path = write_config(f"model = benchmark\n{line}\n")
    with pytest.raises(ConfigError, match=r":2: expected 'key = value'"):
        parse_config(path)


def test_comments_blank_lines_and_export_are_accepted(write_config):
    path = write_config("# sizes\n\nexport design.N = 12\n  design.M = 30  # inline\n")
    config = parse_config(path)
    assert (config.design.N, config.design.M) == (12, 30)


def test_file_overrides_preset_and_cli_overrides_file(write_config):
    path = write_config("seed = 4\ndesign.N = 12\ncase = Case1, Case3\n")
    config = parse_config(path, {"seed": 9, "design": {"M": 30}})
    assert config.seed == 9
    assert config.design.N == 12
    assert config.design.M == 30
    assert config.design.M_u == 500
    assert config.cases == [CaseId.case1, CaseId.case3]


def test_list_values_are_split_on_commas(write_config):
    path = write_config("validate.theta_star = 0.8, 0.7,0.6 , 0.5\npolicy.params = 0.4\n")
    config = parse_config(path)
    assert config.validate_.theta_star == [0.8, 0.7, 0.6, 0.5]
    assert config.policy.params == [0.4]


def test_invalid_value_names_the_field(write_config):
    with pytest.raises(ConfigError, match="design.M"):
        parse_config(write_config("design.M = -3\n"))


def test_unknown_key_is_rejected(write_config):
    with pytest.raises(ConfigError, match="design.bogus"):
        parse_config(write_config("design.bogus = 1\n"))


def test_unknown_model_and_preset(write_config):
    with pytest.raises(ConfigError, match="unknown model"):
        parse_config(write_config("model = nope\n"))
    with pytest.raises(ConfigError, match="preset"):
        parse_config(write_config("preset = huge\n"))


def test_theta_star_must_fit_the_model(write_config):
    with pytest.raises(ConfigError, match="theta_star"):
        parse_config(write_config("validate.theta_star = 0.8, 0.7\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not readable"):
        parse_config(tmp_path / "absent.cfg")


def test_hash_ignores_output_and_threads(write_config):
    path = write_config("seed = 1\n")
    base = parse_config(path)
    moved = parse_config(path, {"output_dir": Path("elsewhere"), "threads": 4})
    changed = parse_config(path, {"seed": 2})
    assert config_hash(base) == config_hash(moved)
    assert config_hash(base) != config_hash(changed)


def test_design_config_carries_the_run(write_config):
    path = write_config("seed = 5\nphi = logdet\ninput.k = 1\ndesign.max_iter = 7\n")
    design = parse_config(path).design_config(CaseId.free)
    assert design.seed == 5
    assert design.criterion == "logdet"
    assert design.k == 1
    assert design.optimizer.max_iter == 7
