import numpy as np
import pytest

from app.main import main
from app.models import register_model
from app.models.bias import make_bias_model

TINY = """\
model = benchmark
case = Case1, Case4
seed = 7
design.N = 4
design.M = 10
design.M_u = 6
design.max_iter = 5
design.restarts = 1
validate.runs = 2
validate.particles = 100
"""


@pytest.fixture
def tiny(write_config):
    return write_config(TINY)


def _run(command, config, out, *extra):
    return main([command, "--config", str(config), "--output-dir", str(out), *extra])


def _header(path):
    meta, columns = path.read_text().splitlines()[:2]
    return meta, columns


def test_bound_writes_trajectories(tiny, tmp_path):
    out = tmp_path / "out"
    assert _run("bound", tiny, out) == 0
    meta, columns = _header(out / "bound_trajectory_Case1.csv")
    assert meta.startswith("# seed=7 config_hash=")
    assert columns.startswith("t,phi,L_0_0,L_0_1")
    assert len((out / "bound_trace_Case4.csv").read_text().splitlines()) == 2 + 4
    assert _header(out / "bound_state_Case1.csv")[1] == "t,trace_state_bound"


def test_design_writes_report_and_policies(tiny, tmp_path):
    out = tmp_path / "out"
    assert _run("design", tiny, out) == 0
    report = (out / "case_report.csv").read_text().splitlines()
    assert report[1] == "case,p1,psi_bar,converged"
    assert {line.split(",")[0] for line in report[2:]} == {"Case1", "Case4"}
    assert _header(out / "design_history.csv")[1].startswith("case,iteration,phi_0")
    assert (out / "policy_Case1.txt").read_text().startswith("# markov-input-policy")
    assert len((out / "input_sample_Case4.csv").read_text().splitlines()) == 2 + 4


def test_validate_writes_mse_traces(tiny, tmp_path):
    out = tmp_path / "out"
    assert _run("validate", tiny, out) == 0
    assert _header(out / "mse_trace_Case1.csv")[1] == "t,trace_mse,trace_bound"
    summary = (out / "validation_summary.csv").read_text().splitlines()
    assert summary[1] == "case,sum_trace_mse,violations,runs"
    assert len(summary) == 4


def test_oracle_report(tiny, tmp_path):
    out = tmp_path / "out"
    assert _run("oracle", tiny, out) == 0
    lines = (out / "oracle_report.csv").read_text().splitlines()
    assert lines[1] == "check,value,reference,abs_error,passed"
    rows = {line.split(",")[0]: line.split(",")[-1] for line in lines[2:]}
    assert rows["kalman_vs_pim"] == "true"
    assert rows["jacobian"] == "true"
    assert "enumeration_vs_mc_Case1" in rows


@pytest.mark.parametrize("command", ["bound", "design"])
def test_reruns_are_byte_identical(tiny, tmp_path, command):
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(command, tiny, first) == 0
    assert _run(command, tiny, second, "--threads", "2") == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_seed_flag_changes_the_metadata(tiny, tmp_path):
    out = tmp_path / "out"
    assert _run("bound", tiny, out, "--seed", "11") == 0
    assert _header(out / "bound_trace_Case1.csv")[0].startswith("# seed=11 ")


def test_invalid_config_exits_with_one(write_config, tmp_path):
    bad = write_config("design.M = -1\n")
    assert _run("bound", bad, tmp_path / "out") == 1
    assert _run("bound", tmp_path / "missing.cfg", tmp_path / "out") == 1


@pytest.mark.parametrize("preset", ["paper", "full"])
def test_preset_flag_keeps_file_sizes(tiny, tmp_path, preset):
    out = tmp_path / "out"
    assert _run("bound", tiny, out, "--preset", preset) == 0
    assert len((out / "bound_trace_Case1.csv").read_text().splitlines()) == 2 + 4


def test_malformed_config_line_exits_with_one(write_config, tmp_path):
    bad = write_config(TINY + "design.M: 30\n")
    assert _run("bound", bad, tmp_path / "out") == 1


def test_unusable_policy_exits_with_one(write_config, tmp_path):
    bad = write_config(TINY + "policy.params = 1.5\n")
    assert _run("bound", bad, tmp_path / "out") == 1


def test_numerical_failure_writes_diagnostic(write_config, tmp_path):
    def exploding():
        model = make_bias_model()
        return model.model_copy(update={"name": "exploding", "drift": lambda x, t, u: x * 1e200})

    register_model("exploding", exploding, replace=True)
    path = write_config(TINY.replace("benchmark", "exploding") + "validate.theta_star = 0.5\n")
    out = tmp_path / "out"
    with np.errstate(over="ignore", invalid="ignore"):
        assert _run("bound", path, out) == 2
    diagnostic = (out / "diagnostic.txt").read_text()
    assert "error=SimulationDivergenceError" in diagnostic
    assert "seed=7" in diagnostic


def test_help_and_usage_errors():
    assert main(["--help"]) == 0
    assert main(["bound"]) == 1
