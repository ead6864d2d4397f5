import numpy as np
import pytest

from app.models.benchmark import make_benchmark_model
from app.models.bias import make_bias_model
from app.schemas.design import DesignConfig, OptimizerSettings
from app.schemas.policy import CaseId, PolicyTemplate
from app.services.input_policy import build_input_space


@pytest.fixture
def bias_model():
    return make_bias_model()


@pytest.fixture
def benchmark_model():
    return make_benchmark_model()


@pytest.fixture
def binary_space():
    return build_input_space(-0.8, 0.8, b=2)


@pytest.fixture
def make_template(binary_space):
    def make(case, space=None):
        return PolicyTemplate(case=CaseId(case), space=space or binary_space)

    return make


@pytest.fixture
def small_design():
    return DesignConfig(
        model="benchmark",
        case=CaseId.case1,
        N=8,
        M=40,
        M_u=12,
        seed=3,
        optimizer=OptimizerSettings(max_iter=15, restarts=1),
        batch_size=5,
    )


@pytest.fixture
def write_config(tmp_path):
    def write(text: str, name: str = "run.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
