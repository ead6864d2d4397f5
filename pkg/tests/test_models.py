import numpy as np
import pytest

from app.core.errors import ModelDefinitionError
from app.models import available_models, get_model, register_model
from app.models.bias import make_bias_model
from app.services.oracles import jacobian_mismatch


def test_benchmark_drift_at_origin_is_the_input(benchmark_model):
    x = np.array([[0.0]])
    theta = np.array([[0.8, 0.7, 0.6, 0.5]])
    assert benchmark_model.drift(x, theta, np.array([0.3]))[0, 0] == pytest.approx(0.3)


def test_benchmark_state_jacobian_value(benchmark_model):
    x = np.array([[1.0]])
    theta = np.array([[0.8, 0.7, 0.6, 0.5]])
    expected = 0.8 + (0.7 - 1.0) / 1.7**2
    assert benchmark_model.jac_drift_x(x, theta, np.array([0.0]))[0, 0, 0] == pytest.approx(
        expected, abs=1e-12
    )
    assert expected == pytest.approx(0.69619, abs=1e-5)


def test_benchmark_maps_broadcast_over_batch_axes(benchmark_model):
    x = np.ones((3, 5, 1))
    theta = np.tile([0.8, 0.7, 0.6, 0.5], (1, 5, 1))
    u = np.zeros((3, 1, 1))
    assert benchmark_model.drift(x, theta, u).shape == (3, 5, 1)
    assert benchmark_model.jac_drift_theta(x, theta, u).shape == (3, 5, 1, 4)
    assert benchmark_model.jac_obs_theta(x, theta, u).shape == (3, 5, 1, 4)
    assert benchmark_model.jac_obs_x(x, theta, u).shape == (3, 5, 1, 1)


@pytest.mark.parametrize("name", ["benchmark", "bias"])
def test_analytic_jacobians_match_finite_differences(name):
    assert jacobian_mismatch(get_model(name), points=100) < 1e-5


def test_prior_covariance_must_be_positive_definite():
    with pytest.raises(ModelDefinitionError, match="prior_cov"):
        make_bias_model(prior_cov=[[1.0, 0.0], [0.0, -1.0]])


def test_noise_covariance_shape_is_checked():
    with pytest.raises(ModelDefinitionError, match="Q"):
        make_bias_model(Q=np.eye(2))


def test_tiny_prior_covariance_is_accepted():
    model = make_bias_model(prior_cov=1e-12 * np.eye(2))
    assert model.prior_chol[0, 0] == pytest.approx(1e-6)


def test_registry_lookup_and_duplicates():
    assert {"benchmark", "bias"} <= set(available_models())
    with pytest.raises(ModelDefinitionError, match="unknown model"):
        get_model("missing")
    with pytest.raises(ModelDefinitionError, match="already registered"):
        register_model("bias", make_bias_model)
