import numpy as np
import pytest
from pydantic import ValidationError
from structlog.testing import capture_logs

from app.core.errors import FilterDegeneracyError
from app.core.logging import configure_logging
from app.models.benchmark import TRUE_THETA
from app.models.bias import make_bias_model
from app.schemas.run import REFERENCE_PARAMS
from app.schemas.ssm import ExtendedState
from app.schemas.validation import SmcConfig
from app.services.input_policy import policy_from_template, sample_sequence
from app.services.oracles import kalman_extended
from app.services.simulation import simulate_paths
from app.services.smc import mse_experiment, smc_joint_estimate


def _observe(model, u_seq, x0, theta, seed=4):
    ensemble = simulate_paths(model, u_seq, [ExtendedState(x=x0, theta=theta)], seed)
    return ensemble.measurements[:, 0, :]


def test_first_row_is_the_prior(benchmark_model):
    u_seq = np.full((3, 1), 0.8)
    y = _observe(benchmark_model, u_seq, [1.0], TRUE_THETA)
    est = smc_joint_estimate(benchmark_model, u_seq, y, SmcConfig(particles=2000, seed=1))
    assert est.theta_mean[0] == pytest.approx(benchmark_model.prior_mean[1:], abs=0.015)
    assert est.theta_mean.shape == (4, 4)
    assert est.theta_cov.shape == (4, 4, 4)
    assert est.x_mean.shape == (4, 1)
    assert est.ess.shape == (3,)


def test_state_estimate_tracks_kalman_when_theta_is_known():
    model = make_bias_model(prior_mean=(0.0, 0.3), prior_cov=np.diag([0.1, 1e-12]))
    u_seq = np.where(np.arange(20) % 3 == 0, 0.8, -0.8)[:, None]
    y = _observe(model, u_seq, [0.2], [0.3])
    est = smc_joint_estimate(model, u_seq, y, SmcConfig(particles=2000, seed=2))
    kalman = kalman_extended(model, u_seq, y)
    reference = np.array([state.mean[0] for state in kalman])
    assert np.max(np.abs(est.x_mean[:, 0] - reference)) < 0.03


def test_impossible_measurement_collapses_the_filter(bias_model):
    u_seq = np.zeros((3, 1))
    y = np.array([[1e6], [0.0], [0.0]])
    with pytest.raises(FilterDegeneracyError) as info:
        smc_joint_estimate(bias_model, u_seq, y, SmcConfig(particles=200))
    assert info.value.context["time"] == 1


def test_parameter_uncertainty_shrinks_with_data(benchmark_model, make_template):
    policy = policy_from_template(make_template("Case4"), [])
    u_seq = sample_sequence(policy, 30, np.random.default_rng(6))
    y = _observe(benchmark_model, u_seq, [1.0], TRUE_THETA)
    est = smc_joint_estimate(benchmark_model, u_seq, y, SmcConfig(particles=1000, seed=3))
    assert np.trace(est.theta_cov[-1]) < np.trace(est.theta_cov[0])


def test_mismatched_measurement_length(bias_model):
    with pytest.raises(ValueError):
        smc_joint_estimate(bias_model, np.zeros((4, 1)), np.zeros((3, 1)))


def test_small_mse_experiment(benchmark_model, make_template):
    policy = policy_from_template(make_template("Case1"), [0.62])
    report = mse_experiment(
        benchmark_model,
        TRUE_THETA,
        policy,
        runs=3,
        N=5,
        smc_config=SmcConfig(particles=200),
        M=20,
        seed=9,
    )
    assert report.runs + report.excluded == 3
    assert report.trace_mse.shape == (5,)
    assert report.trace_bound.shape == (5,)
    assert np.all(report.trace_bound > 0)
    assert 0 <= report.violations <= 5


def test_mse_experiment_is_thread_invariant(benchmark_model, make_template):
    policy = policy_from_template(make_template("Case2"), [0.63, 0.92])
    kwargs = dict(runs=2, N=4, smc_config=SmcConfig(particles=100), M=10, seed=2)
    serial = mse_experiment(benchmark_model, TRUE_THETA, policy, **kwargs)
    threaded = mse_experiment(benchmark_model, TRUE_THETA, policy, threads=2, **kwargs)
    np.testing.assert_array_equal(serial.trace_mse, threaded.trace_mse)
    np.testing.assert_array_equal(serial.trace_bound, threaded.trace_bound)


def test_single_run_is_rejected(benchmark_model, make_template):
    policy = policy_from_template(make_template("Case4"), [])
    with pytest.raises(ValueError):
        mse_experiment(benchmark_model, TRUE_THETA, policy, runs=1, N=3)


def test_too_few_particles_is_a_config_error():
    with pytest.raises(ValidationError):
        SmcConfig(particles=50)


def test_resampling_is_logged(benchmark_model, make_template):
    configure_logging("DEBUG")
    policy = policy_from_template(make_template("Case4"), [])
    u_seq = sample_sequence(policy, 10, np.random.default_rng(1))
    y = _observe(benchmark_model, u_seq, [1.0], TRUE_THETA)
    with capture_logs() as logs:
        est = smc_joint_estimate(benchmark_model, u_seq, y, SmcConfig(particles=300, seed=5))
    events = [entry for entry in logs if entry["event"] == "smc.resampled"]
    assert est.resamples > 0
    assert len(events) == est.resamples
    assert all(entry["ess"] < 0.5 * 300 for entry in events)


def test_parameter_variance_approaches_the_kalman_reference(bias_model):
    u_seq = np.tile([[0.8], [-0.8]], (15, 1))
    y = _observe(bias_model, u_seq, [0.0], [0.5], seed=3)
    est = smc_joint_estimate(bias_model, u_seq, y, SmcConfig(particles=5000, seed=4))
    kalman = kalman_extended(bias_model, u_seq, y)
    reference = np.array([state.cov[1, 1] for state in kalman])
    variance = est.theta_cov[:, 0, 0]
    assert variance[-1] < variance[10] < variance[0]
    ratio = variance[10:] / reference[10:]
    assert np.all((ratio > 1 / 3) & (ratio < 3))
    assert abs(est.theta_mean[-1, 0] - kalman[-1].mean[1]) < 4 * np.sqrt(reference[-1])


@pytest.mark.slow
def test_bound_lies_below_the_mse(benchmark_model, make_template):
    policy = policy_from_template(make_template("Case1"), [0.62])
    report = mse_experiment(
        benchmark_model, TRUE_THETA, policy, runs=500, N=100, smc_config=SmcConfig(), seed=1
    )
    assert report.runs >= 490
    assert report.violations <= 5
    assert report.sum_trace_mse > report.sum_trace_bound


@pytest.mark.slow
@pytest.mark.xfail(
    reason="follows the objective ordering, which differs; see DESIGN.md", strict=False
)
def test_reference_policies_order_the_mse(benchmark_model, make_template):
    totals = {}
    for case, params in REFERENCE_PARAMS.items():
        policy = policy_from_template(make_template(case.value), params)
        report = mse_experiment(benchmark_model, TRUE_THETA, policy, runs=100, N=50, seed=2)
        totals[case] = report.sum_trace_mse
    c1, c2, c3, c4 = totals.values()
    assert c3 < c2 < c1 < c4
