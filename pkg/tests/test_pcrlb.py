import numpy as np
import pytest

from app.core.errors import BoundDegeneracyError
from app.core.rng import Stream, stream
from app.models.bias import make_bias_model
from app.schemas.bound import HBlocks, Pim
from app.services.oracles import kalman_extended
from app.services.pcrlb import (
    bound_trajectories,
    bound_trajectory,
    estimate_h_blocks,
    h_block_terms,
    init_pim,
    lower_bound_theta,
    phi_value,
    update_pim,
)
from app.services.simulation import draw_noise_table, sample_prior, simulate_paths


def _bias_step(model, M=4):
    initial = sample_prior(model, M, stream(0, Stream.PRIOR))
    ensemble = simulate_paths(model, [[0.3], [0.3]], initial, seed=0)
    return ensemble.step(0)


def test_bias_h_blocks_are_closed_form(bias_model):
    H = estimate_h_blocks(bias_model, **_bias_step(bias_model))
    assert H.H11[0, 0] == pytest.approx(100.0)
    assert H.H12[0, 0] == pytest.approx(100.0)
    assert H.H13[0, 0] == pytest.approx(-100.0)
    assert H.H22[0, 0] == pytest.approx(100.0)
    assert H.H23[0, 0] == pytest.approx(-100.0)
    assert H.H33[0, 0] == pytest.approx(200.0)


def test_assembled_terms_are_symmetric(benchmark_model):
    initial = sample_prior(benchmark_model, 30, stream(1, Stream.PRIOR))
    ensemble = simulate_paths(benchmark_model, np.zeros((2, 1)), initial, seed=1)
    terms = h_block_terms(benchmark_model, **ensemble.step(0))
    assert terms.shape == (30, 6, 6)
    assert np.allclose(terms, np.swapaxes(terms, -1, -2))


def test_first_pim_update_on_bias_model(bias_model):
    J1 = update_pim(init_pim(bias_model), estimate_h_blocks(bias_model, **_bias_step(bias_model)))
    np.testing.assert_allclose(J1.Jx, [[100.9901]], atol=1e-4)
    np.testing.assert_allclose(J1.Jxtheta, [[-0.9901]], atol=1e-4)
    np.testing.assert_allclose(J1.Jtheta, [[1.9901]], atol=1e-4)


def test_rank_deficient_update_is_rejected():
    J = Pim(Jx=[[1.0]], Jxtheta=[[1.0]], Jtheta=[[1.0]])
    H = HBlocks(H11=[[1.0]], H12=[[1.0]], H13=[[-1.0]], H22=[[1.0]], H23=[[-1.0]], H33=[[1.0]])
    with pytest.raises(BoundDegeneracyError):
        update_pim(J, H)


def test_schur_bound_matches_full_inverse(rng):
    A = rng.standard_normal((5, 5))
    J = A @ A.T + 5 * np.eye(5)
    L = lower_bound_theta(Pim.from_matrix(J, n=1))
    expected = np.linalg.inv(J)[1:, 1:]
    assert np.linalg.norm(L - expected) / np.linalg.norm(expected) < 1e-10


def test_bias_bound_equals_kalman_covariance(bias_model):
    u_seq = np.where(np.arange(100) % 3 == 0, 0.8, -0.8)[:, None]
    trajectory = bound_trajectory(bias_model, u_seq, M=2, seed=0)
    kalman = kalman_extended(bias_model, u_seq)
    for t in range(100):
        P = kalman[t + 1].cov[1:, 1:]
        assert np.max(np.abs(trajectory.theta_bound[t] - P) / np.abs(P)) < 1e-8


def test_vanishing_prior_keeps_bound_below_prior():
    model = make_bias_model(prior_cov=1e-12 * np.eye(2))
    trajectory = bound_trajectory(model, np.zeros((10, 1)), M=2)
    assert np.all(trajectory.theta_bound[:, 0, 0] <= 1e-12 * (1 + 1e-9))
    assert np.all(trajectory.theta_bound[:, 0, 0] > 0)


def test_bound_grows_with_noise_levels():
    u_seq = np.full((20, 1), 0.8)
    quiet = bound_trajectory(make_bias_model(), u_seq, M=2)
    noisy = bound_trajectory(make_bias_model(Q=0.02, R=0.02), u_seq, M=2)
    assert noisy.phi[-1] >= quiet.phi[-1]


def test_bound_needs_two_paths(bias_model):
    with pytest.raises(ValueError, match="M"):
        bound_trajectory(bias_model, np.zeros((3, 1)), M=1)


def test_batched_recursion_matches_single_sequences(benchmark_model):
    u_a = np.full((6, 1), 0.8)
    u_b = np.tile([[-0.8], [0.8]], (3, 1))
    noise = draw_noise_table(benchmark_model, 4, 50, 6)
    theta_bounds, state_bounds, phi = bound_trajectories(
        benchmark_model, np.stack([u_a, u_b]), noise
    )
    single = bound_trajectory(benchmark_model, u_b, M=50, noise=noise)
    assert theta_bounds[1] == pytest.approx(single.theta_bound, rel=1e-12)
    assert phi[1] == pytest.approx(single.phi, rel=1e-12)
    assert np.all(np.trace(state_bounds, axis1=-2, axis2=-1) > 0)


def test_bound_trajectory_layout(benchmark_model):
    trajectory = bound_trajectory(benchmark_model, np.zeros((5, 1)), M=20, seed=2)
    assert list(trajectory.t) == [1, 2, 3, 4, 5]
    assert trajectory.theta_bound.shape == (5, 4, 4)
    assert trajectory.phi == pytest.approx(np.trace(trajectory.theta_bound, axis1=1, axis2=2))
    assert trajectory.total == pytest.approx(trajectory.phi.sum())


def test_h_block_standard_error_halves_with_four_times_the_paths(benchmark_model):
    def standard_error(M):
        initial = sample_prior(benchmark_model, M, stream(5, Stream.PRIOR))
        ensemble = simulate_paths(benchmark_model, np.zeros((2, 1)), initial, seed=5)
        terms = h_block_terms(benchmark_model, **ensemble.step(0))
        return np.linalg.norm(terms.std(axis=0, ddof=1)) / np.sqrt(M)

    ratio = standard_error(40_000) / standard_error(10_000)
    assert 0.4 < ratio < 0.6


def test_criteria():
    L = np.diag([2.0, 3.0])
    assert phi_value(L, "trace") == pytest.approx(5.0)
    assert phi_value(L, "logdet") == pytest.approx(np.log(6.0))
    with pytest.raises(ValueError):
        phi_value(L, "max")
