"""Joint state/parameter particle filter with kernel shrinkage, and the MSE-vs-bound experiment."""
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import structlog
from scipy.special import logsumexp

from app.core.errors import FilterDegeneracyError
from app.core.rng import Stream, stream
from app.schemas.policy import MarkovInputPolicy
from app.schemas.ssm import ExtendedState, GaussianSsm
from app.schemas.validation import SmcConfig, SmcEstimate, ValidationReport
from app.services.input_policy import sample_sequence
from app.services.pcrlb import bound_trajectories
from app.services.simulation import (
    advance,
    draw_noise_table,
    measurement_input,
    prior_draws,
    simulate_paths,
)

log = structlog.get_logger(__name__)

# weights w_{t-1} * exp(-0.5 r^T R^-1 r) all below this count as a collapse
WEIGHT_FLOOR = 1e-300
LOG_WEIGHT_FLOOR = float(np.log(WEIGHT_FLOOR))


def _weighted_moments(values: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = w @ values
    centered = values - mean
    cov = np.einsum("i,ij,ik->jk", w, centered, centered)
    return mean, 0.5 * (cov + cov.T)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    count = w.size
    positions = (rng.random() + np.arange(count)) / count
    idx = np.searchsorted(np.cumsum(w), positions, side="right")
    return np.minimum(idx, count - 1)


def smc_joint_estimate(
    model: GaussianSsm,
    u_seq: np.ndarray,
    y_seq: np.ndarray,
    config: SmcConfig = SmcConfig(),
    key: Sequence[int] = (),
) -> SmcEstimate:
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.p)
    y_seq = np.asarray(y_seq, dtype=float).reshape(-1, model.m)
    N = u_seq.shape[0]
    if y_seq.shape[0] != N:
        raise ValueError(f"{y_seq.shape[0]} measurements for {N} inputs")

    rng = stream(config.seed, Stream.FILTER, *key)
    count = config.particles
    a = config.shrinkage
    h = np.sqrt(1.0 - a * a)

    x, theta = prior_draws(model, rng.standard_normal((count, model.s)))
    logw = np.full(count, -np.log(count))
    w = np.exp(logw)

    theta_mean = np.empty((N + 1, model.q))
    theta_cov = np.empty((N + 1, model.q, model.q))
    x_mean = np.empty((N + 1, model.n))
    ess = np.empty(N)
    theta_mean[0], theta_cov[0] = _weighted_moments(theta, w)
    x_mean[0] = w @ x
    resamples = 0

    for t in range(N):
        centre, spread = _weighted_moments(theta, w)
        jitter = rng.standard_normal((count, model.q)) @ (h * _psd_factor(spread)).T
        theta = a * theta + (1.0 - a) * centre + jitter
        x = advance(model, x, theta, u_seq[t], rng.standard_normal((count, model.n)))

        resid = y_seq[t] - model.observation(x, theta, measurement_input(u_seq, t))
        loglik = -0.5 * np.einsum("ij,jk,ik->i", resid, model.R_inv, resid)
        loglik = np.where(np.isfinite(loglik), loglik, -np.inf)
        logw = logw + loglik
        if not np.max(logw) > LOG_WEIGHT_FLOOR:
            raise FilterDegeneracyError(
                "particle weights collapsed", {"time": t + 1, "particles": count}
            )
        logw = logw - logsumexp(logw)
        w = np.exp(logw)

        theta_mean[t + 1], theta_cov[t + 1] = _weighted_moments(theta, w)
        x_mean[t + 1] = w @ x
        ess[t] = 1.0 / np.sum(w * w)
        if ess[t] < config.threshold * count:
            idx = _systematic_resample(w, rng)
            x, theta = x[idx], theta[idx]
            logw = np.full(count, -np.log(count))
            w = np.exp(logw)
            resamples += 1
            log.debug("smc.resampled", time=t + 1, ess=float(ess[t]))

    log.debug("smc.done", horizon=N, particles=count, resamples=resamples)
    return SmcEstimate(
        theta_mean=theta_mean, theta_cov=theta_cov, x_mean=x_mean, ess=ess, resamples=resamples
    )


def mse_experiment(
    model: GaussianSsm,
    theta_star,
    policy: MarkovInputPolicy,
    runs: int,
    N: int,
    smc_config: SmcConfig = SmcConfig(),
    M: int = 500,
    seed: int = 0,
    threads: int = 1,
) -> ValidationReport:
    """Average squared parameter error of the particle filter against the known truth.

    Every run draws an input sequence from ``policy`` and a true initial state
    from the prior's state marginal; the bound is evaluated on the same input
    sequences.
    """
    if runs < 2:
        raise ValueError(f"runs must be >= 2, got {runs}")
    theta_star = np.asarray(theta_star, dtype=float).reshape(model.q)
    x_chol = np.linalg.cholesky(model.prior_cov[: model.n, : model.n])

    def one_run(r: int):
        u_seq = sample_sequence(policy, N, stream(seed, Stream.INPUT, r))
        draw = stream(seed, Stream.TRUTH, r).standard_normal(model.n)
        x0 = model.prior_mean[: model.n] + x_chol @ draw
        truth = simulate_paths(
            model, u_seq, [ExtendedState(x=x0, theta=theta_star)], seed, key=(Stream.TRUTH, r)
        )
        try:
            y_seq = truth.measurements[:, 0, :]
            est = smc_joint_estimate(model, u_seq, y_seq, smc_config, key=(r,))
        except FilterDegeneracyError as e:
            log.warning("validate.run_excluded", run=r, error=str(e))
            return u_seq, None
        return u_seq, np.sum((est.theta_mean[1:] - theta_star) ** 2, axis=1)

    if threads == 1:
        outcomes = [one_run(r) for r in range(runs)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one_run, range(runs)))

    kept = [(u, err) for u, err in outcomes if err is not None]
    excluded = runs - len(kept)
    if not kept:
        raise FilterDegeneracyError(
            "every validation run degenerated", {"runs": runs, "seed": seed}
        )

    trace_mse = np.mean(np.stack([err for _, err in kept]), axis=0)
    noise = draw_noise_table(model, seed, M, N)
    _, _, phi = bound_trajectories(model, np.stack([u for u, _ in kept]), noise, "trace")
    trace_bound = phi.mean(axis=0)
    violations = int(np.sum(trace_mse < trace_bound))
    log.info(
        "validate.done",
        runs=runs,
        excluded=excluded,
        sum_trace_mse=float(trace_mse.sum()),
        sum_trace_bound=float(trace_bound.sum()),
        violations=violations,
    )
    return ValidationReport(
        trace_mse=trace_mse,
        trace_bound=trace_bound,
        violations=violations,
        runs=len(kept),
        excluded=excluded,
    )
