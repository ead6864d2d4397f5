from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np
import structlog

from app.core.errors import SimulationDivergenceError
from app.core.rng import Stream, stream
from app.schemas.ssm import ExtendedState, GaussianSsm, NoiseTable, SampleEnsemble

log = structlog.get_logger(__name__)


def prior_draws(model: GaussianSsm, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map standard normals (..., s) to prior samples, split into (x, theta)."""
    samples = model.prior_mean + np.einsum("...j,ij->...i", z, model.prior_chol)
    return model.split(samples)


def sample_prior(model: GaussianSsm, count: int, rng: np.random.Generator) -> List[ExtendedState]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    x, theta = prior_draws(model, rng.standard_normal((count, model.s)))
    return [ExtendedState(x=x[i], theta=theta[i]) for i in range(count)]


def draw_noise_table(
    model: GaussianSsm,
    seed: int,
    paths: int,
    horizon: int,
    key: Sequence[int] = (),
    measurement: bool = False,
) -> NoiseTable:
    """Standard normals for ``paths`` trajectories of ``horizon`` steps.

    Every (kind, path) pair has its own stream, so path i sees the same draws
    whatever the ensemble size or horizon, and drawing the measurement part
    does not shift the process or prior part.
    """

    def per_path(kind: Stream, shape) -> np.ndarray:
        return np.stack([stream(seed, kind, *key, i).standard_normal(shape) for i in range(paths)])

    def time_major(kind: Stream, dim: int) -> np.ndarray:
        return np.ascontiguousarray(per_path(kind, (horizon, dim)).swapaxes(0, 1))

    prior = per_path(Stream.PRIOR, (model.s,))
    process = time_major(Stream.PROCESS, model.n)
    meas = time_major(Stream.MEASUREMENT, model.m) if measurement else None
    return NoiseTable(seed=seed, prior=prior, process=process, measurement=meas)


def advance(
    model: GaussianSsm, x: np.ndarray, theta: np.ndarray, u: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """x_{t+1} = f(x_t, theta, u_t) + chol(Q) eps."""
    return model.drift(x, theta, u) + np.einsum("...j,ij->...i", eps, model.Q_chol)


def measure(
    model: GaussianSsm, x: np.ndarray, theta: np.ndarray, u: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    return model.observation(x, theta, u) + np.einsum("...j,ij->...i", eps, model.R_chol)


def measurement_input(inputs: np.ndarray, t: int) -> np.ndarray:
    """Input paired with y_{t+1}; the last step reuses u_N."""
    return inputs[..., min(t + 1, inputs.shape[-2] - 1), :]


def _check_finite(values: np.ndarray, t: int, offset: int) -> None:
    bad = ~np.all(np.isfinite(values), axis=-1)
    if np.any(bad):
        path = int(np.argmax(bad)) + offset
        raise SimulationDivergenceError("non-finite state", {"path": path, "time": t})


def _simulate_chunk(model, u_seq, x0, theta, process, meas, offset):
    horizon = u_seq.shape[0]
    states = np.empty((horizon + 1,) + x0.shape)
    measurements = np.empty((horizon, x0.shape[0], model.m))
    states[0] = x0
    for t in range(horizon):
        states[t + 1] = advance(model, states[t], theta, u_seq[t], process[t])
        _check_finite(states[t + 1], t + 1, offset)
        measurements[t] = measure(
            model, states[t + 1], theta, measurement_input(u_seq, t), meas[t]
        )
        _check_finite(measurements[t], t + 1, offset)
    return states, measurements


def simulate_paths(
    model: GaussianSsm,
    u_seq: np.ndarray,
    initial: Sequence[ExtendedState],
    seed: int,
    key: Sequence[int] = (),
    threads: int = 1,
) -> SampleEnsemble:
    """Propagate each initial extended state through the model under ``u_seq``.

    Noise entry ``[t, i]`` belongs to path i at step t and depends only on
    (seed, key), never on ``u_seq`` or ``threads``.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if u_seq.shape[1] != model.p:
        u_seq = u_seq.reshape(-1, model.p)
    if len(initial) < 1:
        raise ValueError("at least one initial state is required")
    horizon = u_seq.shape[0]
    x0 = np.stack([np.asarray(z.x, dtype=float) for z in initial])
    theta = np.stack([np.asarray(z.theta, dtype=float) for z in initial])
    count = x0.shape[0]

    noise = draw_noise_table(model, seed, count, horizon, key=key, measurement=True)
    process, meas = noise.process, noise.measurement

    bounds = np.linspace(0, count, min(threads, count) + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run(chunk):
        lo, hi = chunk
        return _simulate_chunk(
            model, u_seq, x0[lo:hi], theta[lo:hi], process[:, lo:hi], meas[:, lo:hi], lo
        )

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))

    states = np.concatenate([r[0] for r in results], axis=1)
    measurements = np.concatenate([r[1] for r in results], axis=1)
    log.debug("simulation.done", model=model.name, paths=count, horizon=horizon, seed=seed)
    return SampleEnsemble(theta=theta, states=states, measurements=measurements, inputs=u_seq)
