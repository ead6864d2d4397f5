"""Scalar nonlinear benchmark with four unknown parameters.

    x_{t+1} = a x_t + x_t / (b + x_t^2) + u_t + v_t
    y_t     = c x_t + d x_t^2 + w_t

theta = [a, b, c, d].
"""
import numpy as np

from app.schemas.ssm import GaussianSsm

PRIOR_MEAN = [1.0, 0.7, 0.6, 0.5, 0.4]
PRIOR_VARIANCE = 0.01
NOISE_VARIANCE = 0.01
TRUE_THETA = [0.8, 0.7, 0.6, 0.5]
INPUT_RANGE = (-0.8, 0.8)


def _parts(x, theta):
    x0 = x[..., 0]
    a, b, c, d = (theta[..., j] for j in range(4))
    x0, a, b, c, d = np.broadcast_arrays(x0, a, b, c, d)
    return x0, a, b, c, d


def drift(x, theta, u):
    x0, a, b, _, _ = _parts(x, theta)
    return (a * x0 + x0 / (b + x0**2) + np.asarray(u)[..., 0])[..., None]


def observation(x, theta, u):
    x0, _, _, c, d = _parts(x, theta)
    return (c * x0 + d * x0**2)[..., None]


def jac_drift_x(x, theta, u):
    x0, a, b, _, _ = _parts(x, theta)
    return (a + (b - x0**2) / (b + x0**2) ** 2)[..., None, None]


def jac_drift_theta(x, theta, u):
    x0, _, b, _, _ = _parts(x, theta)
    zero = np.zeros_like(x0)
    row = np.stack([x0, -x0 / (b + x0**2) ** 2, zero, zero], axis=-1)
    return row[..., None, :]


def jac_obs_x(x, theta, u):
    x0, _, _, c, d = _parts(x, theta)
    return (c + 2.0 * d * x0)[..., None, None]


def jac_obs_theta(x, theta, u):
    x0, _, _, _, _ = _parts(x, theta)
    zero = np.zeros_like(x0)
    row = np.stack([zero, zero, x0, x0**2], axis=-1)
    return row[..., None, :]


def make_benchmark_model(
    Q: float = NOISE_VARIANCE,
    R: float = NOISE_VARIANCE,
    prior_mean=None,
    prior_cov=None,
) -> GaussianSsm:
    return GaussianSsm(
        name="benchmark",
        n=1,
        q=4,
        p=1,
        m=1,
        drift=drift,
        observation=observation,
        jac_drift_x=jac_drift_x,
        jac_drift_theta=jac_drift_theta,
        jac_obs_x=jac_obs_x,
        jac_obs_theta=jac_obs_theta,
        Q=np.atleast_2d(Q),
        R=np.atleast_2d(R),
        prior_mean=PRIOR_MEAN if prior_mean is None else prior_mean,
        prior_cov=PRIOR_VARIANCE * np.eye(5) if prior_cov is None else prior_cov,
    )
