"""Linear-Gaussian random walk with an unknown constant bias.

    x_{t+1} = x_t + theta + u_t + v_t
    y_t     = x_t + w_t

Linear in (x, theta), so the PCRLB equals the Kalman covariance of the
extended state and serves as an exact reference.
"""
import numpy as np

from app.schemas.ssm import GaussianSsm


def _shape(x, theta):
    return np.broadcast_shapes(x.shape[:-1], theta.shape[:-1])


def drift(x, theta, u):
    return x + theta + np.asarray(u)


def observation(x, theta, u):
    return np.broadcast_to(x, _shape(x, theta) + (1,)).copy()


def jac_drift_x(x, theta, u):
    return np.ones(_shape(x, theta) + (1, 1))


def jac_drift_theta(x, theta, u):
    return np.ones(_shape(x, theta) + (1, 1))


def jac_obs_x(x, theta, u):
    return np.ones(_shape(x, theta) + (1, 1))


def jac_obs_theta(x, theta, u):
    return np.zeros(_shape(x, theta) + (1, 1))


def make_bias_model(
    Q: float = 0.01,
    R: float = 0.01,
    prior_mean=(0.0, 0.5),
    prior_cov=None,
) -> GaussianSsm:
    return GaussianSsm(
        name="bias",
        n=1,
        q=1,
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
        prior_mean=list(prior_mean),
        prior_cov=np.eye(2) if prior_cov is None else prior_cov,
    )
