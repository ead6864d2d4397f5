"""Independent references for the bound machinery.

None of these reuse the PIM recursion: the Kalman filter, finite-difference
Hessians, exhaustive enumeration and grid search each reach the same
quantities by a different road.
"""
import itertools
from typing import List

import numpy as np
import structlog

from app.core.config import settings
from app.core.errors import CapacityError, OracleMisuseError
from app.core.rng import Stream, stream
from app.schemas.bound import HBlocks
from app.schemas.design import DesignConfig
from app.schemas.oracle import GridPoint, GridSearchResult, KalmanState
from app.schemas.ssm import GaussianSsm, SampleEnsemble
from app.services.designer import DesignEvaluator
from app.services.input_policy import policy_from_template, sequence_log_prob
from app.services.pcrlb import phi_value
from app.services.simulation import measurement_input, prior_draws

log = structlog.get_logger(__name__)

FD_STEP_RANGE = (1e-7, 1e-3)
RICHARDSON_RTOL = 1e-3
LINEARITY_RTOL = 1e-9


def _check_points(model: GaussianSsm, points: int, seed: int):
    return prior_draws(model, stream(seed, Stream.ORACLE).standard_normal((points, model.s)))


def _constant(values: np.ndarray) -> bool:
    return np.allclose(values, values[0], rtol=LINEARITY_RTOL, atol=1e-12)


def _affine_system(model: GaussianSsm, x, theta, u_t, u_meas):
    """Constant (F, offset_f, H, offset_h) of the extended system, or OracleMisuseError."""
    Fx, Ft = model.jac_drift_x(x, theta, u_t), model.jac_drift_theta(x, theta, u_t)
    Gx, Gt = model.jac_obs_x(x, theta, u_meas), model.jac_obs_theta(x, theta, u_meas)
    f_off = model.drift(x, theta, u_t) - np.einsum("...ij,...j->...i", Fx, x) - np.einsum(
        "...ij,...j->...i", Ft, theta
    )
    h_off = model.observation(x, theta, u_meas) - np.einsum("...ij,...j->...i", Gx, x) - np.einsum(
        "...ij,...j->...i", Gt, theta
    )
    if not all(_constant(a) for a in (Fx, Ft, Gx, Gt, f_off, h_off)):
        raise OracleMisuseError(
            f"model '{model.name}' is not linear in (x, theta); the Kalman reference does not apply"
        )
    n, q = model.n, model.q
    F = np.block([[Fx[0], Ft[0]], [np.zeros((q, n)), np.eye(q)]])
    H = np.hstack([Gx[0], Gt[0]])
    return F, np.concatenate([f_off[0], np.zeros(q)]), H, h_off[0]


def kalman_extended(
    model: GaussianSsm,
    u_seq: np.ndarray,
    y_seq: np.ndarray | None = None,
    points: int = 8,
    seed: int = 0,
) -> List[KalmanState]:
    """Kalman filter on z = [x, theta] for models linear in both.

    The covariance does not depend on the measurements; without ``y_seq``
    the mean follows the prediction only.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.p)
    N = u_seq.shape[0]
    x, theta = _check_points(model, points, seed)
    Qe = np.zeros((model.s, model.s))
    Qe[: model.n, : model.n] = model.Q
    eye = np.eye(model.s)

    mean, cov = model.prior_mean.copy(), model.prior_cov.copy()
    states = [KalmanState(t=0, mean=mean, cov=cov)]
    for t in range(N):
        F, f_off, H, h_off = _affine_system(model, x, theta, u_seq[t], measurement_input(u_seq, t))
        mean = F @ mean + f_off
        cov = F @ cov @ F.T + Qe
        S = H @ cov @ H.T + model.R
        K = np.linalg.solve(S, H @ cov).T
        if y_seq is not None:
            innovation = np.asarray(y_seq[t], dtype=float) - (H @ mean + h_off)
            mean = mean + K @ innovation
        joseph = eye - K @ H
        cov = joseph @ cov @ joseph.T + K @ model.R @ K.T
        cov = 0.5 * (cov + cov.T)
        states.append(KalmanState(t=t + 1, mean=mean, cov=cov))
    return states


def _neg_log_density(model: GaussianSsm, v, y_next, u_t, u_next) -> np.ndarray:
    n, q = model.n, model.q
    x_t, theta, x_next = v[..., :n], v[..., n : n + q], v[..., n + q :]
    r1 = x_next - model.drift(x_t, theta, u_t)
    r2 = y_next - model.observation(x_next, theta, u_next)
    return 0.5 * (
        np.einsum("...i,ij,...j->...", r1, model.Q_inv, r1)
        + np.einsum("...i,ij,...j->...", r2, model.R_inv, r2)
    )


def _central_hessian(fn, v: np.ndarray, h: float) -> np.ndarray:
    d = v.shape[-1]
    out = np.empty(v.shape[:-1] + (d, d))
    basis = np.eye(d) * h
    for i in range(d):
        for j in range(i, d):
            ei, ej = basis[i], basis[j]
            cross = fn(v + ei + ej) - fn(v + ei - ej) - fn(v - ei + ej) + fn(v - ei - ej)
            val = cross / (4 * h * h)
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def fd_hessian_samples(
    model: GaussianSsm, x_t, theta, x_next, y_next, u_t, u_next, step: float = 1e-3
) -> np.ndarray:
    """Per-sample Hessians of -log p(x_{t+1}, y_{t+1} | x_t, theta) over (x_t, theta, x_{t+1}).

    Central differences at ``step`` and ``2 * step`` combined by Richardson
    extrapolation; a large gap between the two is logged.
    """
    lo, hi = FD_STEP_RANGE
    if not lo <= step <= hi:
        raise OracleMisuseError(f"finite-difference step {step} outside [{lo}, {hi}]")
    v = np.concatenate([np.asarray(x_t), np.asarray(theta), np.asarray(x_next)], axis=-1)

    def fn(w):
        return _neg_log_density(model, w, y_next, u_t, u_next)

    if not np.all(np.isfinite(fn(v))):
        raise OracleMisuseError("log-density is not finite at the sample points")
    fine = _central_hessian(fn, v, step)
    coarse = _central_hessian(fn, v, 2 * step)
    gap = np.max(np.abs(fine - coarse))
    if gap > RICHARDSON_RTOL * max(1.0, float(np.max(np.abs(fine)))):
        log.warning("fd.richardson_disagreement", step=step, gap=float(gap))
    return (4.0 * fine - coarse) / 3.0


def fd_h_blocks(
    model: GaussianSsm, ensemble: SampleEnsemble, t: int, step: float = 1e-3
) -> HBlocks:
    args = ensemble.step(t)
    samples = fd_hessian_samples(
        model,
        args["x_t"],
        args["theta"],
        args["x_next"],
        ensemble.measurements[t],
        args["u_t"],
        args["u_next"],
        step=step,
    )
    return HBlocks.from_matrix(samples.mean(axis=0), model.n, model.q)


def jacobian_mismatch(
    model: GaussianSsm, points: int = 100, step: float = 1e-6, seed: int = 0, u_range=(-0.8, 0.8)
) -> float:
    """Largest relative gap between analytic and central-difference Jacobians."""
    x, theta = _check_points(model, points, seed)
    u = stream(seed, Stream.ORACLE, 1).uniform(u_range[0], u_range[1], (points, model.p))
    worst = 0.0
    checks = [
        (model.drift, model.jac_drift_x, "x"),
        (model.drift, model.jac_drift_theta, "theta"),
        (model.observation, model.jac_obs_x, "x"),
        (model.observation, model.jac_obs_theta, "theta"),
    ]
    for fn, jac, wrt in checks:
        analytic = jac(x, theta, u)
        base = x if wrt == "x" else theta
        columns = []
        for j in range(base.shape[-1]):
            e = np.zeros(base.shape[-1])
            e[j] = step
            if wrt == "x":
                diff = fn(x + e, theta, u) - fn(x - e, theta, u)
            else:
                diff = fn(x, theta + e, u) - fn(x, theta - e, u)
            columns.append(diff / (2 * step))
        numeric = np.stack(columns, axis=-1)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(np.max(err)))
    return worst


def enumerate_objective(config: DesignConfig, phi) -> float:
    """Exact expectation over every input sequence, on the evaluator's frozen noise table."""
    evaluator = DesignEvaluator(config)
    space = evaluator.template.space
    total = space.r**config.N
    if total > settings.enumeration_cap:
        raise CapacityError(
            f"{total} sequences exceed the enumeration cap {settings.enumeration_cap}"
        )
    policy = policy_from_template(evaluator.template, phi)

    grid_idx = np.array(list(itertools.product(range(space.r), repeat=config.N)), dtype=int)
    inputs = space.grid[grid_idx]
    probs = np.exp([sequence_log_prob(policy, seq) for seq in inputs])
    keep = probs > 0.0
    theta_bounds, _, _ = evaluator.bounds_for(inputs[keep])
    mean_bound = np.einsum("b,btij->tij", probs[keep], theta_bounds)
    return float(np.sum(phi_value(mean_bound, config.criterion)))


def grid_search(config: DesignConfig, levels: int = 11) -> GridSearchResult:
    evaluator = DesignEvaluator(config)
    d = evaluator.template.arity
    if d > 2:
        raise OracleMisuseError(f"grid search is limited to 2 parameters, template has {d}")
    axis = np.linspace(0.0, 1.0, levels)
    points = []
    for phi in itertools.product(axis, repeat=d):
        points.append(GridPoint(phi=list(phi), objective=evaluator.breakdown(np.array(phi)).value))
    best = min(points, key=lambda p: p.objective)
    return GridSearchResult(phi_star=best.phi, objective=best.objective, points=points)
