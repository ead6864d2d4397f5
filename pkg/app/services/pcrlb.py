"""Posterior Cramér–Rao lower bound for the parameter block of a Gaussian SSM.

The information matrix of z_t = [x_t, theta] is carried as three blocks and
updated with Monte-Carlo expectations of Gram products of the model
Jacobians. All array helpers accept leading batch axes, so one call can run
the recursion for many input sequences at once.
"""
import numpy as np
import structlog

from app.core.errors import BoundDegeneracyError, NumericalError, SimulationDivergenceError
from app.schemas.bound import BoundTrajectory, Criterion, HBlocks, Pim
from app.schemas.common import symmetrize
from app.schemas.ssm import GaussianSsm, NoiseTable
from app.services.simulation import advance, draw_noise_table, prior_draws

log = structlog.get_logger(__name__)

JITTER = 1e-9


def _t(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _quad(left: np.ndarray, weight: np.ndarray, right: np.ndarray) -> np.ndarray:
    """left^T weight right over trailing matrix axes."""
    return np.einsum("...ai,ab,...bj->...ij", left, weight, right)


def _batch_index(values: np.ndarray) -> dict:
    if values.ndim == 0:
        return {}
    return {"batch_index": int(np.argmin(values.reshape(values.shape[0], -1).min(axis=-1)))}


def _min_eigenvalue(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(a)[..., 0]


def _require_pd(a: np.ndarray, what: str) -> None:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        eig = _min_eigenvalue(a)
        raise BoundDegeneracyError(
            f"{what} is not positive definite",
            {"min_eigenvalue": float(np.min(eig)), **_batch_index(eig)},
        ) from None


def _spd_inverse(a: np.ndarray, what: str) -> np.ndarray:
    a = symmetrize(a)
    _require_pd(a, what)
    return symmetrize(np.linalg.inv(a))


def h_terms(
    model: GaussianSsm,
    x_t: np.ndarray,
    theta: np.ndarray,
    x_next: np.ndarray,
    u_t: np.ndarray,
    u_next: np.ndarray,
) -> tuple[np.ndarray, ...]:
    """Per-sample Gram terms (H11, H12, H13, H22, H23, H33), batch axes kept."""
    Fx = model.jac_drift_x(x_t, theta, u_t)
    Ft = model.jac_drift_theta(x_t, theta, u_t)
    Gx = model.jac_obs_x(x_next, theta, u_next)
    Gt = model.jac_obs_theta(x_next, theta, u_next)
    Qi, Ri = model.Q_inv, model.R_inv

    FxQ = np.einsum("...ai,ab->...ib", Fx, Qi)
    FtQ = np.einsum("...ai,ab->...ib", Ft, Qi)
    H11 = _quad(Fx, Qi, Fx)
    H12 = _quad(Fx, Qi, Ft)
    H13 = -FxQ
    H22 = _quad(Ft, Qi, Ft) + _quad(Gt, Ri, Gt)
    H23 = -FtQ + _quad(Gt, Ri, Gx)
    H33 = Qi + _quad(Gx, Ri, Gx)
    return H11, H12, H13, H22, H23, H33


def h_block_terms(model: GaussianSsm, x_t, theta, x_next, u_t, u_next) -> np.ndarray:
    """Assembled per-sample matrices (..., 2n+q, 2n+q) ordered (x_t, theta, x_{t+1})."""
    H11, H12, H13, H22, H23, H33 = h_terms(model, x_t, theta, x_next, u_t, u_next)
    shape = np.broadcast_shapes(H11.shape[:-2], H33.shape[:-2])

    def full(a):
        return np.broadcast_to(a, shape + a.shape[-2:])

    rows = [
        [H11, H12, H13],
        [_t(H12), H22, H23],
        [_t(H13), _t(H23), H33],
    ]
    return np.concatenate(
        [np.concatenate([full(b) for b in row], axis=-1) for row in rows], axis=-2
    )


def estimate_h_blocks(model: GaussianSsm, x_t, theta, x_next, u_t, u_next) -> HBlocks:
    """Sample means of the Gram terms over an ensemble of M paths at one step."""
    if np.asarray(x_t).shape[0] < 1:
        raise ValueError("empty ensemble")
    blocks = h_terms(model, x_t, theta, x_next, u_t, u_next)
    H11, H12, H13, H22, H23, H33 = _mean_blocks(blocks)
    return HBlocks(H11=H11, H12=H12, H13=H13, H22=H22, H23=H23, H33=H33)


def _sample_shape(blocks) -> tuple:
    return np.broadcast_shapes(*(b.shape[:-2] for b in blocks))


def _mean_blocks(blocks) -> tuple[np.ndarray, ...]:
    shape = _sample_shape(blocks)
    return tuple(np.mean(np.broadcast_to(b, shape + b.shape[-2:]), axis=-3) for b in blocks)


def init_pim(model: GaussianSsm) -> Pim:
    return Pim.from_matrix(symmetrize(np.linalg.inv(model.prior_cov)), model.n)


def update_blocks(Jx, Jxt, Jt, H) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    H11, H12, H13, H22, H23, H33 = H
    n = Jx.shape[-1]
    A = symmetrize(Jx + H11)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        A = A + JITTER * np.eye(n)
        log.warning("pim.jitter_applied", jitter=JITTER)
        _require_pd(A, "J^x + H11")
    B = Jxt + H12
    rhs = np.concatenate([np.broadcast_to(H13, B.shape[:-1] + (n,)), B], axis=-1)
    sol = np.linalg.solve(A, rhs)
    AiH13, AiB = sol[..., :n], sol[..., n:]
    H13T = _t(H13)

    Jx_new = symmetrize(H33 - H13T @ AiH13)
    Jxt_new = _t(H23) - H13T @ AiB
    Jt_new = symmetrize(Jt + H22 - _t(B) @ AiB)

    top = np.concatenate([Jx_new, Jxt_new], axis=-1)
    bottom = np.concatenate([_t(Jxt_new), Jt_new], axis=-1)
    assembled = np.concatenate([top, bottom], axis=-2)
    _require_pd(assembled, "posterior information matrix")
    return Jx_new, Jxt_new, Jt_new


def update_pim(J: Pim, H: HBlocks) -> Pim:
    Jx, Jxt, Jt = update_blocks(
        J.Jx, J.Jxtheta, J.Jtheta, (H.H11, H.H12, H.H13, H.H22, H.H23, H.H33)
    )
    return Pim(Jx=Jx, Jxtheta=Jxt, Jtheta=Jt)


def theta_bound_blocks(Jx, Jxt, Jt) -> np.ndarray:
    schur = Jt - _t(Jxt) @ np.linalg.solve(Jx, Jxt)
    return _spd_inverse(schur, "parameter information (Schur complement)")


def state_bound_blocks(Jx, Jxt, Jt) -> np.ndarray:
    schur = Jx - Jxt @ np.linalg.solve(Jt, _t(Jxt))
    return _spd_inverse(schur, "state information (Schur complement)")


def lower_bound_theta(J: Pim) -> np.ndarray:
    """L^theta = [J^theta - J^{x theta T} (J^x)^{-1} J^{x theta}]^{-1}."""
    return theta_bound_blocks(J.Jx, J.Jxtheta, J.Jtheta)


def phi_value(L: np.ndarray, criterion: Criterion = "trace") -> np.ndarray:
    if criterion == "trace":
        return np.trace(L, axis1=-2, axis2=-1)
    if criterion == "logdet":
        sign, logdet = np.linalg.slogdet(L)
        if np.any(sign <= 0):
            raise BoundDegeneracyError("bound matrix has non-positive determinant")
        return logdet
    raise ValueError(f"unknown criterion '{criterion}'")


def bound_trajectories(
    model: GaussianSsm,
    inputs: np.ndarray,
    noise: NoiseTable,
    criterion: Criterion = "trace",
    offset: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the recursion for B input sequences against one frozen noise table.

    ``inputs`` is (B, N, p). Returns theta bounds (B, N, q, q), state bounds
    (B, N, n, n) and Phi of the theta bounds (B, N). ``offset`` is the index
    of the first sequence, used to label failures.
    """
    inputs = np.asarray(inputs, dtype=float)
    B, N, _ = inputs.shape
    if noise.horizon < N:
        raise ValueError(f"noise table covers {noise.horizon} steps, need {N}")
    if noise.paths < 2:
        raise ValueError("the bound needs at least M = 2 sample paths")

    x0, theta = prior_draws(model, noise.prior)
    x = np.broadcast_to(x0, (B,) + x0.shape)
    theta = theta[None]
    init = init_pim(model)
    Jx = np.broadcast_to(init.Jx, (B, model.n, model.n))
    Jxt = np.broadcast_to(init.Jxtheta, (B, model.n, model.q))
    Jt = np.broadcast_to(init.Jtheta, (B, model.q, model.q))

    theta_bounds = np.empty((B, N, model.q, model.q))
    state_bounds = np.empty((B, N, model.n, model.n))
    for t in range(N):
        u_t = inputs[:, t, None, :]
        u_next = inputs[:, min(t + 1, N - 1), None, :]
        try:
            x_next = advance(model, x, theta, u_t, noise.process[t])
            bad = ~np.all(np.isfinite(x_next), axis=-1)
            if np.any(bad):
                b, i = np.unravel_index(int(np.argmax(bad)), bad.shape)
                raise SimulationDivergenceError(
                    "non-finite state in bound recursion", {"batch_index": int(b), "path": int(i)}
                )
            H = _mean_blocks(h_terms(model, x, theta, x_next, u_t, u_next))
            Jx, Jxt, Jt = update_blocks(Jx, Jxt, Jt, H)
            theta_bounds[:, t] = theta_bound_blocks(Jx, Jxt, Jt)
            state_bounds[:, t] = state_bound_blocks(Jx, Jxt, Jt)
        except NumericalError as e:
            if "batch_index" in e.context:
                e.context["input_path"] = offset + e.context.pop("batch_index")
            raise e.with_context(time=t + 1, seed=noise.seed)
        x = x_next
    return theta_bounds, state_bounds, phi_value(theta_bounds, criterion)


def bound_trajectory(
    model: GaussianSsm,
    u_seq: np.ndarray,
    M: int,
    criterion: Criterion = "trace",
    seed: int = 0,
    noise: NoiseTable | None = None,
) -> BoundTrajectory:
    """Bound trajectory for one input sequence using M Monte-Carlo paths."""
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.p)
    N = u_seq.shape[0]
    if noise is None:
        noise = draw_noise_table(model, seed, M, N)
    theta_bounds, state_bounds, phi = bound_trajectories(model, u_seq[None], noise, criterion)
    return BoundTrajectory(
        t=np.arange(1, N + 1),
        theta_bound=theta_bounds[0],
        state_bound=state_bounds[0],
        phi=phi[0],
        criterion=criterion,
    )

