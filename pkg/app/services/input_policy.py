import itertools
from pathlib import Path
from typing import Sequence

import numpy as np
import structlog

from app.core.config import settings
from app.core.errors import (
    CapacityError,
    EncodingError,
    PolicyParameterError,
    PolicyStructureError,
)
from app.schemas.policy import ROW_SUM_TOL, CaseId, InputSpace, MarkovInputPolicy, PolicyTemplate

log = structlog.get_logger(__name__)

GRID_TOL = 1e-9
POLICY_HEADER = "markov-input-policy"


def build_input_space(
    u_min: float | Sequence[float],
    u_max: float | Sequence[float],
    b: int,
    p: int = 1,
    k: int = 0,
    cap: int | None = None,
) -> InputSpace:
    if b < 2:
        raise PolicyParameterError(f"b must be >= 2, got {b}")
    if k < 0:
        raise PolicyParameterError(f"k must be >= 0, got {k}")
    lo = np.broadcast_to(np.asarray(u_min, dtype=float), (p,)).copy()
    hi = np.broadcast_to(np.asarray(u_max, dtype=float), (p,)).copy()
    if np.any(lo >= hi):
        raise PolicyParameterError(f"u_min {lo.tolist()} must be below u_max {hi.tolist()}")

    cap = settings.chain_state_cap if cap is None else cap
    r = b**p
    states = r ** (k + 1)
    if states > cap:
        raise CapacityError(f"chain needs r^(k+1) = {states} window states, cap is {cap}")

    levels = np.stack([np.linspace(lo[j], hi[j], b) for j in range(p)])
    grid = np.array(list(itertools.product(*levels)), dtype=float).reshape(r, p)
    windows = np.array(list(itertools.product(range(r), repeat=k + 1)), dtype=int)
    return InputSpace(
        p=p,
        b=b,
        k=k,
        u_min=lo,
        u_max=hi,
        levels=levels,
        grid=grid,
        windows=windows.reshape(states, k + 1),
    )


def _normalized(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if total <= 0.0:
        return np.full(weights.shape, 1.0 / weights.size)
    return weights / total


def _check_phi(template: PolicyTemplate, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size != template.arity:
        raise PolicyParameterError(
            f"{template.case.value} takes {template.arity} parameters, got {phi.size}"
        )
    if not np.all(np.isfinite(phi)) or np.any(phi < 0.0) or np.any(phi > 1.0):
        raise PolicyParameterError(f"parameters must lie in [0, 1], got {phi.tolist()}")
    return phi


def policy_from_template(template: PolicyTemplate, phi) -> MarkovInputPolicy:
    phi = _check_phi(template, phi)
    space = template.space

    if template.case == CaseId.free:
        S, r = space.states, space.r
        P_gamma = _normalized(phi[:S])
        P_pi = np.zeros((S, S))
        row_weights = phi[S:].reshape(S, r)
        for w in range(S):
            P_pi[w, space.consistent_targets(w)] = _normalized(row_weights[w])
        return MarkovInputPolicy(space=space, P_gamma=P_gamma, P_pi=P_pi)

    if (space.b, space.p, space.k) != (2, 1, 0):
        raise PolicyParameterError(
            f"{template.case.value} is defined for b=2, p=1, k=0; "
            f"got b={space.b}, p={space.p}, k={space.k}"
        )
    if template.case == CaseId.case1:
        (p1,) = phi
        P_gamma, P_pi = [p1, 1 - p1], [[p1, 1 - p1], [1 - p1, p1]]
    elif template.case == CaseId.case2:
        p1, p2 = phi
        P_gamma, P_pi = [p1, 1 - p1], [[p1, 1 - p1], [1 - p2, p2]]
    elif template.case == CaseId.case3:
        p0, p1, p2 = phi
        P_gamma, P_pi = [p0, 1 - p0], [[p1, 1 - p1], [1 - p2, p2]]
    else:
        P_gamma, P_pi = [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]]
    return MarkovInputPolicy(space=space, P_gamma=P_gamma, P_pi=P_pi)


def make_policy(space: InputSpace, P_gamma, P_pi) -> MarkovInputPolicy:
    """Build a policy from dense matrices, dropping overlap-inconsistent transitions.

    Rows with mass on inconsistent targets are renormalized over the
    consistent ones (uniformly when none carries mass).
    """
    P_pi = np.array(P_pi, dtype=float)
    if space.k >= 1:
        changed = []
        for w in range(space.states):
            targets = space.consistent_targets(w)
            kept = P_pi[w, targets]
            if abs(kept.sum() - 1.0) > ROW_SUM_TOL:
                changed.append(w)
            P_pi[w] = 0.0
            P_pi[w, targets] = _normalized(kept)
        if changed:
            log.warning("policy.renormalized", rows=changed[:10], count=len(changed))
    return MarkovInputPolicy(space=space, P_gamma=P_gamma, P_pi=P_pi)


def _require_consistent(policy: MarkovInputPolicy) -> None:
    if policy.space.k == 0:
        return
    mass = policy.inconsistent_mass()
    bad = np.flatnonzero(mass > ROW_SUM_TOL)
    if bad.size:
        raise PolicyStructureError(
            f"P_pi row {int(bad[0])} puts {mass[bad[0]]!r} on windows that do not overlap"
        )


def _inverse_cdf(cum: np.ndarray, last: np.ndarray, u: np.ndarray) -> np.ndarray:
    """First index whose cumulative probability exceeds u, row-wise."""
    idx = np.sum(cum <= u[..., None], axis=-1)
    return np.minimum(idx, last)


def window_paths_from_uniforms(policy: MarkovInputPolicy, uniforms: np.ndarray) -> np.ndarray:
    """Window-state paths (B, L) from frozen uniforms (B, L) by inverse CDF."""
    _require_consistent(policy)
    uniforms = np.atleast_2d(np.asarray(uniforms, dtype=float))
    cum_gamma = np.cumsum(policy.P_gamma)
    cum_pi = np.cumsum(policy.P_pi, axis=1)
    last_gamma = np.flatnonzero(policy.P_gamma > 0.0)[-1]
    last_pi = np.array([np.flatnonzero(row > 0.0)[-1] for row in policy.P_pi])

    B, L = uniforms.shape
    paths = np.empty((B, L), dtype=int)
    paths[:, 0] = _inverse_cdf(cum_gamma, last_gamma, uniforms[:, 0])
    for j in range(1, L):
        prev = paths[:, j - 1]
        paths[:, j] = _inverse_cdf(cum_pi[prev], last_pi[prev], uniforms[:, j])
    return paths


def decode_windows(space: InputSpace, paths: np.ndarray) -> np.ndarray:
    """Window paths (B, N-k) -> input sequences (B, N, p)."""
    first = space.windows[paths[:, 0]]
    rest = space.windows[paths[:, 1:], -1]
    grid_idx = np.concatenate([first, rest], axis=1)
    return space.grid[grid_idx]


def sequences_from_uniforms(policy: MarkovInputPolicy, uniforms: np.ndarray) -> np.ndarray:
    return decode_windows(policy.space, window_paths_from_uniforms(policy, uniforms))


def _sequence_length_check(space: InputSpace, N: int) -> None:
    if N < space.k + 1:
        raise PolicyParameterError(
            f"sequence length {N} is shorter than the window k+1={space.k + 1}"
        )


def sample_sequences(
    policy: MarkovInputPolicy, N: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    _sequence_length_check(policy.space, N)
    return sequences_from_uniforms(policy, rng.random((count, N - policy.space.k)))


def sample_sequence(policy: MarkovInputPolicy, N: int, rng: np.random.Generator) -> np.ndarray:
    return sample_sequences(policy, N, 1, rng)[0]


def encode_sequence(space: InputSpace, u_seq) -> np.ndarray:
    """Grid index of each input; inputs off the grid are rejected."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, space.p)
    dist = np.max(np.abs(u_seq[:, None, :] - space.grid[None]), axis=-1)
    idx = np.argmin(dist, axis=1)
    off = np.flatnonzero(dist[np.arange(len(idx)), idx] > GRID_TOL)
    if off.size:
        t = int(off[0])
        raise EncodingError(f"input {u_seq[t].tolist()} at t={t} is not a grid point")
    return idx


def window_indices(space: InputSpace, grid_idx: np.ndarray) -> np.ndarray:
    width = space.k + 1
    weights = space.r ** np.arange(space.k, -1, -1)
    frames = np.lib.stride_tricks.sliding_window_view(grid_idx, width)
    return frames @ weights


def sequence_log_prob(policy: MarkovInputPolicy, u_seq) -> float:
    space = policy.space
    grid_idx = encode_sequence(space, u_seq)
    _sequence_length_check(space, grid_idx.size)
    _require_consistent(policy)
    windows = window_indices(space, grid_idx)
    probs = np.concatenate([[policy.P_gamma[windows[0]]], policy.P_pi[windows[:-1], windows[1:]]])
    if np.any(probs == 0.0):
        return float("-inf")
    return float(np.sum(np.log(probs)))


def save_policy(path: Path | str, policy: MarkovInputPolicy) -> None:
    space = policy.space
    header = [
        POLICY_HEADER,
        f"b={space.b}",
        f"p={space.p}",
        f"k={space.k}",
        "u_min=" + " ".join(repr(float(v)) for v in space.u_min),
        "u_max=" + " ".join(repr(float(v)) for v in space.u_max),
    ]
    header += [
        f"levels_{j}=" + " ".join(repr(float(v)) for v in space.levels[j]) for j in range(space.p)
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        np.savetxt(fh, policy.P_gamma[None], fmt="%.17g")
        np.savetxt(fh, policy.P_pi, fmt="%.17g")


def load_policy(path: Path | str) -> MarkovInputPolicy:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                continue
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
    try:
        b, p, k = int(meta["b"]), int(meta["p"]), int(meta["k"])
        u_min = [float(v) for v in meta["u_min"].split()]
        u_max = [float(v) for v in meta["u_max"].split()]
    except (KeyError, ValueError) as e:
        raise PolicyParameterError(f"{path}: malformed policy header ({e})") from e

    space = build_input_space(u_min, u_max, b, p=p, k=k)
    rows = np.loadtxt(path, comments="#", ndmin=2)
    if rows.shape != (space.states + 1, space.states):
        raise PolicyParameterError(
            f"{path}: expected {space.states + 1} rows of {space.states} values, got {rows.shape}"
        )
    return MarkovInputPolicy(space=space, P_gamma=rows[0], P_pi=rows[1:])
