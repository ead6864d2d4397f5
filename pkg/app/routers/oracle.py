from pathlib import Path
from typing import Any, List

import numpy as np
import structlog

from app.core.config import settings
from app.core.rng import Stream, stream
from app.models import get_model
from app.routers import artifact_meta
from app.schemas.policy import CaseId, PolicyTemplate
from app.schemas.run import RunConfig
from app.services import export
from app.services.designer import design_template, evaluate_breakdown
from app.services.input_policy import build_input_space, policy_from_template, sample_sequence
from app.services.oracles import (
    enumerate_objective,
    fd_hessian_samples,
    jacobian_mismatch,
    kalman_extended,
)
from app.services.pcrlb import bound_trajectory, h_block_terms
from app.services.simulation import sample_prior, simulate_paths

log = structlog.get_logger(__name__)

KALMAN_RTOL = 1e-8
JACOBIAN_RTOL = 1e-5
Z_LIMIT = 5.0
FD_HORIZON = 5
ENUMERATION_HORIZON = 6

Row = List[Any]


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "oracle", parents=parents, help="cross-check the bound against independent references"
    )
    parser.set_defaults(handler=run)


def _prbs(config: RunConfig, model, N: int, key: int):
    space = build_input_space(config.input.u_min, config.input.u_max, 2, p=model.p)
    policy = policy_from_template(PolicyTemplate(case=CaseId.case4, space=space), [])
    return sample_sequence(policy, N, stream(config.seed, Stream.ORACLE, 2, key))


def _kalman_check(config: RunConfig) -> Row:
    model = get_model("bias")
    u_seq = _prbs(config, model, config.design.N, 0)
    trajectory = bound_trajectory(model, u_seq, M=2, seed=config.seed)
    cov = np.stack([s.cov[model.n :, model.n :] for s in kalman_extended(model, u_seq)[1:]])
    diff = np.abs(trajectory.theta_bound - cov)
    rel = float(np.max(diff / np.abs(cov)))
    reference = float(np.trace(cov, axis1=-2, axis2=-1).sum())
    return ["kalman_vs_pim", trajectory.total, reference, float(diff.max()), rel < KALMAN_RTOL]


def _fd_check(config: RunConfig) -> Row:
    model = get_model(config.model)
    M = config.design.M
    u_seq = _prbs(config, model, min(config.design.N, FD_HORIZON), 1)
    initial = sample_prior(model, M, stream(config.seed, Stream.ORACLE, 3))
    ensemble = simulate_paths(model, u_seq, initial, config.seed, key=(Stream.ORACLE,))
    args = ensemble.step(0)
    gram = h_block_terms(model, **args)
    fd = fd_hessian_samples(model, y_next=ensemble.measurements[0], **args)
    diff = fd - gram
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / np.sqrt(M)
    passed = bool(np.all(np.abs(mean) <= Z_LIMIT * se + 1e-6))
    return [
        "fd_vs_gram",
        float(np.linalg.norm(gram.mean(axis=0))),
        float(np.linalg.norm(fd.mean(axis=0))),
        float(np.max(np.abs(mean))),
        passed,
    ]


def _jacobian_check(config: RunConfig) -> Row:
    model = get_model(config.model)
    mismatch = jacobian_mismatch(
        model, seed=config.seed, u_range=(config.input.u_min, config.input.u_max)
    )
    return ["jacobian", mismatch, 0.0, mismatch, mismatch < JACOBIAN_RTOL]


def _enumeration_check(config: RunConfig) -> Row | None:
    case = config.cases[0]
    design = config.design_config(case)
    r = design_template(design).space.r
    horizon = min(config.design.N, ENUMERATION_HORIZON)
    while horizon > config.input.k + 1 and r**horizon > settings.enumeration_cap:
        horizon -= 1
    if r**horizon > settings.enumeration_cap:
        log.warning("oracle.enumeration_skipped", states=r, horizon=horizon)
        return None
    design = design.model_copy(update={"N": horizon})
    params = config.policy_params(case)
    if params is None:
        params = design_template(design).initial_phi
    exact = enumerate_objective(design, params)
    estimate = evaluate_breakdown(design, params)
    gap = abs(estimate.value - exact)
    se = estimate.standard_error
    passed = gap <= (Z_LIMIT * se if np.isfinite(se) else 0.0) + 1e-12
    return [f"enumeration_vs_mc_{case.value}", estimate.value, exact, gap, passed]


def run(config: RunConfig) -> List[Path]:
    rows = [_kalman_check(config), _fd_check(config), _jacobian_check(config)]
    enumeration = _enumeration_check(config)
    if enumeration is not None:
        rows.append(enumeration)
    for row in rows:
        log.info("oracle.check", check=row[0], abs_error=row[3], passed=row[4])
    path = export.write_csv(
        config.output_dir / "oracle_report.csv",
        ["check", "value", "reference", "abs_error", "passed"],
        rows,
        artifact_meta(config),
    )
    return [path]
