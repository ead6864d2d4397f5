import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np
import structlog
from scipy.optimize import minimize
from scipy.special import expit, logit

from app.core.errors import NumericalError, PolicyParameterError
from app.core.rng import Stream, stream
from app.models import get_model
from app.schemas.design import (
    CaseRanking,
    DesignConfig,
    DesignIteration,
    DesignResult,
    ObjectiveBreakdown,
)
from app.schemas.policy import CaseId, MarkovInputPolicy, PolicyTemplate
from app.services.input_policy import (
    build_input_space,
    policy_from_template,
    sequences_from_uniforms,
)
from app.services.pcrlb import bound_trajectories, phi_value
from app.services.simulation import draw_noise_table

log = structlog.get_logger(__name__)

RESTART_POINTS = (0.5, 0.25, 0.75)
LOGIT_CLIP = 30.0


def input_uniforms(seed: int, count: int, length: int) -> np.ndarray:
    """Frozen uniforms behind the input paths; row i drives input path i."""
    return stream(seed, Stream.INPUT).random((count, length))


def design_template(config: DesignConfig) -> PolicyTemplate:
    model = get_model(config.model)
    space = build_input_space(config.u_min, config.u_max, config.b, p=model.p, k=config.k)
    return PolicyTemplate(case=config.case, space=space)


class DesignEvaluator:
    """Common-random-number objective for one design config.

    The noise table and the input-path uniforms are drawn once; only phi
    changes between calls, so the objective is a deterministic function of phi.
    """

    def __init__(self, config: DesignConfig):
        self.config = config
        self.model = get_model(config.model)
        self.template = design_template(config)
        self.noise = draw_noise_table(self.model, config.table_seed, config.M, config.N)
        self.uniforms = input_uniforms(config.seed, config.M_u, config.N - config.k)

    def _chunk(self, inputs: np.ndarray, lo: int, hi: int):
        return bound_trajectories(
            self.model, inputs[lo:hi], self.noise, self.config.criterion, offset=lo
        )

    def bounds_for(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Theta bounds (B, N, q, q), state bounds (B, N, n, n) and per-step Phi (B, N)."""
        count = inputs.shape[0]
        step = self.config.batch_size
        spans = [(lo, min(lo + step, count)) for lo in range(0, count, step)]
        try:
            if self.config.threads == 1 or len(spans) == 1:
                parts = [self._chunk(inputs, lo, hi) for lo, hi in spans]
            else:
                with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                    parts = list(pool.map(lambda s: self._chunk(inputs, *s), spans))
        except NumericalError as e:
            raise e.with_context(input_seed=self.config.seed)
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))

    def breakdown(self, phi) -> ObjectiveBreakdown:
        return self.breakdown_policy(policy_from_template(self.template, phi))

    def breakdown_policy(self, policy: MarkovInputPolicy) -> ObjectiveBreakdown:
        if policy.space.k != self.config.k or policy.space.r != self.template.space.r:
            raise PolicyParameterError("policy input space does not match the design config")
        inputs = sequences_from_uniforms(policy, self.uniforms)
        theta_bounds, state_bounds, per_path = self.bounds_for(inputs)
        mean_bound = theta_bounds.mean(axis=0)
        phi_trace = phi_value(mean_bound, self.config.criterion)
        return ObjectiveBreakdown(
            value=float(np.sum(phi_trace)),
            path_sums=per_path.sum(axis=1),
            mean_bound=mean_bound,
            mean_state_bound=state_bounds.mean(axis=0),
            phi_trace=phi_trace,
        )


def evaluate_breakdown(config: DesignConfig, phi) -> ObjectiveBreakdown:
    return DesignEvaluator(config).breakdown(phi)


def evaluate_objective(config: DesignConfig, phi) -> float:
    """MC estimate of sum_t Phi(E[L_t]) under the policy template at phi."""
    return evaluate_breakdown(config, phi).value


class _StallMonitor:
    def __init__(self, tol: float, patience: int):
        self.tol = tol
        self.patience = patience
        self.best = math.inf
        self.stalled = 0

    def update(self, value: float) -> bool:
        if math.isfinite(self.best):
            gain = (self.best - value) / max(abs(self.best), 1e-300)
            self.stalled = self.stalled + 1 if gain < self.tol else 0
        self.best = min(self.best, value)
        return self.stalled >= self.patience


def optimize(config: DesignConfig) -> DesignResult:
    """Nelder–Mead over logit(phi) with restarts; the first start is the PRBS point."""
    started = time.perf_counter()
    evaluator = DesignEvaluator(config)
    template = evaluator.template
    opts = config.optimizer
    d = template.arity

    cache: dict[tuple, float] = {}
    history: List[DesignIteration] = []
    best = {"value": math.inf, "phi": template.initial_phi}

    def value_at(phi: np.ndarray) -> float:
        key = tuple(float(v) for v in phi)
        if key not in cache:
            cache[key] = evaluator.breakdown(phi).value
        return cache[key]

    def record(phi: np.ndarray, value: float) -> None:
        if value < best["value"]:
            best["value"], best["phi"] = value, np.array(phi, dtype=float)
        history.append(
            DesignIteration(
                iteration=len(history),
                phi=[float(v) for v in phi],
                objective=value,
                best_objective=best["value"],
            )
        )
        log.debug(
            "design.iteration",
            case=config.case.value,
            iteration=len(history) - 1,
            objective=value,
        )

    if d == 0:
        phi0 = template.initial_phi
        record(phi0, value_at(phi0))
        converged = True
    else:
        converged = False

        def to_phi(z: np.ndarray) -> np.ndarray:
            return expit(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP))

        for restart, level in enumerate(RESTART_POINTS[: opts.restarts]):
            z0 = logit(np.full(d, level))
            simplex = np.vstack([z0, z0 + opts.simplex_step * np.eye(d)])
            monitor = _StallMonitor(opts.tol, opts.patience)
            record(to_phi(z0), value_at(to_phi(z0)))
            monitor.update(history[-1].objective)

            def callback(intermediate_result):
                phi = to_phi(intermediate_result.x)
                record(phi, value_at(phi))
                if monitor.update(history[-1].objective):
                    raise StopIteration

            result = minimize(
                lambda z: value_at(to_phi(z)),
                z0,
                method="Nelder-Mead",
                callback=callback,
                options={"maxiter": opts.max_iter, "initial_simplex": simplex},
            )
            stopped = monitor.stalled >= opts.patience
            run_converged = stopped or bool(result.success)
            converged = converged or run_converged
            log.info(
                "design.restart_done",
                case=config.case.value,
                restart=restart,
                start=level,
                objective=float(result.fun),
                iterations=int(result.nit),
                converged=run_converged,
            )

    phi_star = best["phi"]
    final = evaluator.breakdown(phi_star)
    elapsed = time.perf_counter() - started
    log.info(
        "design.done",
        case=config.case.value,
        phi=[float(v) for v in phi_star],
        objective=final.value,
        evaluations=len(cache),
        seconds=round(elapsed, 3),
    )
    return DesignResult(
        case=config.case,
        parameter_names=template.parameter_names,
        phi_star=phi_star,
        policy=policy_from_template(template, phi_star),
        objective=final.value,
        bound_trace=final.phi_trace,
        history=history,
        converged=converged,
        evaluations=len(cache) + 1,
        wall_time=elapsed,
    )


def rank_cases(config: DesignConfig, cases: Sequence[CaseId]) -> CaseRanking:
    """Optimize every case under the same seed and sort ascending by objective."""
    results = [optimize(config.model_copy(update={"case": CaseId(case)})) for case in cases]
    results.sort(key=lambda r: r.objective)
    return CaseRanking(results=results)
