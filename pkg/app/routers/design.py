from pathlib import Path
from typing import List

import structlog

from app.core.rng import Stream, stream
from app.routers import artifact_meta
from app.schemas.run import RunConfig
from app.services import export
from app.services.designer import rank_cases
from app.services.input_policy import sample_sequence, save_policy

log = structlog.get_logger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "design", parents=parents, help="optimize the input policy of each case and rank them"
    )
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> List[Path]:
    out = config.output_dir
    meta = artifact_meta(config)
    ranking = rank_cases(config.design_config(config.cases[0]), config.cases)

    written = [
        export.write_case_report(out / "case_report.csv", ranking.results, meta),
        export.write_design_history(out / "design_history.csv", ranking.results, meta),
    ]
    for index, result in enumerate(ranking.results):
        name = result.case.value
        written.append(
            export.write_bound_trace(out / f"bound_trace_{name}.csv", result.bound_trace, meta)
        )
        policy = result.policy
        policy_path = out / f"policy_{name}.txt"
        save_policy(policy_path, policy)
        written.append(policy_path)

        rng = stream(config.seed, Stream.INPUT, 0, index)
        sample = sample_sequence(policy, config.design.N, rng)
        written.append(export.write_input_sample(out / f"input_sample_{name}.csv", sample, meta))

    log.info(
        "design.ranking",
        order=[r.case.value for r in ranking.results],
        psi_bar=[r.objective for r in ranking.results],
    )
    return written
