from pathlib import Path
from typing import Dict, List

import structlog

from app.models import get_model
from app.routers import artifact_meta, fixed_policy
from app.schemas.run import RunConfig
from app.schemas.validation import ValidationReport
from app.services import export
from app.services.smc import mse_experiment

log = structlog.get_logger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "validate", parents=parents, help="compare particle-filter MSE with the bound"
    )
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> List[Path]:
    out = config.output_dir
    meta = artifact_meta(config)
    model = get_model(config.model)
    section = config.validate_
    reports: Dict[str, ValidationReport] = {}
    written = []
    for case in config.cases:
        report = mse_experiment(
            model,
            section.theta_star,
            fixed_policy(config, case),
            runs=section.runs,
            N=config.design.N,
            smc_config=config.smc_config(),
            M=section.M or config.design.M,
            seed=config.seed,
            threads=config.threads,
        )
        reports[case.value] = report
        written.append(export.write_mse_trace(out / f"mse_trace_{case.value}.csv", report, meta))
        if report.excluded:
            log.warning("validate.excluded_runs", case=case.value, excluded=report.excluded)
    written.append(export.write_validation_summary(out / "validation_summary.csv", reports, meta))
    return written
