from pathlib import Path
from typing import List

import numpy as np
import structlog

from app.routers import artifact_meta, fixed_policy
from app.schemas.run import RunConfig
from app.services import export
from app.services.designer import DesignEvaluator

log = structlog.get_logger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "bound", parents=parents, help="evaluate the bound trajectory of a fixed input policy"
    )
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> List[Path]:
    out = config.output_dir
    meta = artifact_meta(config)
    written = []
    for case in config.cases:
        evaluator = DesignEvaluator(config.design_config(case))
        result = evaluator.breakdown_policy(fixed_policy(config, case))
        name = case.value
        written += [
            export.write_bound_trajectory(
                out / f"bound_trajectory_{name}.csv", result.phi_trace, result.mean_bound, meta
            ),
            export.write_bound_trace(out / f"bound_trace_{name}.csv", result.phi_trace, meta),
            export.write_bound_trace(
                out / f"bound_state_{name}.csv",
                np.trace(result.mean_state_bound, axis1=-2, axis2=-1),
                meta,
                column="trace_state_bound",
            ),
        ]
        log.info(
            "bound.done", case=name, psi_bar=result.value, standard_error=result.standard_error
        )
    return written
