from typing import Any, Dict

from app.core.config import config_hash
from app.schemas.policy import CaseId, MarkovInputPolicy
from app.schemas.run import RunConfig
from app.services.designer import design_template
from app.services.input_policy import load_policy, policy_from_template


def artifact_meta(config: RunConfig) -> Dict[str, Any]:
    return {"seed": config.seed, "config_hash": config_hash(config)}


def fixed_policy(config: RunConfig, case: CaseId) -> MarkovInputPolicy:
    """Policy for runs that do not optimize: a policy file, explicit params, or reference values."""
    if config.policy.file is not None:
        return load_policy(config.policy.file)
    template = design_template(config.design_config(case))
    params = config.policy_params(case)
    return policy_from_template(template, template.initial_phi if params is None else params)
