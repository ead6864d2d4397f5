from typing import Callable, Dict, List

from app.core.errors import ModelDefinitionError
from app.models.benchmark import make_benchmark_model
from app.models.bias import make_bias_model
from app.schemas.ssm import GaussianSsm

ModelFactory = Callable[[], GaussianSsm]

_REGISTRY: Dict[str, ModelFactory] = {
    "benchmark": make_benchmark_model,
    "bias": make_bias_model,
}


def register_model(name: str, factory: ModelFactory, *, replace: bool = False) -> None:
    if name in _REGISTRY and not replace:
        raise ModelDefinitionError(f"model '{name}' is already registered")
    _REGISTRY[name] = factory


def get_model(name: str) -> GaussianSsm:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ModelDefinitionError(
            f"unknown model '{name}' (available: {', '.join(available_models())})"
        ) from None
    return factory()


def available_models() -> List[str]:
    return sorted(_REGISTRY)
