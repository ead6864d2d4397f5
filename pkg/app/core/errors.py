from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class PcrlbError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PcrlbError):
    pass


class ModelDefinitionError(PcrlbError):
    pass


class PolicyParameterError(PcrlbError):
    pass


class PolicyStructureError(PcrlbError):
    pass


class EncodingError(PcrlbError):
    pass


class CapacityError(PcrlbError):
    pass


class OracleMisuseError(PcrlbError):
    pass


class NumericalError(PcrlbError):
    """Numerical failure inside a simulation, recursion or filter.

    ``context`` records where it happened (path, time, input path, seed...)
    so the failing draw can be regenerated.
    """

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})

    def with_context(self, **extra: Any) -> "NumericalError":
        self.context.update(extra)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({details})"


class SimulationDivergenceError(NumericalError):
    pass


class BoundDegeneracyError(NumericalError):
    pass


class FilterDegeneracyError(NumericalError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_CONFIG
