import hashlib
import io
import json
import re
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    .env file may contain (all optional, with defaults):

    - PCRLB_LOG_LEVEL=INFO (DEBUG, INFO, WARNING, ERROR)
    - PCRLB_LOG_JSON=false (true renders one JSON object per log line)
    - PCRLB_THREADS=1 (worker threads for input paths / SMC runs)
    - PCRLB_BATCH_SIZE=64 (input paths per vectorized PCRLB batch)
    - PCRLB_CHAIN_STATE_CAP=4096 (max Markov window states r^(k+1))
    - PCRLB_ENUMERATION_CAP=4096 (max sequences for exact enumeration)
    - PCRLB_OUTPUT_DIR=out

    Thread count and batch size never change numerical results.
    """
    log_level: str = Field(default="INFO", alias="PCRLB_LOG_LEVEL")
    log_json: bool = Field(default=False, alias="PCRLB_LOG_JSON")
    threads: int = Field(default=1, ge=1, alias="PCRLB_THREADS")
    batch_size: int = Field(default=64, ge=1, alias="PCRLB_BATCH_SIZE")
    chain_state_cap: int = Field(default=4096, ge=1, alias="PCRLB_CHAIN_STATE_CAP")
    enumeration_cap: int = Field(default=4096, ge=1, alias="PCRLB_ENUMERATION_CAP")
    output_dir: Path = Field(default=Path("out"), alias="PCRLB_OUTPUT_DIR")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {"design": {"N": 50, "M": 500, "M_u": 500}, "validate": {"runs": 100}},
    "paper": {"design": {"N": 100, "M": 2000, "M_u": 2000}, "validate": {"runs": 500}},
}
# older configs spell the published-scale preset "full"
PRESET_ALIASES: Dict[str, str] = {"full": "paper"}

_LINE = re.compile(r"^\s*(export\s+)?[A-Za-z_][\w.]*\s*=")

# keys that change where or how fast a run happens, not what it computes
_UNHASHED = {"output_dir", "threads"}


def _nest(flat: Dict[str, Optional[str]]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        *sections, leaf = key.split(".")
        for section in sections:
            child = node.setdefault(section, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{key}: '{section}' is both a value and a section")
            node = child
        node[leaf] = "" if value is None else value
    return nested


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _check_lines(path: Path, text: str) -> None:
    # python-dotenv skips lines it cannot parse; a run config must not
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if not _LINE.match(line):
            raise ConfigError(f"{path}:{number}: expected 'key = value', got '{stripped}'")


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        field = ".".join(str(loc) for loc in err["loc"]) or "<root>"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def parse_config(path: Path | str, overrides: Optional[Dict[str, Any]] = None):
    """Read a flat ``key = value`` run config and resolve it against its preset.

    ``overrides`` holds CLI values (already nested) and wins over the file.
    """
    from app.schemas.run import RunConfig

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not readable: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"config file not readable: {path} ({e})") from e
    _check_lines(path, text)
    flat = dotenv_values(stream=io.StringIO(text), interpolate=False)

    values = _merge(_nest(flat), overrides or {})
    preset = str(values.get("preset", "desk"))
    preset = PRESET_ALIASES.get(preset, preset)
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset '{preset}' (expected one of {sorted(PRESETS)})")
    values["preset"] = preset

    try:
        return RunConfig.model_validate(_merge(PRESETS[preset], values))
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def config_hash(config) -> str:
    payload = config.model_dump(mode="json", exclude=_UNHASHED)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
