import json
import os
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

from dotenv import find_dotenv, load_dotenv
from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench.constants import ENV_PREFIX
from iot_compression_bench.exceptions import ValidationError
from iot_compression_bench.models import Mode, RunConfig

T = TypeVar("T")

RATE_SUFFIXES = {"K": 10 ** 3, "M": 10 ** 6, "G": 10 ** 9}

MODE_ALIASES = {
    "compress": Mode.COMPRESS_AND_TRANSMIT,
    "precompressed": Mode.PRECOMPRESSED_TRANSMIT,
    "raw": Mode.RAW_TRANSMIT,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def load_environment(dotenv_path: Optional[str] = None) -> None:
    """Loads ``.env`` from the working directory up, without overriding variables already set."""
    load_dotenv(dotenv_path or find_dotenv(usecwd=True), override=False)


def parse_rate(text: str | int) -> int:
    """
    Parses a link rate in bits per second: ``100000000``, ``100M``, ``1.5G``.

    Raises:
        ValidationError: For anything that is not a positive rate.
    """
    if isinstance(text, int):
        value = text
    else:
        cleaned = text.strip().upper()
        multiplier = RATE_SUFFIXES.get(cleaned[-1:], 1)
        if multiplier != 1:
            cleaned = cleaned[:-1]
        try:
            value = round(float(cleaned) * multiplier)
        except ValueError:
            raise ValidationError(f"invalid rate {text!r}; expected e.g. 100M") from None
    if value <= 0:
        raise ValidationError(f"rate must be positive, got {text!r}")
    return value


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(f"invalid integer list {text!r}") from None


def parse_modes(text: str) -> List[Mode]:
    """Accepts full mode names or the short forms compress, precompressed, raw."""
    modes = []
    for part in (p.strip().lower() for p in text.split(",")):
        if not part:
            continue
        if part in MODE_ALIASES:
            modes.append(MODE_ALIASES[part])
            continue
        try:
            modes.append(Mode(part))
        except ValueError:
            raise ValidationError(f"unknown mode {part!r}") from None
    return modes


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValidationError(f"invalid boolean {text!r}")


def env_name(flag: str) -> str:
    """``batch_sizes`` -> ``ICB_BATCH_SIZES``."""
    return ENV_PREFIX + flag.upper()


def env_value(flag: str, parse: Callable[[str], T]) -> Optional[T]:
    raw = os.getenv(env_name(flag))
    if raw is None:
        return None
    try:
        return parse(raw)
    except ValidationError as e:
        raise ValidationError(f"{env_name(flag)}: {e}") from None
    except ValueError:
        raise ValidationError(f"{env_name(flag)}: invalid value {raw!r}") from None


def resolve(flag: str, explicit: Optional[T], parse: Callable[[str], T], default: T) -> T:
    """Explicit flag, else ``ICB_<FLAG>``, else the built-in default."""
    if explicit is not None:
        return explicit
    from_env = env_value(flag, parse)
    return default if from_env is None else from_env


def build_run_config(**fields) -> RunConfig:
    try:
        return RunConfig(**fields)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid run configuration: {e}") from None


def load_run_config(path: str) -> RunConfig:
    """
    Loads a RunConfig recorded by a previous ``bench`` run.

    Raises:
        OSError: If the file cannot be read.
        ValidationError: If it is not a valid RunConfig document.
    """
    text = Path(path).read_text()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not JSON: {e}") from None
    # Report files wrap the config next to the environment.
    if isinstance(document, dict) and "config" in document:
        document = document["config"]
    try:
        return RunConfig.model_validate(document)
    except PydanticValidationError as e:
        raise ValidationError(f"{path}: invalid run configuration: {e}") from None
