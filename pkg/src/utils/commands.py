"""Running CLI subcommands with uniform config resolution, error capture and exit codes."""

from __future__ import annotations

import os
import traceback
from dataclasses import dataclass, field
from time import perf_counter
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from src.types.config import RunConfig
from src.types.errors import (
    ConfigurationError,
    ContractError,
    DecoderMissingError,
    DimensionError,
    UnsupportedModeError,
)
from src.utils.helpers import (
    get_config_from_file,
    merge_nested,
    parse_key_values,
    set_dotted,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

VALIDATION_ERRORS = (
    ValidationError,
    ConfigurationError,
    ContractError,
    DimensionError,
    UnsupportedModeError,
    DecoderMissingError,
)


@dataclass
class CommandResult:
    """
    Structured result returned by :func:`execute_command`.

    Attributes:
    command:
        Subcommand name.
    exit_code:
        0 on success, 1 for validation failures, 2 for runtime or numeric failures.
    value:
        Whatever the command returned as its primary result (a report, a table).
    outputs:
        Paths of the files the command wrote.
    execution_time:
        Wall-clock runtime in seconds.
    error:
        The exception raised by the command, if any.
    error_type:
        Fully-qualified name of the exception type when ``error`` is present.
    traceback:
        Formatted traceback when an exception was raised.
    """

    command: str
    exit_code: int
    value: Any = None
    outputs: List[str] = field(default_factory=list)
    execution_time: float = 0.0
    error: Optional[BaseException] = None
    error_type: Optional[str] = None
    traceback: Optional[str] = None


def exit_code_for(error: BaseException) -> int:
    """Validation failures map to 1; numeric, file and checkpoint failures to 2."""
    return EXIT_VALIDATION if isinstance(error, VALIDATION_ERRORS) else EXIT_RUNTIME


def execute_command(
    command: str, fn: Callable[[], Tuple[Any, List[str]]]
) -> CommandResult:
    """Run ``fn`` and capture its outcome; ``fn`` returns (value, written paths)."""
    start_time = perf_counter()
    try:
        value, outputs = fn()
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        return CommandResult(
            command=command,
            exit_code=exit_code_for(exc),
            execution_time=perf_counter() - start_time,
            error=exc,
            error_type=f"{exc.__class__.__module__}.{exc.__class__.__name__}",
            traceback=traceback.format_exc(),
        )
    return CommandResult(
        command=command,
        exit_code=EXIT_OK,
        value=value,
        outputs=list(outputs),
        execution_time=perf_counter() - start_time,
    )


# ---- config resolution ------------------------------------------------------
def environment_defaults() -> Dict[str, Any]:
    defaults: Dict[str, Any] = {}
    if os.getenv("GRAPHCAPS_DATA_DIR"):
        defaults["data_dir"] = os.environ["GRAPHCAPS_DATA_DIR"]
    if os.getenv("GRAPHCAPS_OUTPUT_DIR"):
        defaults["output_dir"] = os.environ["GRAPHCAPS_OUTPUT_DIR"]
    return defaults


def parse_set_items(items: Sequence[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ContractError(f"--set expects key=value, got '{item}'")
        key, value = (part.strip() for part in item.split("=", 1))
        set_dotted(overrides, key, value)
    return overrides


@dataclass
class ConfigSources:
    preset: Optional[str] = None
    config_path: Optional[str] = None
    flags: Dict[str, Any] = field(default_factory=dict)
    heads: Optional[int] = None
    overrides: Sequence[str] = ()


def resolve_run_config(sources: ConfigSources) -> Tuple[RunConfig, bool]:
    """
    Merge preset < config file < CLI flags < ``--set`` into a validated RunConfig.

    Returns the config and whether any model field was given explicitly, which
    decides if a checkpoint's embedded model config must match it.
    """
    merged: Dict[str, Any] = environment_defaults()
    flags: Dict[str, Any] = {}
    for key, value in sources.flags.items():
        if value is not None:
            set_dotted(flags, key, value)
    if sources.preset:
        dataset = flags.get("dataset", "mnist")
        merged = merge_nested(
            merged, parse_key_values(get_config_from_file(sources.preset, {"dataset": dataset}))
        )
    if sources.config_path:
        with open(sources.config_path, "r", encoding="utf-8") as f:
            merged = merge_nested(merged, parse_key_values(f.read()))
    merged = merge_nested(merged, flags)
    overrides = parse_set_items(sources.overrides)
    explicit_model = "model" in merged or "model" in overrides or sources.heads is not None

    run = RunConfig(**merged)
    if sources.heads is not None:
        run = run.model_copy(update={"model": run.model.with_heads(sources.heads)})
    if overrides:
        run = RunConfig(**merge_nested(run.model_dump(mode="json"), overrides))
    return run, explicit_model
