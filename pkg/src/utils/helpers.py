import os
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from pydantic import BaseModel

from src.types.errors import ContractError


def get_config_from_file(filename: str, values: Optional[dict] = None) -> str:
    """
    Loads a bundled key-value config template and optionally fills in placeholders.

    Args:
            filename: The name of the template file (without extension).
            values: A dictionary of values to replace ``{{name}}`` placeholders.

    Returns:
            The config text with placeholders replaced by corresponding values.
    """
    base_dir = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "configs")
    file_path = os.path.join(base_dir, f"{filename}.txt")
    if not os.path.exists(file_path):
        available = sorted(f[:-4] for f in os.listdir(base_dir) if f.endswith(".txt"))
        raise ContractError(f"unknown preset '{filename}', available: {', '.join(available)}")
    with open(file_path, mode="r", encoding="utf-8") as f:
        text = f.read()

    if values:
        for k, v in values.items():
            text = text.replace(f"{{{{{k}}}}}", str(v))
    return text


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ":".join(_format_value(v) for v in value)
    if isinstance(value, list):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def dump_key_values(model: BaseModel, prefix: str = "") -> str:
    """Render a pydantic model as ``key = value`` lines, dotted keys for nesting."""
    lines: List[str] = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            lines.append(dump_key_values(value, prefix=f"{key}.").rstrip("\n"))
        else:
            lines.append(f"{key} = {_format_value(value)}".rstrip())
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines into a nested dict of strings. ``#`` starts a comment."""
    result: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ContractError(f"line {number}: empty key")
        set_dotted(result, key, value)
    return result


def set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    node = target
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ContractError(f"key '{key}' conflicts with a scalar value at '{part}'")
        node = child
    node[parts[-1]] = value


def merge_nested(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_nested(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_index_list(text: str, upper: Optional[int] = None) -> List[int]:
    """Expand ``"0..9"`` (inclusive) or ``"1,4,7"`` or mixes like ``"0..2,5"``."""
    indices: List[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        try:
            if ".." in part:
                start, stop = (int(p) for p in part.split("..", 1))
                if stop < start:
                    raise ContractError(f"empty range '{part}'")
                indices.extend(range(start, stop + 1))
            else:
                indices.append(int(part))
        except ValueError as e:
            if isinstance(e, ContractError):
                raise
            raise ContractError(f"invalid index '{part}' in '{text}'") from e
    if not indices:
        raise ContractError(f"no indices in '{text}'")
    for index in indices:
        if index < 0 or (upper is not None and index >= upper):
            bound = f"[0, {upper})" if upper is not None else "non-negative"
            raise ContractError(f"index {index} is out of range, expected {bound}")
    return indices


def unique_in_order(items: Iterable[Any]) -> List[Any]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out
