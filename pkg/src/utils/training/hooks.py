"""
src/utils/training/hooks.py
Lifecycle callbacks for the training loop: console progress and JSONL traces.
"""

from __future__ import annotations

import json
import threading
import time
from collections.abc import Mapping
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Set

import numpy as np
from pydantic import BaseModel

from src.types.results import MetricRow, TrainState


class TrainerHooks:
    """Receives callbacks on lifecycle events of a training run.

    Subclass and override the methods you need.
    """

    def on_train_start(self, config: Any, num_examples: int) -> None:
        """Called once before the first epoch."""

    def on_epoch_start(self, epoch: int, lr: float) -> None:
        """Called before each epoch with the decayed learning rate."""

    def on_step(self, epoch: int, step: int, loss: float, batch_size: int) -> None:
        """Called after every optimizer update."""

    def on_epoch_end(self, epoch: int, rows: Sequence[MetricRow]) -> None:
        """Called with the metric rows recorded for the finished epoch."""

    def on_train_end(self, state: TrainState, error: Optional[BaseException] = None) -> None:
        """Called when training finishes or aborts."""


class PrintingTrainerHooks(TrainerHooks):
    def __init__(self, every: int = 50):
        self.every = max(1, every)

    def on_train_start(self, config: Any, num_examples: int) -> None:
        print(f"Training on {num_examples} examples")

    def on_epoch_start(self, epoch: int, lr: float) -> None:
        print(f"Epoch {epoch + 1} starting, lr={lr:.6g}")

    def on_step(self, epoch: int, step: int, loss: float, batch_size: int) -> None:
        if step % self.every == 0:
            print(f"  step {step}: loss={loss:.6f}")

    def on_epoch_end(self, epoch: int, rows: Sequence[MetricRow]) -> None:
        summary = ", ".join(f"{r.split} loss={r.loss:.6f} acc={r.accuracy:.4f}" for r in rows)
        print(f"Epoch {epoch + 1} finished: {summary}")

    def on_train_end(self, state: TrainState, error: Optional[BaseException] = None) -> None:
        if error is not None:
            print(f"Training aborted after {state.step} steps: {error}")
        else:
            print(f"Training finished after {state.epoch} epochs, {state.step} steps")


def _sanitize_for_json(value: Any, *, _visited: Optional[Set[int]] = None) -> Any:
    """Recursively convert ``value`` into a JSON-serializable structure."""

    if value is None or isinstance(value, (str, int, float, bool)):
        return value

    if isinstance(value, Enum):
        return value.value

    if isinstance(value, np.generic):
        return value.item()

    if _visited is None:
        _visited = set()

    obj_id = id(value)
    if obj_id in _visited:
        return "<recursion>"
    _visited.add(obj_id)

    if isinstance(value, BaseException):
        return {
            "type": f"{value.__class__.__module__}.{value.__class__.__name__}",
            "message": str(value),
        }

    if isinstance(value, np.ndarray):
        if value.size > 64:
            return {"shape": list(value.shape), "dtype": str(value.dtype)}
        return _sanitize_for_json(value.tolist(), _visited=_visited)

    if isinstance(value, BaseModel):
        return _sanitize_for_json(value.model_dump(mode="json"), _visited=_visited)

    if is_dataclass(value):
        try:
            return _sanitize_for_json(asdict(value), _visited=_visited)
        except TypeError:
            return repr(value)

    if isinstance(value, Mapping):
        return {
            str(key): _sanitize_for_json(item, _visited=_visited)
            for key, item in value.items()
        }

    if isinstance(value, (list, tuple, set, frozenset)):
        return [_sanitize_for_json(item, _visited=_visited) for item in value]

    representation = repr(value)
    if len(representation) > 1000:
        representation = representation[:997] + "..."
    return representation


class JSONLTraceHooks(TrainerHooks):
    """Appends one JSON object per lifecycle event to a JSONL file.

    Each line has an ``event`` field in {"train_start", "epoch_start", "step",
    "epoch_end", "train_end"} and a wall-clock ``ts``.
    """

    def __init__(self, path: str, flush_every: int = 1):
        self.path = path
        self.flush_every = max(1, flush_every)
        self._lock = threading.Lock()
        self._write_count = 0
        self._buffer: List[str] = []

    def _write_record(self, record: Dict[str, Any]) -> None:
        record = {"ts": time.time(), **record}
        line = json.dumps(_sanitize_for_json(record), ensure_ascii=False)
        with self._lock:
            self._buffer.append(line)
            self._write_count += 1
            if self._write_count % self.flush_every == 0:
                self._flush_locked()

    def _flush_locked(self) -> None:
        if self._buffer:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write("\n".join(self._buffer) + "\n")
            self._buffer.clear()

    def on_train_start(self, config: Any, num_examples: int) -> None:
        self._write_record({"event": "train_start", "config": config, "examples": num_examples})

    def on_epoch_start(self, epoch: int, lr: float) -> None:
        self._write_record({"event": "epoch_start", "epoch": epoch, "lr": lr})

    def on_step(self, epoch: int, step: int, loss: float, batch_size: int) -> None:
        self._write_record(
            {"event": "step", "epoch": epoch, "step": step, "loss": loss, "batch": batch_size}
        )

    def on_epoch_end(self, epoch: int, rows: Sequence[MetricRow]) -> None:
        self._write_record({"event": "epoch_end", "epoch": epoch, "metrics": list(rows)})

    def on_train_end(self, state: TrainState, error: Optional[BaseException] = None) -> None:
        self._write_record(
            {"event": "train_end", "epoch": state.epoch, "step": state.step, "error": error}
        )
        self.force_flush()

    def force_flush(self) -> None:
        with self._lock:
            self._flush_locked()


class CompositeHooks(TrainerHooks):
    """Forwards every event to each wrapped hook in order."""

    def __init__(self, hooks: Sequence[TrainerHooks]):
        self.hooks = list(hooks)

    def on_train_start(self, config: Any, num_examples: int) -> None:
        for hook in self.hooks:
            hook.on_train_start(config, num_examples)

    def on_epoch_start(self, epoch: int, lr: float) -> None:
        for hook in self.hooks:
            hook.on_epoch_start(epoch, lr)

    def on_step(self, epoch: int, step: int, loss: float, batch_size: int) -> None:
        for hook in self.hooks:
            hook.on_step(epoch, step, loss, batch_size)

    def on_epoch_end(self, epoch: int, rows: Sequence[MetricRow]) -> None:
        for hook in self.hooks:
            hook.on_epoch_end(epoch, rows)

    def on_train_end(self, state: TrainState, error: Optional[BaseException] = None) -> None:
        for hook in self.hooks:
            hook.on_train_end(state, error)
