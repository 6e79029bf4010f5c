"""
src/utils/tensor/tensor.py
Dense tensors backed by numpy with define-by-run reverse-mode differentiation.

Every op result that depends on a tensor with ``requires_grad`` carries a
:class:`Node` describing how to push adjoints back to its inputs. A
:class:`Tape` is the topologically ordered record of those nodes reachable
from a loss; it is rebuilt from the graph for every backward pass, so each
forward pass effectively gets its own tape. Recording state and the default
precision are thread-local, which keeps tapes confined to their thread.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.types.errors import ContractError, DimensionError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()
_sequence = itertools.count()


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def is_recording() -> bool:
    """True when new ops are being recorded for differentiation."""
    return getattr(_state, "recording", True)


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Select the dtype used for new tensors (float32 default, float64 for checks)."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported precision {resolved}")
    previous = get_default_dtype()
    _state.dtype = resolved
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; ops inside return constants."""
    previous = is_recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = previous


@dataclass(eq=False)
class Node:
    op: str
    inputs: Tuple["Tensor", ...]
    backward: BackwardFn
    seq: int = field(default_factory=lambda: next(_sequence))


class Tensor:
    """A dense real-valued array that can participate in differentiation."""

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None):
        array = np.array(data, dtype=dtype or get_default_dtype(), copy=True)
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(array) if requires_grad else None
        self._node: Optional[Node] = None

    @classmethod
    def _from_op(
        cls, op: str, data: np.ndarray, inputs: Sequence["Tensor"], backward: BackwardFn
    ) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(op, f"output shape {tuple(np.shape(data))}")
        out = cls.__new__(cls)
        out.data = np.asarray(data)
        out.grad = None
        out._node = None
        out.requires_grad = is_recording() and any(t.requires_grad for t in inputs)
        if out.requires_grad:
            out._node = Node(op=op, inputs=tuple(inputs), backward=backward)
        return out

    # ---- array protocol ----------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def assign(self, data: np.ndarray) -> None:
        """Replace the values of a leaf (used by optimizers and checkpoint loading)."""
        if not self.is_leaf:
            raise ContractError("only leaf tensors can be assigned")
        array = np.asarray(data, dtype=self.data.dtype)
        if array.shape != self.data.shape:
            raise DimensionError(f"assign expects shape {self.shape}, got {array.shape}")
        self.data = array.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---- operators ---------------------------------------------------------
    def __add__(self, other):
        from src.utils.tensor import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from src.utils.tensor import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from src.utils.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.utils.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from src.utils.tensor import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.utils.tensor import ops

        return ops.mul(other, self)

    def __neg__(self):
        from src.utils.tensor import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from src.utils.tensor import ops

        return ops.matmul(self, other)

    def __truediv__(self, other):
        from src.utils.tensor import ops

        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a scalar constant")
        return ops.scale(self, 1.0 / float(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.utils.tensor import ops

        return ops.reduce(self, axis=axis, mode="sum", keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.utils.tensor import ops

        return ops.reduce(self, axis=axis, mode="mean", keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from src.utils.tensor import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def backward(self) -> None:
        backward(self)


class Tape:
    """Topologically ordered record of the ops reachable from one output."""

    def __init__(self, entries: List[Tensor]):
        self.entries = entries

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        seen: Dict[int, Tensor] = {}
        stack = [output]
        while stack:
            tensor = stack.pop()
            if tensor._node is None or id(tensor) in seen:
                continue
            seen[id(tensor)] = tensor
            stack.extend(tensor._node.inputs)
        # node sequence numbers are issued at creation, so inputs always precede outputs
        entries = sorted(seen.values(), key=lambda t: t._node.seq)
        return cls(entries)

    @property
    def ops(self) -> List[str]:
        return [t._node.op for t in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def replay_backward(self, output: Tensor, seed: np.ndarray) -> None:
        grads: Dict[int, np.ndarray] = {id(output): seed}
        for tensor in reversed(self.entries):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            node = tensor._node
            input_grads = node.backward(grad)
            for source, source_grad in zip(node.inputs, input_grads):
                if source_grad is None or not source.requires_grad:
                    continue
                if not np.all(np.isfinite(source_grad)):
                    raise NumericError(node.op, "adjoint during backward")
                if source_grad.shape != source.shape:
                    raise DimensionError(
                        f"adjoint of '{node.op}' has shape {source_grad.shape}, "
                        f"input has {source.shape}"
                    )
                if source.is_leaf:
                    _accumulate_leaf(source, source_grad)
                elif id(source) in grads:
                    grads[id(source)] = grads[id(source)] + source_grad
                else:
                    grads[id(source)] = source_grad


def _accumulate_leaf(leaf: Tensor, grad: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.data)
    leaf.grad = leaf.grad + grad.astype(leaf.data.dtype, copy=False)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate_leaf(loss, seed)
        return
    Tape.from_output(loss).replay_backward(loss, seed)


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
