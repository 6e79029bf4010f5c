"""
src/utils/training/optimizer.py
Adam with bias correction, operating in place on leaf tensors.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.types.errors import CheckpointShapeError
from src.utils.tensor import Tensor


class Adam:
    def __init__(
        self,
        params: Sequence[Tuple[str, Tensor]],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params: List[Tuple[str, Tensor]] = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.zeros_like(p.data)) for name, p in self.params
        )
        self.v: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.zeros_like(p.data)) for name, p in self.params
        )

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """
        One update from the gradients currently stored on the parameters.

        A zero gradient leaves the moments at zero and the parameters untouched.
        """
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for name, p in self.params:
            if p.grad is None:
                continue
            dtype = p.data.dtype.type
            g = p.grad.astype(p.data.dtype, copy=False)
            self.m[name] = dtype(self.beta1) * self.m[name] + dtype(1.0 - self.beta1) * g
            self.v[name] = dtype(self.beta2) * self.v[name] + dtype(1.0 - self.beta2) * g * g
            m_hat = self.m[name] / dtype(correction1)
            v_hat = self.v[name] / dtype(correction2)
            update = dtype(self.lr) * m_hat / (np.sqrt(v_hat) + dtype(self.eps))
            p.assign(p.data - update)

    # ---- persistence ---------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = OrderedDict()
        for name in self.m:
            state[f"m.{name}"] = self.m[name].copy()
        for name in self.v:
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params:
            for prefix, buffers in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{name}"
                if key not in state:
                    raise CheckpointShapeError(f"optimizer state lacks '{key}'")
                value = np.asarray(state[key], dtype=p.data.dtype)
                if value.shape != p.shape:
                    raise CheckpointShapeError(
                        f"optimizer buffer '{key}' has shape {value.shape}, parameter has {p.shape}"
                    )
                buffers[name] = value.copy()
        self.step_count = int(step_count)
