"""Parameter store and optimizers (plain SGD and Adam)."""

from __future__ import annotations

import numpy as np

from celltransit.errors import ConfigError, PoisonedUpdateError
from celltransit.nn.tensor import Tensor


class ParamStore:
    """Named parameter tensors plus per-parameter optimizer state.

    Only parameters with requires_grad=True belong in a store; frozen
    tensors are excluded when the store is built, which guarantees they
    stay bit-identical through training.
    """

    def __init__(self, named_params):
        self.params: dict[str, Tensor] = {}
        for name, p in named_params:
            if name in self.params:
                raise ConfigError(f"duplicate parameter name '{name}'")
            if p.requires_grad:
                self.params[name] = p
        self.state: dict[str, dict] = {}
        self.t = 0

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _checked_grad(self, name: str, p: Tensor):
        if p.grad is None:
            return None
        if not np.all(np.isfinite(p.grad)):
            raise PoisonedUpdateError(name)
        return p.grad


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.0):
    """v = mu*v + g; p -= lr * v.  Parameters without gradients are left
    untouched."""
    for name, p in store.items():
        g = store._checked_grad(name, p)
        if g is None:
            continue
        if momentum != 0.0:
            st = store.state.setdefault(name, {"v": np.zeros_like(p.data)})
            st["v"] = momentum * st["v"] + g
            p.data -= lr * st["v"]
        else:
            p.data -= lr * g


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Standard Adam with bias correction."""
    store.t += 1
    t = store.t
    for name, p in store.items():
        g = store._checked_grad(name, p)
        if g is None:
            continue
        st = store.state.setdefault(
            name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
        st["m"] = beta1 * st["m"] + (1 - beta1) * g
        st["v"] = beta2 * st["v"] + (1 - beta2) * g * g
        mhat = st["m"] / (1 - beta1 ** t)
        vhat = st["v"] / (1 - beta2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
