from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(param, grad, m, v, step: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(param, m, v)`` as new arrays.

    ``step`` is the 1-based index of this update.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            new, self.m[i], self.v[i] = adam_step(p.data, g, self.m[i], self.v[i], self.step_count,
                                                  self.lr, self.beta1, self.beta2, self.eps)
            p.data = new.astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"step": np.array(self.step_count)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m{i}"] = m
            state[f"v{i}"] = v
        return state

    def load_state_dict(self, state) -> None:
        self.step_count = int(state["step"])
        self.m = [np.asarray(state[f"m{i}"]).astype(p.dtype) for i, p in enumerate(self.params)]
        self.v = [np.asarray(state[f"v{i}"]).astype(p.dtype) for i, p in enumerate(self.params)]
