"""Central finite-difference oracle for checking analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


# central-difference stencils: (offsets in units of eps, weights, divisor)
_STENCILS = {
    2: ((1, -1), (1.0, -1.0), 2.0),
    4: ((2, 1, -1, -2), (-1.0, 8.0, -8.0, 1.0), 12.0),
}


def numeric_grad(fn, tensors, eps: float = 1e-6, coords=None, order: int = 2) -> list[np.ndarray]:
    """Central differences of scalar ``fn()`` with respect to each tensor in ``tensors``.

    ``coords`` optionally restricts each tensor to a list of flat indices; the
    other entries of the returned arrays are NaN. ``order=4`` uses the
    five-point stencil, which allows a larger ``eps`` (less roundoff) for the
    same truncation error.
    """
    offsets, weights, divisor = _STENCILS[order]
    grads = []
    for i, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        if not np.shares_memory(flat, t.data):
            raise ValueError("finite differences need contiguous tensor storage")
        out = np.full(flat.shape, np.nan)
        which = range(flat.size) if coords is None else coords[i]
        for j in which:
            orig = flat[j]
            total = 0.0
            for k, w in zip(offsets, weights):
                flat[j] = orig + k * eps
                total += w * float(fn().data.sum())
            flat[j] = orig
            out[j] = total / (divisor * eps)
        grads.append(out.reshape(t.shape))
    return grads


def analytic_grad(fn, tensors) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    backward(fn())
    return [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)`` over finite entries."""
    mask = np.isfinite(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn, tensors: list[Tensor], eps: float = 1e-6, floor: float = 1e-6,
                    max_coords: int | None = None, rng=None, order: int = 2) -> float:
    """Max relative error between backprop and finite differences for scalar ``fn``."""
    coords = None
    if max_coords is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = [rng.choice(t.size, size=min(t.size, max_coords), replace=False) for t in tensors]
    analytic = analytic_grad(fn, tensors)
    numeric = numeric_grad(fn, tensors, eps, coords, order)
    return max(relative_error(a, n, floor) for a, n in zip(analytic, numeric))
