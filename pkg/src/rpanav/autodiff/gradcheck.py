"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Value


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise error that is relative for large gradients and absolute near zero."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(diff <= floor, 0.0, diff / np.maximum(scale, floor))


def numeric_grad(f: Callable[[], Value], x: Value, step: float = 1e-3) -> np.ndarray:
    out = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    g = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f().item()
        flat[k] = orig - step
        down = f().item()
        flat[k] = orig
        g[k] = (up - down) / (2.0 * step)
    return out


def check_gradients(f: Callable[[], Value], inputs: Iterable[Value], step: float = 1e-3,
                    floor: float = 1e-6) -> float:
    """Return the worst relative error between backward() and central differences.

    ``f`` must rebuild its graph from the current data of ``inputs`` on every
    call and be deterministic.
    """
    inputs = list(inputs)
    for x in inputs:
        x.grad = None
    f().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    for x, a in zip(inputs, analytic):
        n = numeric_grad(f, x, step)
        worst = max(worst, float(relative_error(a, n, floor).max(initial=0.0)))
    return worst
