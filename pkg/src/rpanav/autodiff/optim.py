"""Adam with L2 weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import ParameterStore


def global_norm(store: ParameterStore) -> float:
    total = 0.0
    for _, v in store.items():
        if v.grad is not None:
            total += float(np.sum(v.grad * v.grad))
    return float(np.sqrt(total))


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_norm(store)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, v in store.items():
            if v.grad is not None:
                v.grad *= factor
    return norm


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> "AdamState":
        st = cls(**hyper)
        for name, p in store.items():
            st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        return st


def adam_step(store: ParameterStore, state: AdamState) -> None:
    """Apply one bias-corrected Adam update to every parameter in ``store``.

    Parameters without a gradient are treated as having a zero gradient, so
    weight decay still applies to them.
    """
    if set(state.m) != set(store.names()):
        raise KeyError("adam_step: optimizer state does not match the parameter store")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"adam_step: moment shape {m.shape} != parameter shape {p.shape} for {name}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
