"""Named parameter containers and the layers built on them."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Value, embedding, lstm_cell, matmul


class ParameterStore:
    """Mapping from a dotted parameter path to a learnable :class:`Value`.

    Iteration is always in sorted-name order so that optimizer updates,
    gradient norms and checkpoints are independent of construction order.
    """

    VERSION = 1

    def __init__(self, component: str = "model"):
        self.component = component
        self._params: dict[str, Value] = {}

    def add(self, name: str, data: np.ndarray) -> Value:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        v = Value(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self) -> list[tuple[str, Value]]:
        return [(k, self._params[k]) for k in sorted(self._params)]

    def names(self) -> list[str]:
        return sorted(self._params)

    def zero_grad(self) -> None:
        for v in self._params.values():
            v.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))
            extra = sorted(set(arrays) - set(self._params))
            raise KeyError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for k, arr in arrays.items():
            if k not in self._params:
                continue
            if arr.shape != self._params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self._params[k].shape}")
            self._params[k].data[...] = arr

    def merged(self, other: "ParameterStore", component: str) -> "ParameterStore":
        out = ParameterStore(component)
        for src in (self, other):
            for k, v in src.items():
                if k in out._params:
                    raise KeyError(f"duplicate parameter name {k!r}")
                out._params[k] = v
        return out

    def num_scalars(self) -> int:
        return sum(v.size for v in self._params.values())


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        k = 1.0 / np.sqrt(n_in)
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.add(f"{name}.weight", _uniform(rng, k, (n_in, n_out)))
        self.bias = store.add(f"{name}.bias", _uniform(rng, k, (n_out,)))

    def __call__(self, x: Value) -> Value:
        return matmul(x, self.weight) + self.bias


class Embedding:
    def __init__(self, store: ParameterStore, name: str, count: int, dim: int,
                 rng: np.random.Generator):
        self.count, self.dim = count, dim
        self.weight = store.add(f"{name}.weight", rng.normal(0.0, 1.0, size=(count, dim)))

    def __call__(self, ids) -> Value:
        return embedding(self.weight, ids)


class LSTM:
    """Standard 4-gate LSTM (i, f, g, o) with forget-gate bias initialised to 1."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, hidden: int,
                 rng: np.random.Generator):
        k = 1.0 / np.sqrt(hidden)
        self.n_in, self.hidden = n_in, hidden
        self.w_x = store.add(f"{name}.w_x", _uniform(rng, k, (n_in, 4 * hidden)))
        self.w_h = store.add(f"{name}.w_h", _uniform(rng, k, (hidden, 4 * hidden)))
        bias = _uniform(rng, k, (4 * hidden,))
        bias[hidden:2 * hidden] = 1.0
        self.bias = store.add(f"{name}.bias", bias)

    def zero_state(self, batch: int) -> tuple[Value, Value]:
        z = np.zeros((batch, self.hidden))
        return Value(z), Value(z.copy())

    def step(self, x: Value, h: Value, c: Value) -> tuple[Value, Value]:
        return lstm_cell(x, h, c, self.w_x, self.w_h, self.bias)
