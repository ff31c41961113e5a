"""Binary checkpoint format.

Layout (little-endian)::

    magic   8 bytes  b"RPANAVCK"
    version u32
    component: u16 length + utf-8 bytes
    count   u32
    count x { u16 name length, name, u8 ndim, u32 dims..., float64 data }

Entries are written in sorted name order.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .optim import AdamState
from .store import ParameterStore

MAGIC = b"RPANAVCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], component: str) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    comp = component.encode()
    buf.write(struct.pack("<H", len(comp)))
    buf.write(comp)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    (n,) = struct.unpack_from("<H", view, pos)
    pos += 2
    component = bytes(view[pos:pos + n]).decode()
    pos += n
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + n]).decode()
        pos += n
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(view[pos:pos + 8 * size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return component, out


def save(path, store: ParameterStore) -> None:
    Path(path).write_bytes(dumps(store.snapshot(), store.component))


def load_arrays(path, component: str | None = None) -> dict[str, np.ndarray]:
    comp, arrays = loads(Path(path).read_bytes())
    if component is not None and comp != component:
        raise CheckpointError(f"checkpoint holds component {comp!r}, expected {component!r}")
    return arrays


def load_into(path, store: ParameterStore) -> None:
    store.load_arrays(load_arrays(path, store.component))


_ADAM_FIELDS = ("lr", "beta1", "beta2", "eps", "weight_decay", "step")


def save_training_state(path, store: ParameterStore, adam: AdamState, iteration: int) -> None:
    """Parameters, optimizer moments and the iteration counter in one file."""
    arrays = {f"param/{k}": v for k, v in store.snapshot().items()}
    for k in store.names():
        arrays[f"adam.m/{k}"] = adam.m[k]
        arrays[f"adam.v/{k}"] = adam.v[k]
    for f in _ADAM_FIELDS:
        arrays[f"adam/{f}"] = np.array(float(getattr(adam, f)))
    arrays["iteration"] = np.array(float(iteration))
    Path(path).write_bytes(dumps(arrays, f"train-state:{store.component}"))


def load_training_state(path, store: ParameterStore) -> tuple[AdamState, int]:
    arrays = load_arrays(path, f"train-state:{store.component}")
    store.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    adam = AdamState(**{f: float(arrays[f"adam/{f}"]) for f in _ADAM_FIELDS if f != "step"})
    adam.step = int(arrays["adam/step"])
    for k in store.names():
        adam.m[k] = arrays[f"adam.m/{k}"].copy()
        adam.v[k] = arrays[f"adam.v/{k}"].copy()
    return adam, int(arrays["iteration"])
