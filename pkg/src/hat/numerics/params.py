from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import DTYPE, Tensor

MAGIC = b"HATCKPT1\n"


class ParamStore:
    """Named float64 parameters grouped by the prefix before the first dot.

    Each parameter is a leaf :class:`Tensor` whose ``grad`` is a preallocated
    accumulator of the same shape.
    """

    def __init__(self, seed: int | None = None):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.seed = seed
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE, copy=True), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name in self._params:
            out.setdefault(self.group_of(name), []).append(name)
        return out

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in self._params.values())))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self._params[k].data[...] = v

    def copy(self) -> "ParamStore":
        other = ParamStore(self.seed)
        other.step = self.step
        for k, t in self._params.items():
            other.add(k, t.data)
        return other

    def equal(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(t.data, other[k].data) for k, t in self)


def save_checkpoint(store: ParamStore, path, extra: dict | None = None) -> None:
    """Write ``HATCKPT1`` magic, one JSON header line, then row-major float64 blobs."""
    entries = []
    offset = 0
    for name, t in store:
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.data.size
    header = {"version": 1, "seed": store.seed, "step": store.step, "dtype": "<f8", "params": entries}
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in store:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a HATCKPT1 checkpoint")
    nl = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC) : nl].decode("utf-8"))
    blob = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    store = ParamStore(header.get("seed"))
    store.step = int(header.get("step", 0))
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        store.add(e["name"], blob[e["offset"] : e["offset"] + n].reshape(e["shape"]))
    return store, header.get("extra", {})
