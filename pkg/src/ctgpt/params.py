"""Named parameter collection shared by the encoder, projector, LM and LoRA."""
from __future__ import annotations

import hashlib
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .errors import ArgumentError, FormatError
from .tensor_core import Parameter, Tensor, load_checkpoint, save_checkpoint

GROUPS = ("encoder", "projector", "lm", "lora")


class ParamStore:
    def __init__(self) -> None:
        self._params: Dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray, frozen: bool = False) -> Parameter:
        if name in self._params:
            raise ArgumentError(f"duplicate parameter {name}")
        p = Parameter(name, np.asarray(data, dtype=np.float32), frozen=frozen)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name].tensor
        except KeyError:
            raise ArgumentError(f"missing parameter {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def group(self, prefix: str) -> List[Parameter]:
        prefix = prefix.rstrip(".") + "."
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def has_group(self, prefix: str) -> bool:
        return bool(self.group(prefix))

    def set_trainable(self, prefixes: Iterable[str]) -> None:
        """Unfreeze exactly the parameters under ``prefixes``; freeze the rest."""
        roots = tuple(p.rstrip(".") for p in prefixes)
        heads = tuple(r + "." for r in roots)
        for name, p in self._params.items():
            p.frozen = not (name in roots or name.startswith(heads))

    def trainable(self) -> List[Parameter]:
        return [p for p in self._params.values() if not p.frozen]

    def digest(self, prefix: Optional[str] = None) -> str:
        h = hashlib.sha256()
        for p in (self.group(prefix) if prefix else self):
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for p in self:
            q = Parameter(p.name, p.data.astype(dtype), frozen=p.frozen)
            out._params[p.name] = q
        return out

    def copy(self) -> "ParamStore":
        return self.astype(np.float32)

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        for e in load_checkpoint(path):
            store.add(e.name, e.data, frozen=e.frozen)
        return store

    def load_values_from(self, other: "ParamStore", names: Optional[Sequence[str]] = None) -> None:
        for name in names or self.names():
            if name not in other:
                raise FormatError(f"checkpoint lacks parameter {name}")
            src = other.param(name).data
            if src.shape != self.param(name).data.shape:
                raise FormatError(f"shape mismatch for {name}: {src.shape} vs {self.param(name).data.shape}")
            self.param(name).tensor.data = src.astype(self.param(name).data.dtype, copy=True)


def normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)
