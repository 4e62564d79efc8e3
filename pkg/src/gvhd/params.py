"""Named parameter collections and their seeded initialisation."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Ordered mapping of unique path-like names to :class:`Parameter`."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(np.array(data, dtype=np.float64), name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def n_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            p = self._params[k]
            if v.shape != p.data.shape:
                raise ConfigError(f"{k}: shape {v.shape} != {p.data.shape}")
            p.data[...] = v

    def copy(self) -> "ModelParams":
        other = ModelParams()
        for k, p in self._params.items():
            q = other.add(k, p.data.copy())
            q.trainable = q.requires_grad = p.trainable
        return other

    def fill_(self, value: float) -> None:
        for p in self._params.values():
            p.data[...] = value

    # initialiser helpers -------------------------------------------------
    def dense(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self.add(f"{name}.w", glorot(rng, fan_in, fan_out, (fan_in, fan_out)))
        self.add(f"{name}.b", np.zeros(fan_out))
