"""
Named parameter store shared by every model component.
"""

import hashlib
from contextlib import contextmanager
from typing import Iterator

import numpy as np

from errors import ContractError
from tensor_core import Tensor

GROUPS = ("visual", "meta", "fusion", "head")


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Scaled-uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) projection matrix."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def normal_init(rng: np.random.Generator, shape: tuple, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class ModelParams:
    """
    Ordered mapping of parameter name -> Tensor, each tagged with a group.

    Freezing a group turns off requires_grad for its tensors, so the tape
    never computes their gradients and the optimizer never touches them.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, array: np.ndarray, group: str) -> Tensor:
        if group not in GROUPS:
            raise ContractError(f"Unknown parameter group '{group}'")
        if name in self._tensors:
            raise ContractError(f"Parameter '{name}' registered twice")
        tensor = Tensor(array, requires_grad=group not in self._frozen, name=name)
        self._tensors[name] = tensor
        self._groups[name] = group
        return tensor

    def linear(self, name: str, fan_in: int, fan_out: int, group: str,
               rng: np.random.Generator, bias: bool = True) -> tuple[Tensor, Tensor | None]:
        weight = self.add(f"{name}.weight", uniform_init(rng, fan_in, fan_out), group)
        b = self.add(f"{name}.bias", np.zeros(fan_out), group) if bias else None
        return weight, b

    def norm(self, name: str, dim: int, group: str) -> tuple[Tensor, Tensor]:
        return (self.add(f"{name}.gamma", np.ones(dim), group),
                self.add(f"{name}.beta", np.zeros(dim), group))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractError(f"Unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def group_items(self, group: str) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._tensors.items() if self._groups[n] == group]

    def set_trainable(self, group: str, trainable: bool) -> None:
        if group not in GROUPS:
            raise ContractError(f"Unknown parameter group '{group}'")
        if trainable:
            self._frozen.discard(group)
        else:
            self._frozen.add(group)
        for _, tensor in self.group_items(group):
            tensor.requires_grad = trainable
            tensor.grad = None

    def is_trainable(self, group: str) -> bool:
        return group not in self._frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._tensors.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def count(self, group: str | None = None) -> int:
        return sum(t.size for n, t in self._tensors.items() if group is None or self._groups[n] == group)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._tensors.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(arrays)
        if missing:
            raise ContractError(f"Parameter arrays missing: {', '.join(sorted(missing))}")
        for name, tensor in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ContractError(f"Parameter '{name}' expects shape {tensor.shape}, got {value.shape}")
            tensor.data = value.copy()

    @contextmanager
    def swapped(self, arrays: dict[str, np.ndarray]):
        """Temporarily evaluate with other weights (EMA shadows)."""
        saved = self.arrays()
        self.load(arrays)
        try:
            yield self
        finally:
            self.load(saved)

    def digest(self, group: str | None = None) -> str:
        h = hashlib.sha256()
        for name, tensor in self._tensors.items():
            if group is None or self._groups[name] == group:
                h.update(name.encode())
                h.update(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        return h.hexdigest()
