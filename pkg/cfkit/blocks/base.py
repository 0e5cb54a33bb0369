"""Base classes shared by every network block."""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from cfkit.exceptions import ConfigurationError
from cfkit.types import NodeCost, ParamSpec

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]
Grads = Dict[str, np.ndarray]


class ParamStore:
    """Ordered map from hierarchical parameter name to array.

    Iteration order is the order in which the graph registered its parameters.
    """

    def __init__(self, entries: Optional[Iterable[Tuple[str, np.ndarray]]] = None):
        self._data: Dict[str, np.ndarray] = {}
        for name, value in entries or ():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._data:
            raise ConfigurationError(f"duplicate parameter name '{name}'", field=name)
        self._data[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._data[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter '{name}'", field=name) from None

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        current = self[name]
        if current.shape != value.shape:
            raise ConfigurationError(f"'{name}': shape {value.shape} != {current.shape}", field=name)
        self._data[name] = value

    def __contains__(self, name: object) -> bool:
        return name in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> List[str]:
        return list(self._data)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._data.items())

    def numel(self) -> int:
        return sum(int(v.size) for v in self._data.values())

    @property
    def dtype(self) -> np.dtype:
        for v in self._data.values():
            return v.dtype
        return np.dtype(np.float32)

    def astype(self, dtype: Any) -> "ParamStore":
        return ParamStore((k, v.astype(dtype)) for k, v in self._data.items())

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self._data.items())

    @classmethod
    def initialize(cls, specs: List[ParamSpec], seed: int, dtype: Any = np.float32) -> "ParamStore":
        """Kaiming-uniform (fan-in) weights, ones/zeros for BN and biases."""
        rng = np.random.default_rng(seed)
        store = cls()
        for spec in specs:
            if spec.init == "kaiming":
                bound = np.sqrt(6.0 / spec.fan_in)
                value = rng.uniform(-bound, bound, size=spec.shape)
            elif spec.init == "ones":
                value = np.ones(spec.shape)
            else:
                value = np.zeros(spec.shape)
            store.add(spec.name, value.astype(dtype))
        return store


class Tape:
    """Activations cached by a forward pass for the matching backward pass."""

    def __init__(self) -> None:
        self._records: Dict[str, Dict[str, Any]] = {}
        self._clamps: List[np.ndarray] = []

    def save(self, name: str, **values: Any) -> None:
        self._records[name] = values

    def load(self, name: str) -> Dict[str, Any]:
        try:
            return self._records[name]
        except KeyError:
            raise ConfigurationError(f"no forward record for '{name}'; run forward with a tape first") from None

    def note_clamp(self, pre_activation: np.ndarray) -> None:
        self._clamps.append(pre_activation)

    def clamp_regions(self) -> np.ndarray:
        """Region code (0 below, 1 inside, 2 above) of every ReLU6 input seen."""
        if not self._clamps:
            return np.zeros(0, dtype=np.int8)
        flat = np.concatenate([c.ravel() for c in self._clamps])
        return (flat > 0).astype(np.int8) + (flat >= 6).astype(np.int8)


def accumulate(grads: Grads, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


class Module(ABC):
    """Anything that owns parameters and has a static cost."""

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def parameters(self) -> List[ParamSpec]:
        """Parameter specs in registration order."""
        pass

    def numel(self) -> int:
        return sum(p.numel for p in self.parameters())


class Layer(Module):
    """Single-input, single-output module with a hand-written backward pass."""

    @abstractmethod
    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        """Accumulate parameter gradients into ``grads``; return the input gradient."""
        pass

    @abstractmethod
    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        """Static per-node costs for an input of ``shape`` and the output shape."""
        pass


class Sequential(Layer):
    """Layers applied in order."""

    def __init__(self, name: str, layers: List[Layer]):
        super().__init__(name)
        self.layers = layers

    def parameters(self) -> List[ParamSpec]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, store, tape)
        return x

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad, store, tape, grads)
        return grad

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes: List[NodeCost] = []
        for layer in self.layers:
            sub, shape = layer.costs(shape, itemsize)
            nodes.extend(sub)
        return nodes, shape


def numel(shape: Shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def elementwise_node(name: str, kind: str, shape: Shape, itemsize: int, ops_per_element: int = 1) -> NodeCost:
    n = numel(shape)
    return NodeCost(
        name=name,
        kind=kind,
        minor_ops=n * ops_per_element,
        act_bytes=n * itemsize,
        output_shape=list(shape),
    )
