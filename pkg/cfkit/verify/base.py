"""Base class for operators compared against their naive references."""

from abc import ABC, abstractmethod
from typing import Any, List, Literal, Optional, Tuple

import numpy as np

Values = Literal["gaussian", "dyadic"]


def dyadic(rng: np.random.Generator, shape: Tuple[int, ...], dtype: Any, scale: int = 8, limit: int = 16) -> np.ndarray:
    """Values k / scale with |k| <= limit.

    Products and short sums of such values are exact in float32, so optimized
    and naive paths disagree only where an operator itself rounds.
    """
    return (rng.integers(-limit, limit + 1, size=shape) / scale).astype(dtype)


def draw(
    rng: np.random.Generator,
    shape: Tuple[int, ...],
    dtype: Any,
    values: Values = "gaussian",
    scale: int = 8,
    limit: int = 16,
    sd: Optional[float] = None,
) -> np.ndarray:
    """Random trial values: zero-mean normal, or dyadic when ``values == "dyadic"``.

    The normal draw has standard deviation ``sd``, by default an eighth of the
    dyadic range ``limit / scale``. Samplers keep operator outputs near unit
    scale so float32 rounding stays well inside the oracle tolerance.
    """
    if values == "dyadic":
        return dyadic(rng, shape, dtype, scale, limit)
    if sd is None:
        sd = limit / scale / 8
    return (rng.standard_normal(shape) * sd).astype(dtype)


class OracleOperator(ABC):
    """One operator with an optimized and a naive implementation.

    Subclasses register themselves with ``@register_operator``.
    """

    op: str = ""

    @abstractmethod
    def sample(self, rng: np.random.Generator, dtype: Any, values: Values = "gaussian") -> Tuple[Any, ...]:
        """Draw random arguments for one trial."""
        pass

    @abstractmethod
    def optimized(self, *args: Any) -> np.ndarray:
        pass

    @abstractmethod
    def reference(self, *args: Any) -> np.ndarray:
        pass

    def shape_of(self, args: Tuple[Any, ...]) -> List[int]:
        first = args[0]
        if isinstance(first, (list, tuple)):
            first = first[0]
        return list(np.shape(first))
