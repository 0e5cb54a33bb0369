"""Operator registry mapping operator ids to oracle-checked operator classes."""

from typing import TYPE_CHECKING, Any, Dict, List, Type

if TYPE_CHECKING:
    from cfkit.verify.base import OracleOperator

# Global registry mapping operator ids to operator classes
_OPERATOR_REGISTRY: Dict[str, Type["OracleOperator"]] = {}


def register_operator(op: str):
    """Decorator to register an operator for oracle comparison.

    Usage:
        @register_operator("conv2d")
        class Conv2dOperator(OracleOperator):
            ...
    """

    def decorator(operator_class: Type["OracleOperator"]) -> Type["OracleOperator"]:
        operator_class.op = op
        _OPERATOR_REGISTRY[op] = operator_class
        return operator_class

    return decorator


def get_operator(op: str, **kwargs: Any) -> "OracleOperator":
    """Get an operator instance for the given id.

    Raises:
        UsageError: If the operator id is not registered
    """
    operator_class = _OPERATOR_REGISTRY.get(op)

    if operator_class is None:
        from cfkit.exceptions import UsageError

        known = ", ".join(sorted(_OPERATOR_REGISTRY))
        raise UsageError(f"unknown operator '{op}' (known: {known})", field="op")

    return operator_class(**kwargs)


def get_registered_operators() -> List[str]:
    """Get list of all registered operator ids, in registration order."""
    return list(_OPERATOR_REGISTRY.keys())
