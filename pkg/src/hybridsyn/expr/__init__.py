"""Symbolic expressions: point, vectorised and interval evaluation."""

from .core import (
    Expr,
    ExprDomainError,
    ExprError,
    NonsmoothDifferentiation,
    ONE,
    ZERO,
    add,
    as_expr,
    bind_params,
    const,
    cos,
    diff,
    dot,
    eval_many,
    evaluate,
    exp,
    extract_params,
    free_vars,
    gradient,
    is_smooth,
    lambdify,
    maximum,
    minimum,
    param,
    param_indices,
    sat,
    sign,
    simplify,
    sin,
    size,
    sqrt,
    substitute,
    to_text,
    var,
)
from .interval import Interval, contract, ieval, ieval_arrays
from .parse import ParseError, parse, state_names
from .poly import expand

__all__ = [
    "Expr", "ExprDomainError", "ExprError", "NonsmoothDifferentiation", "ONE", "ZERO",
    "add", "as_expr", "bind_params", "const", "cos", "diff", "dot", "eval_many", "evaluate",
    "exp", "extract_params", "free_vars", "gradient", "is_smooth", "lambdify", "maximum",
    "minimum", "param", "param_indices", "sat", "sign", "simplify", "sin", "size", "sqrt",
    "substitute", "to_text", "var", "Interval", "contract", "ieval", "ieval_arrays",
    "ParseError", "parse", "state_names", "expand",
]
