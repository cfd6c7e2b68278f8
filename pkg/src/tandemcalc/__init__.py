"""Exact min-plus curve algebra with deterministic and statistical
end-to-end bounds for flows crossing a tandem of servers, plus a seeded
trace simulator that stress-tests the bounds empirically."""

from .curves import (
    INF,
    Curve,
    CurveComplexityError,
    CurveError,
    Quantity,
    ZERO,
    add_pointwise,
    as_quantity,
    conv,
    deconv,
    eq_on,
    impulse,
    is_subadditive,
    le_on,
    max_pointwise,
    min_pointwise,
)

__all__ = [
    "INF",
    "Curve",
    "CurveComplexityError",
    "CurveError",
    "Quantity",
    "ZERO",
    "add_pointwise",
    "as_quantity",
    "conv",
    "deconv",
    "eq_on",
    "impulse",
    "is_subadditive",
    "le_on",
    "max_pointwise",
    "min_pointwise",
]
