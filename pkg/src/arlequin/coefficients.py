"""Periodic symmetric matrix coefficient fields and the test-coefficient zoo.

Every evaluator reduces its argument to the unit cell first, so periodicity
holds bitwise, and returns one symmetric 2x2 matrix per sample point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UnknownCoefficient


@dataclass(frozen=True)
class CoefficientField:
    """Unit-cell periodic coefficient y -> k_per(y), with ellipticity bounds.

    ``bounds = (c1, c2)`` are the declared coercivity/boundedness constants;
    ``smooth`` records whether the field meets the regularity the convergence
    analysis assumes (discontinuous zoo members are admitted but flagged
    'outside-theory' in reports).
    """

    name: str
    params: dict
    bounds: tuple[float, float]
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    smooth: bool = True

    def eval_matrix(self, points) -> np.ndarray:
        """k_per at each point, shape (n, 2, 2); accepts a single point too."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        y = pts - np.floor(pts)  # reduce to the unit cell
        out = self.evaluator(y)
        return out


def sample_k_eps(field: CoefficientField, eps: float, points) -> np.ndarray:
    """Sample the rescaled coefficient k_per(x / eps) at the given points."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return field.eval_matrix(pts / eps)


def _iso(vals: np.ndarray) -> np.ndarray:
    out = np.zeros(vals.shape + (2, 2))
    out[:, 0, 0] = vals
    out[:, 1, 1] = vals
    return out


def _constant(c: float = 1.0) -> CoefficientField:
    c = float(c)
    if c <= 0:
        raise UnknownCoefficient(f"constant coefficient must be positive, got {c}")

    def ev(y):
        return _iso(np.full(y.shape[0], c))

    return CoefficientField("constant", {"c": c}, (c, c), ev)


def _laminate(a: float = 1.0, b: float = 4.0, direction: int = 1) -> CoefficientField:
    a, b = float(a), float(b)
    if min(a, b) <= 0:
        raise UnknownCoefficient("laminate values must be positive")
    if direction not in (1, 2):
        raise UnknownCoefficient(f"laminate direction must be 1 or 2, got {direction}")
    ax = direction - 1

    def ev(y):
        # layers [0, 1/2) -> a and [1/2, 1) -> b along the lamination axis
        return _iso(np.where(y[:, ax] < 0.5, a, b))

    return CoefficientField(
        "laminate", {"a": a, "b": b, "direction": direction},
        (min(a, b), max(a, b)), ev, smooth=False,
    )


def _checkerboard(a: float = 1.0, b: float = 4.0) -> CoefficientField:
    a, b = float(a), float(b)
    if min(a, b) <= 0:
        raise UnknownCoefficient("checkerboard values must be positive")

    def ev(y):
        # 2x2 cells per period; the (0,0)-(1/2,1/2) cell and its diagonal carry a
        parity = (np.floor(2.0 * y[:, 0]) + np.floor(2.0 * y[:, 1])) % 2
        return _iso(np.where(parity == 0, a, b))

    return CoefficientField(
        "checkerboard", {"a": a, "b": b}, (min(a, b), max(a, b)), ev, smooth=False,
    )


def _smooth_trig(base: float = 2.0, amp: float = 1.0) -> CoefficientField:
    base, amp = float(base), float(amp)
    if base - abs(amp) <= 0:
        raise UnknownCoefficient("smooth_trig needs base > |amp| for coercivity")

    def ev(y):
        return _iso(base + amp * np.sin(2.0 * np.pi * y[:, 0]) * np.sin(2.0 * np.pi * y[:, 1]))

    return CoefficientField(
        "smooth_trig", {"base": base, "amp": amp},
        (base - abs(amp), base + abs(amp)), ev,
    )


def _anisotropic_laminate(
    a1: float = 1.0, a2: float = 4.0, b1: float = 2.0, b2: float = 3.0
) -> CoefficientField:
    """diag(alpha(y1), beta(y1)) with alpha alternating a1/a2 and beta b1/b2."""
    a1, a2, b1, b2 = (float(v) for v in (a1, a2, b1, b2))
    vals = (a1, a2, b1, b2)
    if min(vals) <= 0:
        raise UnknownCoefficient("anisotropic laminate values must be positive")

    def ev(y):
        first = y[:, 0] < 0.5
        out = np.zeros((y.shape[0], 2, 2))
        out[:, 0, 0] = np.where(first, a1, a2)
        out[:, 1, 1] = np.where(first, b1, b2)
        return out

    return CoefficientField(
        "anisotropic_laminate", {"a1": a1, "a2": a2, "b1": b1, "b2": b2},
        (min(vals), max(vals)), ev, smooth=False,
    )


_ZOO = {
    "constant": _constant,
    "laminate": _laminate,
    "checkerboard": _checkerboard,
    "smooth_trig": _smooth_trig,
    "anisotropic_laminate": _anisotropic_laminate,
}


def coefficient_zoo(name: str, **params) -> CoefficientField:
    """Build a named coefficient field with its declared ellipticity bounds."""
    try:
        factory = _ZOO[name]
    except KeyError:
        raise UnknownCoefficient(
            f"unknown coefficient {name!r}; available: {sorted(_ZOO)}"
        ) from None
    return factory(**params)
