"""The Wolbachia growth map, its slope, fixed points and Allee threshold."""

import warnings
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import DegenerateThresholdWarning, DomainError

# Inputs this far outside [0, 1] are treated as caller bugs, not rounding.
DOMAIN_TOLERANCE = 1e-12


class GrowthParams(BaseModel):
    """Fitness cost ``s_f`` and CI intensity ``s_h`` of the growth map."""

    model_config = ConfigDict(frozen=True)

    s_f: float
    s_h: float

    @model_validator(mode="after")
    def _check_invariants(self) -> "GrowthParams":
        if not 0.0 < self.s_f < self.s_h < 1.0:
            raise ValueError(
                f"GrowthParams requires 0 < s_f < s_h < 1, got s_f={self.s_f}, s_h={self.s_h}"
            )
        # The quadratic is convex, so its minimum on [0, 1] is at the clamped vertex.
        vertex = min(1.0, (self.s_h + self.s_f) / (2.0 * self.s_h))
        if _denominator(self, vertex) <= 0.0:
            raise ValueError("GrowthParams denominator vanishes on [0, 1]")
        return self

    @property
    def allee_threshold(self) -> float:
        return self.s_f / self.s_h


def _denominator(params: GrowthParams, v):
    return params.s_h * v * v - (params.s_h + params.s_f) * v + 1.0


def _check_domain(v: ArrayLike) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if np.any(arr < -DOMAIN_TOLERANCE) or np.any(arr > 1.0 + DOMAIN_TOLERANCE):
        raise DomainError(f"infection frequency outside [0, 1]: min={arr.min()}, max={arr.max()}")
    return np.clip(arr, 0.0, 1.0)


def evaluate(params: GrowthParams, v: ArrayLike):
    """
    Apply the growth map to a frequency or an array of frequencies.

    Args:
        params: Growth parameters
        v: Infection frequency (scalar or array) in [0, 1]

    Returns:
        f(v) with the same shape as ``v``; a float for scalar input
    """
    arr = _check_domain(v)
    out = (1.0 - params.s_f) * arr / _denominator(params, arr)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def derivative(params: GrowthParams, v: ArrayLike):
    """
    Exact slope of the growth map.

    The quotient rule collapses to (1 - s_f)(1 - s_h v^2) / D(v)^2, which gives
    1 - s_f at 0, (1 - s_h)/(1 - s_f) at 1 and (s_h - s_f^2)/(s_h - s_h s_f) at
    the threshold.
    """
    arr = _check_domain(v)
    den = _denominator(params, arr)
    out = (1.0 - params.s_f) * (1.0 - params.s_h * arr * arr) / (den * den)
    return float(out) if out.ndim == 0 else out


def fixed_points(params: GrowthParams) -> Tuple[float, float, float]:
    """Return the extinction, threshold and fixation points in ascending order."""
    threshold = params.allee_threshold
    if threshold > 1.0 - 1e-3:
        warnings.warn(
            f"Allee threshold {threshold:.6f} is nearly 1; the interior fixed point is degenerate",
            DegenerateThresholdWarning,
            stacklevel=2,
        )
    return (0.0, threshold, 1.0)


def from_allee(s_h: float, allee: float) -> GrowthParams:
    """Build parameters from the CI intensity and the Allee threshold A = s_f/s_h."""
    if not 0.0 < allee < 1.0:
        raise DomainError(f"Allee threshold must lie in (0, 1), got {allee}")
    return GrowthParams(s_f=allee * s_h, s_h=s_h)
