"""
Spectral stability of spatially homogeneous fixed points.

A fixed point v* is locally asymptotically stable when
sup_k |f'(v*)| |(1 - delta) + delta K_hat(k)| < 1 and unstable when it
exceeds 1. The supremum runs over the DFT modes of the configured grid.
"""

import logging
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize_scalar

from . import growth
from .errors import DomainError
from .growth import GrowthParams
from .kernels import DiscreteKernel, transform_numeric
from .lattice import DispersalSetting, LatticeField, step

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 1e-9


class Verdict(str, Enum):
    LAS = "LAS"
    UNS = "UNS"
    INCONCLUSIVE = "inconclusive"


class PerturbationOutcome(str, Enum):
    DECAYS = "decays"
    GROWS = "grows"
    INCONCLUSIVE = "inconclusive"


class StabilityReport(BaseModel):
    """Outcome of the spectral test at one fixed point."""

    model_config = ConfigDict(frozen=True)

    fixed_point: float
    slope: float
    spectral_factor: float
    criterion_value: float
    verdict: Verdict
    margin: float
    grid_sizes: Tuple[int, ...]


def spectral_factor(kernel: DiscreteKernel, delta: float, grid_sizes: Sequence[int]) -> float:
    """Largest modulus of (1 - delta) + delta K_hat(k) over all grid modes."""
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    spectrum = transform_numeric(kernel, grid_sizes)
    return float(np.max(np.abs((1.0 - delta) + delta * spectrum)))


def _verdict(value: float, margin: float) -> Verdict:
    if value < 1.0 - margin:
        return Verdict.LAS
    if value > 1.0 + margin:
        return Verdict.UNS
    return Verdict.INCONCLUSIVE


def _check_fixed_point(v_star: float, params: GrowthParams) -> None:
    if not any(abs(v_star - p) <= 1e-12 for p in growth.fixed_points(params)):
        raise DomainError(f"{v_star} is not a fixed point of the growth map {params}")


def classify(
    v_star: float,
    params: GrowthParams,
    kernel: DiscreteKernel,
    delta: float,
    grid_sizes: Sequence[int],
    margin: float = DEFAULT_MARGIN,
) -> StabilityReport:
    """Apply the spectral criterion at one of the three fixed points."""
    _check_fixed_point(v_star, params)
    slope = growth.derivative(params, v_star)
    factor = spectral_factor(kernel, delta, grid_sizes)
    value = abs(slope) * factor
    report = StabilityReport(
        fixed_point=v_star,
        slope=slope,
        spectral_factor=factor,
        criterion_value=value,
        verdict=_verdict(value, margin),
        margin=margin,
        grid_sizes=tuple(int(s) for s in grid_sizes),
    )
    logger.debug("v*=%.6f slope=%.6f factor=%.6f -> %s", v_star, slope, factor, report.verdict.value)
    return report


def classify_all(
    params: GrowthParams,
    kernel: DiscreteKernel,
    delta: float,
    grid_sizes: Sequence[int],
    margin: float = DEFAULT_MARGIN,
) -> List[StabilityReport]:
    """Reports for 0, the Allee threshold and 1, in that order."""
    return [classify(v, params, kernel, delta, grid_sizes, margin) for v in growth.fixed_points(params)]


def verify_by_perturbation(
    v_star: float,
    params: GrowthParams,
    kernel: DiscreteKernel,
    delta: float,
    grid_sizes: Sequence[int],
    epsilon: float = 1e-4,
    generations: int = 200,
    seed: int = 0,
) -> PerturbationOutcome:
    """
    Simulate a small perturbation of a fixed point and watch its size.

    The perturbation is a homogeneous offset plus zero-mean noise, scaled so
    its largest entry is ``epsilon``; at 0 and 1 it points into [0, 1].
    Reports DECAYS once the largest deviation has shrunk tenfold, GROWS once
    it has grown tenfold, INCONCLUSIVE otherwise.
    """
    _check_fixed_point(v_star, params)
    if not 0.0 <= epsilon <= 1e-3:
        raise DomainError(f"epsilon must lie in [0, 1e-3], got {epsilon}")
    if epsilon == 0.0:
        return PerturbationOutcome.INCONCLUSIVE

    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=tuple(grid_sizes))
    noise -= noise.mean()
    shape = 1.0 + 0.5 * noise / np.max(np.abs(noise))
    shape /= np.max(shape)
    direction = -1.0 if v_star >= 1.0 - 1e-12 else 1.0
    start = np.clip(v_star + direction * epsilon * shape, 0.0, 1.0)

    dispersal = DispersalSetting(delta=delta)
    field = LatticeField(values=start)
    initial = float(np.max(np.abs(start - v_star)))
    for _ in range(generations):
        field = step(field, params, dispersal, kernel)
        deviation = float(np.max(np.abs(field.values - v_star)))
        if deviation <= initial / 10.0:
            return PerturbationOutcome.DECAYS
        if deviation >= initial * 10.0:
            return PerturbationOutcome.GROWS
    return PerturbationOutcome.INCONCLUSIVE


def phase_portrait(params: GrowthParams, delta: float, resolution: int = 101) -> pd.DataFrame:
    """
    Homogeneous phase-space data (V, dV) with dV = f(V) - V.

    Normalized dispersal leaves homogeneous states untouched, so ``delta``
    only enters as metadata. The three fixed points are inserted exactly and
    flagged; ``direction`` is the sign of the vector field.
    """
    if resolution < 10:
        raise DomainError(f"phase portrait resolution must be >= 10, got {resolution}")
    points = growth.fixed_points(params)
    grid = np.union1d(np.linspace(0.0, 1.0, resolution), points)
    delta_v = np.asarray(growth.evaluate(params, grid)) - grid
    exact = {0.0: 0.0, points[1]: 0.0, 1.0: 0.0}
    delta_v = np.array([exact.get(v, dv) for v, dv in zip(grid, delta_v)])
    labels = np.full(grid.shape, "", dtype=object)
    labels[grid == points[0]] = "stable"
    labels[grid == points[1]] = "allee_threshold"
    labels[grid == points[2]] = "stable"
    return pd.DataFrame(
        {
            "V": grid,
            "dV": delta_v,
            "direction": np.sign(delta_v).astype(int),
            "fixed_point": labels,
            "delta": delta,
        }
    )


def site_bistability_delta(params: GrowthParams, resolution: int = 2001) -> float:
    """
    Smallest dispersing fraction for which a site's own update cannot hold a front.

    For fixed input I from the neighbours a site follows
    v -> (1 - delta) f(v) + delta I. While (1 - delta) max f' > 1 that map
    has two stable states for a band of I, and a front on the lattice can
    stall against a site that never leaves the lower one. Returns
    1 - 1 / max f' over [0, 1], or 0 when f' never exceeds 1.
    """
    grid = np.linspace(0.0, 1.0, resolution)
    slopes = np.asarray(growth.derivative(params, grid))
    i = int(np.argmax(slopes))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, resolution - 1)]
    refined = minimize_scalar(lambda v: -growth.derivative(params, v), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
    peak = max(float(slopes[i]), -float(refined.fun))
    return max(0.0, 1.0 - 1.0 / peak)
