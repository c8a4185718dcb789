"""
Release-cost minimization by two criteria.

ACM bisects on the release amplitude for the smallest release whose
trajectory invades by the horizon. MCM scans the amplitude upward for the
first release whose spatial outbreak-size curve turns bimodal, then refines
the switch by bisection.
"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import BracketError, NotFoundError, WLDEError
from .growth import GrowthParams
from .kernels import Boundary, DiscreteKernel, KernelSpec, discretize
from .lattice import (
    DispersalSetting,
    LatticeConfig,
    LatticeField,
    ProfileShape,
    ReleaseProfile,
    Trajectory,
    cost,
    simulate,
)
from .outbreak import DEFAULT_EPSILON_FIX, OutbreakMethod, outbreak_curve
from .pool import run_parallel

logger = logging.getLogger(__name__)


class Criterion(str, Enum):
    ACM = "ACM"
    MCM = "MCM"


class InvasionPredicate(str, Enum):
    MEAN = "mean"
    MIN_INTERIOR = "min_interior"
    CENTER = "center"


class OptimizeConfig(BaseModel):
    """Everything one cost-minimization run needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kernel: KernelSpec
    truncation_radius: Optional[int] = None
    params: GrowthParams
    delta: float = 0.2
    shape: ProfileShape = ProfileShape.PULSE
    half_widths: List[float] = Field(default_factory=lambda: [0.5])
    a_lo: float = 0.05
    a_hi: float = 1.0
    beta: float = 0.9
    extent: int = 400
    spacing: float = 1.0
    generations: int = 200
    ks: List[int] = Field(default_factory=lambda: [1])
    tolerance: float = 1e-3
    step: float = 5e-3
    predicate: InvasionPredicate = InvasionPredicate.MEAN
    outbreak_method: OutbreakMethod = OutbreakMethod.POISSON
    outbreak_horizon: Optional[int] = None
    epsilon_fix: float = DEFAULT_EPSILON_FIX
    prominence: float = 0.05
    min_separation: int = 3

    @model_validator(mode="after")
    def _check_invariants(self) -> "OptimizeConfig":
        if not 0.0 < self.a_lo < self.a_hi <= 1.0:
            raise ValueError(f"amplitude interval must satisfy 0 < a_lo < a_hi <= 1, got [{self.a_lo}, {self.a_hi}]")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.half_widths or any(w <= 0 for w in self.half_widths):
            raise ValueError("half_widths must be a nonempty list of positive lengths")
        if not self.tolerance > 0 or not self.step > 0:
            raise ValueError("tolerance and step must be positive")
        if not self.ks or any(k < 0 for k in self.ks):
            raise ValueError("ks must be a nonempty list of nonnegative outbreak sizes")
        return self

    @property
    def horizon(self) -> int:
        return self.outbreak_horizon if self.outbreak_horizon is not None else self.generations

    def lattice(self) -> LatticeConfig:
        return LatticeConfig(dimension=1, extent=(self.extent,), spacing=self.spacing, boundary=Boundary.PERIODIC)

    def discrete_kernel(self) -> DiscreteKernel:
        return discretize(self.kernel, 1, truncation_radius=self.truncation_radius, grid_size=self.extent)

    def profile(self, amplitude: float, half_width: float) -> ReleaseProfile:
        return ReleaseProfile(shape=self.shape, amplitude=amplitude, half_width=half_width)


class OptimumResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    criterion: Criterion
    amplitude: float
    half_width: float
    cost: float
    shape: ProfileShape
    kernel: str
    k: Optional[int] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


def invasion_success(
    trajectory: Trajectory | LatticeField,
    beta: float,
    predicate: InvasionPredicate | str = InvasionPredicate.MEAN,
    config: LatticeConfig | None = None,
) -> bool:
    """
    Finite-horizon stand-in for v(t, x) -> 1.

    ``mean`` compares the spatial mean of the final field with beta,
    ``min_interior`` the minimum over sites away from the outer tenth of each
    axis, and ``center`` the value at the origin site.
    """
    predicate = InvasionPredicate(predicate)
    if isinstance(trajectory, Trajectory):
        final = trajectory.final.values
        config = trajectory.config
    else:
        final = trajectory.values
    if predicate is InvasionPredicate.MEAN:
        return bool(final.mean() >= beta)
    if predicate is InvasionPredicate.MIN_INTERIOR:
        interior = tuple(slice(n // 10, n - n // 10) for n in final.shape)
        return bool(final[interior].min() >= beta)
    center = config.center if config is not None else tuple(n // 2 for n in final.shape)
    return bool(final[center] >= beta)


class _Runner:
    """Simulations for one config, with the kernel discretized once."""

    def __init__(self, config: OptimizeConfig):
        self.config = config
        self.lattice = config.lattice()
        self.kernel = config.discrete_kernel()
        self.dispersal = DispersalSetting(delta=config.delta)

    def run(self, amplitude: float, half_width: float, generations: int, stride: int = 1) -> Trajectory:
        return simulate(
            self.lattice,
            self.config.profile(amplitude, half_width),
            self.config.params,
            self.dispersal,
            self.kernel,
            generations,
            stride=stride,
        )

    def invades(self, amplitude: float, half_width: float) -> bool:
        generations = self.config.generations
        trajectory = self.run(amplitude, half_width, generations, stride=max(1, generations))
        return invasion_success(trajectory, self.config.beta, self.config.predicate)

    def mode_counts(self, amplitude: float, half_width: float) -> Dict[int, int]:
        trajectory = self.run(amplitude, half_width, self.config.horizon)
        counts = {}
        for k in self.config.ks:
            curve = outbreak_curve(
                trajectory,
                k,
                method=self.config.outbreak_method,
                horizon=self.config.horizon,
                epsilon_fix=self.config.epsilon_fix,
                prominence=self.config.prominence,
                min_separation=self.config.min_separation,
            )
            counts[k] = curve.modality.count
        return counts


def _bisect(predicate: Callable[[float], bool], lo: float, hi: float, tolerance: float, label: str) -> Tuple[float, int]:
    """Shrink [lo, hi] with predicate(lo) False and predicate(hi) True; return (hi, iterations)."""
    iterations = 0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
        iterations += 1
        logger.debug("%s: bisection step %d -> [%.6f, %.6f]", label, iterations, lo, hi)
    return hi, iterations


def _acm_fixed_width(runner: _Runner, half_width: float) -> Dict[str, Any]:
    config = runner.config
    label = f"ACM L={half_width:g}"

    def success(a: float) -> bool:
        return runner.invades(a, half_width)

    if success(config.a_lo):
        raise BracketError(f"{label}: release already invades at a_lo={config.a_lo}")
    if not success(config.a_hi):
        raise BracketError(f"{label}: release does not invade at a_hi={config.a_hi}")
    a_star, iterations = _bisect(success, config.a_lo, config.a_hi, config.tolerance, label)
    lower = max(config.a_lo, a_star - config.tolerance)
    flips = success(a_star) and not success(lower)
    if not flips:
        logger.warning(
            "%s: invasion does not switch between a=%.4f and a*=%.4f; the outcome is not monotone in a",
            label, lower, a_star,
        )
    logger.info("%s: a*=%.4f after %d bisection steps", label, a_star, iterations)
    return {"amplitude": a_star, "iterations": iterations, "verified_flip": flips}


def acm_optimize(config: OptimizeConfig, runner: Optional[_Runner] = None) -> OptimumResult:
    """
    Cheapest release that invades, by bisection on the amplitude.

    Each half-width in ``config.half_widths`` gets its own bisection; the
    cheapest successful (a*, L*) is returned. ``diagnostics["verified_flip"]``
    is False when the predicate still holds one tolerance below a*.
    """
    runner = runner or _Runner(config)
    best: Optional[OptimumResult] = None
    failures: Dict[str, str] = {}
    for half_width in config.half_widths:
        try:
            found = _acm_fixed_width(runner, half_width)
        except BracketError as exc:
            failures[f"{half_width:g}"] = str(exc)
            continue
        candidate = OptimumResult(
            criterion=Criterion.ACM,
            amplitude=found["amplitude"],
            half_width=half_width,
            cost=cost(config.profile(found["amplitude"], half_width)),
            shape=config.shape,
            kernel=config.kernel.label,
            diagnostics={
                "iterations": found["iterations"],
                "verified_flip": found["verified_flip"],
                "predicate": config.predicate.value,
                "beta": config.beta,
                "half_width_grid": list(config.half_widths),
                "bracket_failures": failures,
            },
        )
        if best is None or candidate.cost < best.cost:
            best = candidate
    if best is None:
        raise BracketError(f"no half-width brackets the invasion boundary: {failures}")
    return best


def _mcm_fixed_width(runner: _Runner, half_width: float, k: int, cache: Dict[float, Dict[int, int]]) -> Dict[str, Any]:
    config = runner.config
    label = f"MCM L={half_width:g} k={k}"

    def modes(a: float) -> int:
        key = round(a, 12)
        if key not in cache:
            cache[key] = runner.mode_counts(a, half_width)
        return cache[key][k]

    trace: List[Tuple[float, int]] = []
    previous: Optional[float] = None
    n_steps = int(np.floor((config.a_hi - config.a_lo) / config.step + 1e-9))
    for i in range(n_steps + 1):
        a = config.a_lo + i * config.step
        count = modes(a)
        trace.append((a, count))
        if count == 2:
            break
        previous = a
    else:
        raise NotFoundError(f"{label}: no bimodal regime in [{config.a_lo}, {config.a_hi}]")

    first_bimodal = trace[-1][0]
    if previous is None:
        a_star, iterations = first_bimodal, 0
    else:
        a_star, iterations = _bisect(lambda a: modes(a) == 2, previous, first_bimodal, config.tolerance, label)
    logger.info("%s: a*=%.4f (scan %d points, %d refinements)", label, a_star, len(trace), iterations)
    return {"amplitude": a_star, "iterations": iterations, "trace": trace}


def _mcm_by_k(config: OptimizeConfig, runner: _Runner) -> Dict[int, OptimumResult | NotFoundError]:
    """MCM optimum or the reason there is none, per k; one simulation per distinct (a, L)."""
    caches: Dict[float, Dict[float, Dict[int, int]]] = {w: {} for w in config.half_widths}
    outcomes: Dict[int, OptimumResult | NotFoundError] = {}
    for k in config.ks:
        best: Optional[OptimumResult] = None
        missing: Dict[str, str] = {}
        for half_width in config.half_widths:
            try:
                found = _mcm_fixed_width(runner, half_width, k, caches[half_width])
            except NotFoundError as exc:
                missing[f"{half_width:g}"] = str(exc)
                continue
            candidate = OptimumResult(
                criterion=Criterion.MCM,
                amplitude=found["amplitude"],
                half_width=half_width,
                cost=cost(config.profile(found["amplitude"], half_width)),
                shape=config.shape,
                kernel=config.kernel.label,
                k=k,
                diagnostics={
                    "iterations": found["iterations"],
                    "trace": [[a, c] for a, c in found["trace"]],
                    "method": config.outbreak_method.value,
                    "horizon": config.horizon,
                    "not_found": missing,
                },
            )
            if best is None or candidate.cost < best.cost:
                best = candidate
        outcomes[k] = best if best is not None else NotFoundError(
            f"k={k}: no bimodal regime for any half-width: {missing}"
        )
    return outcomes


def mcm_optimize(config: OptimizeConfig, runner: Optional[_Runner] = None) -> List[OptimumResult]:
    """
    First switch to a bimodal outbreak curve, one result per k in ``config.ks``.

    Simulations are shared between outbreak sizes.
    """
    results: List[OptimumResult] = []
    for outcome in _mcm_by_k(config, runner or _Runner(config)).values():
        if isinstance(outcome, NotFoundError):
            raise outcome
        results.append(outcome)
    return results


PROFILE_COLUMNS = ["profile", "k", "a_star", "half_width", "cost", "error"]


def critical_amplitude_by_profile(
    shapes: Sequence[ProfileShape | str],
    config: OptimizeConfig,
    threads: int = 1,
) -> pd.DataFrame:
    """
    MCM a* for each release shape under one shared config, sorted by a*.

    A shape without a bimodal regime keeps its rows with a* = NaN and the
    reason in ``error``.
    """
    def job(shape: ProfileShape) -> List[Dict[str, Any]]:
        shaped = config.model_copy(update={"shape": shape})
        rows = []
        for k, outcome in _mcm_by_k(shaped, _Runner(shaped)).items():
            if isinstance(outcome, NotFoundError):
                logger.warning("profile %s: %s", shape.value, outcome)
                rows.append({"profile": shape.value, "k": k, "a_star": np.nan, "half_width": np.nan,
                             "cost": np.nan, "error": str(outcome)})
            else:
                rows.append({"profile": shape.value, "k": k, "a_star": outcome.amplitude,
                             "half_width": outcome.half_width, "cost": outcome.cost, "error": ""})
        return rows

    jobs = [(lambda s=ProfileShape(shape): job(s)) for shape in shapes]
    rows = [row for batch in run_parallel(jobs, threads) for row in batch]
    frame = pd.DataFrame(rows, columns=PROFILE_COLUMNS)
    return frame.sort_values(["k", "a_star"], kind="stable").reset_index(drop=True)


COMPARE_COLUMNS = ["kernel", "profile", "k", "mcm_a", "acm_a", "mcm_cost", "acm_cost", "error"]


def _compare_cell(config: OptimizeConfig, criteria: Sequence[Criterion]) -> List[Dict[str, Any]]:
    rows = {k: {"kernel": config.kernel.family.value, "profile": config.shape.value, "k": k,
                "mcm_a": np.nan, "acm_a": np.nan, "mcm_cost": np.nan, "acm_cost": np.nan, "error": ""}
            for k in config.ks}
    runner = _Runner(config)
    errors: List[str] = []
    if Criterion.ACM in criteria:
        try:
            acm = acm_optimize(config, runner)
            for row in rows.values():
                row.update(acm_a=acm.amplitude, acm_cost=acm.cost)
            if not acm.diagnostics["verified_flip"]:
                errors.append(f"ACM: switch at a*={acm.amplitude:.4f} not verified")
        except WLDEError as exc:
            errors.append(f"ACM: {exc}")
    if Criterion.MCM in criteria:
        for k, outcome in _mcm_by_k(config, runner).items():
            if isinstance(outcome, NotFoundError):
                rows[k]["error"] = f"MCM: {outcome}"
            else:
                rows[k].update(mcm_a=outcome.amplitude, mcm_cost=outcome.cost)
    for row in rows.values():
        row["error"] = "; ".join(filter(None, errors + [row["error"]]))
    return list(rows.values())


def compare_table(
    kernels: Sequence[KernelSpec],
    shapes: Sequence[ProfileShape | str],
    ks: Sequence[int],
    base: OptimizeConfig,
    criteria: Sequence[Criterion | str] = (Criterion.MCM, Criterion.ACM),
    threads: int = 1,
) -> pd.DataFrame:
    """
    MCM and ACM thresholds and costs across kernels, profiles and outbreak sizes.

    One job per (kernel, profile); a failing criterion is recorded in the
    ``error`` column and the table still completes.
    """
    criteria = [Criterion(c) for c in criteria]
    if not kernels or not shapes or not ks:
        return pd.DataFrame(columns=COMPARE_COLUMNS)
    configs = [
        base.model_copy(update={"kernel": spec, "shape": ProfileShape(shape), "ks": list(ks)})
        for spec in kernels
        for shape in shapes
    ]
    logger.info("comparison table: %d kernel/profile cells, k in %s", len(configs), list(ks))
    jobs = [(lambda c=c: _compare_cell(c, criteria)) for c in configs]
    rows = [row for batch in run_parallel(jobs, threads) for row in batch]
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)


def format_table(table: pd.DataFrame) -> str:
    """Plain-text rendering with one block per kernel and profile; ACM values shown once per block."""
    if table.empty:
        return "(empty table)"
    header = f"{'Kernel':<10} {'Profile':<11} {'k':>3} {'MCM a*':>8} {'ACM a*':>8} {'MCM cost':>9} {'ACM cost':>9}"
    lines = [header, "-" * len(header)]

    def fmt(value: float) -> str:
        return "   -" if pd.isna(value) else f"{value:.3f}"

    previous: Tuple[str, str] = ("", "")
    for row in table.itertuples(index=False):
        block = (row.kernel, row.profile)
        first = block != previous
        if first and previous[0] and row.kernel != previous[0]:
            lines.append("=" * len(header))
        lines.append(
            f"{(row.kernel if row.kernel != previous[0] else ''):<10} "
            f"{(row.profile if first else ''):<11} {row.k:>3} {fmt(row.mcm_a):>8} "
            f"{(fmt(row.acm_a) if first else ''):>8} {fmt(row.mcm_cost):>9} {(fmt(row.acm_cost) if first else ''):>9}"
        )
        previous = block
    return "\n".join(lines)
