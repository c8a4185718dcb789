"""
Front tracking and wave-speed estimation.

Speeds come from two estimators: the pointwise difference quotient
c(t) = -(v(x, t+1) - v(x, t)) / (v(x+1, t) - v(x, t)) at the front site,
and a least-squares line through the front positions over a tail window.
The regression estimator is the primary one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.stats import linregress

from .errors import ConvergenceError, DomainError
from .growth import GrowthParams, from_allee
from .kernels import Boundary, KernelSpec, discretize
from .lattice import (
    DispersalSetting,
    LatticeConfig,
    LatticeField,
    ProfileShape,
    ReleaseProfile,
    Trajectory,
    simulate,
)
from .pool import run_parallel
from .stability import site_bistability_delta

logger = logging.getLogger(__name__)

MIN_TAIL_POINTS = 20
# |c*| at or below this, in length units per generation, counts as a stalled front.
STALL_SPEED = 1e-3


class SpeedMethod(str, Enum):
    REGRESSION = "front-regression"
    QUOTIENT = "difference-quotient"


class SweepAxis(str, Enum):
    DELTA = "delta"
    ALLEE = "allee"
    INITIAL_AMPLITUDE = "initial_amplitude"


class WaveRegime(str, Enum):
    ADVANCING = "advancing"
    PINNED = "pinned"
    RETREATING = "retreating"
    DIED = "died"


@dataclass(frozen=True, eq=False)
class FrontTrack:
    """Front positions per stored generation, in length units; NaN where no front exists."""

    generations: np.ndarray
    positions: np.ndarray
    level: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.positions)


class SpeedEstimate(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    c_series: List[Optional[float]]
    c_star: float
    method: SpeedMethod
    window: List[int]
    residual: float
    died: bool = False
    regime: WaveRegime = WaveRegime.ADVANCING

    @property
    def failed(self) -> bool:
        """True when the release did not produce a front moving outward."""
        return self.regime is not WaveRegime.ADVANCING


def _profile_line(values: np.ndarray, config: LatticeConfig | None) -> np.ndarray:
    if values.ndim == 1:
        return values
    row = config.center[1] if config is not None else values.shape[1] // 2
    return values[:, row]


def front_position(
    field: LatticeField | np.ndarray,
    level: float = 0.5,
    config: LatticeConfig | None = None,
) -> Optional[float]:
    """
    Rightmost crossing from above ``level`` to below it, in site-index units.

    The position is linearly interpolated between the two neighbouring sites.
    In 2D the row through the origin is used.
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"front level must lie in (0, 1), got {level}")
    values = field.values if isinstance(field, LatticeField) else np.asarray(field, dtype=float)
    line = _profile_line(values, config)
    above = line[:-1] >= level
    below = line[1:] < level
    crossings = np.nonzero(above & below & (line[:-1] > line[1:]))[0]
    if crossings.size == 0:
        return None
    i = int(crossings[-1])
    return i + (line[i] - level) / (line[i] - line[i + 1])


def front_track(trajectory: Trajectory, level: float = 0.5) -> FrontTrack:
    """Front position of every stored generation, converted to length units."""
    config = trajectory.config
    positions = np.full(len(trajectory), np.nan)
    for n in range(len(trajectory)):
        index = front_position(trajectory.values[n], level, config)
        if index is not None:
            positions[n] = (index - config.center[0]) * config.spacing
    return FrontTrack(generations=trajectory.generations.copy(), positions=positions, level=level)


def local_speed(
    trajectory: Trajectory,
    site: int,
    generation: int,
    eps_grad: float = 1e-9,
) -> Optional[float]:
    """
    Difference-quotient speed at one site, in length units per generation.

    Returns 0 when the site did not change (a fixed point) and None when the
    spatial difference is too small to divide by.
    """
    trajectory.require_dense()
    line_now = _profile_line(trajectory.values[generation], trajectory.config)
    if generation + 1 >= len(trajectory) or site + 1 >= line_now.size or site < 0:
        raise DomainError(f"site {site} / generation {generation} outside the trajectory")
    line_next = _profile_line(trajectory.values[generation + 1], trajectory.config)
    d_time = line_next[site] - line_now[site]
    d_space = line_now[site + 1] - line_now[site]
    if abs(d_time) < eps_grad:
        return 0.0
    if abs(d_space) < eps_grad:
        return None
    return float(-d_time / d_space * trajectory.config.spacing)


def _usable_window(track: FrontTrack, start: int, final_line: np.ndarray, level: float) -> np.ndarray:
    """
    Indices of the regression window.

    A front that has swept the whole lattice leaves no crossing at the end of
    the run; the window then moves back to the last generations that had one.
    """
    n = track.positions.size
    tail = np.arange(start, n)
    tail = tail[track.valid[tail]]
    if tail.size >= MIN_TAIL_POINTS or final_line.min() < level:
        return tail
    valid = np.nonzero(track.valid)[0]
    width = max(n - start, MIN_TAIL_POINTS)
    logger.info("front left the lattice; using the last %d generations with a front", min(width, valid.size))
    return valid[-width:]


def asymptotic_speed(
    trajectory: Trajectory,
    level: float = 0.5,
    tail_fraction: float = 0.25,
    method: SpeedMethod | str = SpeedMethod.REGRESSION,
    stall_speed: float = STALL_SPEED,
) -> SpeedEstimate:
    """
    Estimate c* from the tail of a trajectory.

    A wave that has vanished by the final generation is a result, not an
    error: it is reported with ``c_star = 0`` and ``died = True``. Otherwise
    c* keeps its sign and ``regime`` says whether the front advanced, stalled
    (|c*| <= ``stall_speed``) or retreated towards the release.
    """
    if not 0.0 < tail_fraction <= 0.75:
        raise DomainError(f"tail fraction must lie in (0, 0.75], got {tail_fraction}")
    method = SpeedMethod(method)
    track = front_track(trajectory, level)
    n = len(trajectory)
    start = max(int(np.floor(n * (1.0 - tail_fraction))), int(np.ceil(0.25 * n)))

    c_series: List[Optional[float]] = [None] * n
    if trajectory.is_dense:
        for t in range(n - 1):
            if track.valid[t]:
                site = int(np.floor(track.positions[t] / trajectory.config.spacing + trajectory.config.center[0]))
                c_series[t] = local_speed(trajectory, site, t)

    final_line = _profile_line(trajectory.values[-1], trajectory.config)
    if final_line.max() < level:
        logger.info("wave died before generation %d", trajectory.horizon)
        window = [int(trajectory.generations[start]), int(trajectory.generations[-1])]
        return SpeedEstimate(
            c_series=c_series, c_star=0.0, method=method, window=window, residual=0.0, died=True,
            regime=WaveRegime.DIED,
        )

    tail = _usable_window(track, start, final_line, level)
    if tail.size < MIN_TAIL_POINTS:
        raise ConvergenceError(
            f"only {tail.size} generations with a valid front in the tail window; need {MIN_TAIL_POINTS}"
        )
    window = [int(trajectory.generations[tail[0]]), int(trajectory.generations[tail[-1]])]

    times = trajectory.generations[tail].astype(float)
    positions = track.positions[tail]
    fit = linregress(times, positions)
    residual = float(np.sqrt(np.mean((positions - (fit.intercept + fit.slope * times)) ** 2)))

    if method is SpeedMethod.REGRESSION:
        c_star = float(fit.slope)
    else:
        quotients = [c_series[t] for t in tail if t < n - 1 and c_series[t] is not None]
        if not quotients:
            raise ConvergenceError("no usable difference quotients in the tail window")
        c_star = float(np.median(quotients))

    if c_star > stall_speed:
        regime = WaveRegime.ADVANCING
    elif c_star < -stall_speed:
        regime = WaveRegime.RETREATING
        logger.info("front retreats at %.4g per generation", c_star)
    else:
        regime = WaveRegime.PINNED
    return SpeedEstimate(
        c_series=c_series, c_star=c_star, method=method, window=window, residual=residual, regime=regime
    )


class WaveSetup(BaseModel):
    """One wave experiment: a centred pulse release on a 1D periodic lattice."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    params: GrowthParams
    delta: float = 0.1
    extent: int = 400
    spacing: float = 1.0
    generations: int = 200
    amplitude: float = 1.0
    half_width: float = 10.0
    level: float = 0.5
    tail_fraction: float = 0.25

    def lattice(self) -> LatticeConfig:
        return LatticeConfig(dimension=1, extent=(self.extent,), spacing=self.spacing, boundary=Boundary.PERIODIC)

    def profile(self) -> ReleaseProfile:
        return ReleaseProfile(shape=ProfileShape.PULSE, amplitude=self.amplitude, half_width=self.half_width)


def run_wave(setup: WaveSetup, spec: KernelSpec) -> Trajectory:
    config = setup.lattice()
    kernel = discretize(spec, 1, grid_size=setup.extent)
    return simulate(
        config, setup.profile(), setup.params, DispersalSetting(delta=setup.delta), kernel, setup.generations
    )


def wave_speed(setup: WaveSetup, spec: KernelSpec) -> SpeedEstimate:
    floor = site_bistability_delta(setup.params)
    if setup.delta < floor:
        logger.warning(
            "delta=%g is below the site bistability bound %.4f; the %s front may stall", setup.delta, floor, spec.label
        )
    return asymptotic_speed(run_wave(setup, spec), setup.level, setup.tail_fraction)


def _apply_axis(setup: WaveSetup, axis: SweepAxis, value: float) -> WaveSetup:
    if axis is SweepAxis.DELTA:
        return setup.model_copy(update={"delta": value})
    if axis is SweepAxis.ALLEE:
        return setup.model_copy(update={"params": from_allee(setup.params.s_h, value)})
    return setup.model_copy(update={"amplitude": value})


SWEEP_COLUMNS = ["axis", "value", "kernel", "c_star", "died", "regime", "residual", "error"]


def _sweep_cell(setup: WaveSetup, axis: SweepAxis, value: float, spec: KernelSpec) -> Dict[str, object]:
    row: Dict[str, object] = {"axis": axis.value, "value": value, "kernel": spec.label}
    try:
        estimate = wave_speed(_apply_axis(setup, axis, value), spec)
        row.update(
            c_star=estimate.c_star, died=estimate.died, regime=estimate.regime.value, residual=estimate.residual,
            error="",
        )
    except Exception as exc:
        logger.warning("sweep cell %s=%s %s failed: %s", axis.value, value, spec.label, exc)
        row.update(c_star=np.nan, died=False, regime="", residual=np.nan, error=f"{type(exc).__name__}: {exc}")
    return row


def sweep(
    axis: SweepAxis | str,
    values: Sequence[float],
    setup: WaveSetup,
    specs: Sequence[KernelSpec],
    threads: int = 1,
) -> pd.DataFrame:
    """
    Asymptotic speed for every (axis value, kernel) pair.

    Failed cells are recorded in the ``error`` column and the sweep goes on.
    """
    axis = SweepAxis(axis)
    if len(values) == 0:
        raise DomainError("sweep range is empty")
    jobs = [
        (lambda v=value, s=spec: _sweep_cell(setup, axis, v, s))
        for value in values
        for spec in specs
    ]
    logger.info("sweep over %s: %d cells", axis.value, len(jobs))
    rows = run_parallel(jobs, threads)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def release_sweep(
    amplitudes: Sequence[float],
    setup: WaveSetup,
    specs: Sequence[KernelSpec],
    threads: int = 1,
) -> pd.DataFrame:
    """
    c(t) series per kernel and initial release amplitude.

    Long format with columns (kernel, amplitude, generation, c, c_star). A
    cell whose speed cannot be estimated keeps its series with c* = NaN.
    """
    def cell(amplitude: float, spec: KernelSpec) -> pd.DataFrame:
        trajectory = run_wave(setup.model_copy(update={"amplitude": amplitude}), spec)
        try:
            estimate = asymptotic_speed(trajectory, setup.level, setup.tail_fraction)
            c_series, c_star = estimate.c_series, estimate.c_star
        except ConvergenceError as exc:
            logger.warning("release sweep a=%s %s: %s", amplitude, spec.label, exc)
            c_series, c_star = [None] * len(trajectory), np.nan
        return pd.DataFrame(
            {
                "kernel": spec.label,
                "amplitude": amplitude,
                "generation": np.arange(len(c_series)),
                "c": [np.nan if c is None else c for c in c_series],
                "c_star": c_star,
            }
        )

    jobs = [(lambda a=a, s=s: cell(a, s)) for a in amplitudes for s in specs]
    return pd.concat(run_parallel(jobs, threads), ignore_index=True)
