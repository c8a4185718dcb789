"""
Outbreak-size distributions per lattice site.

A site's frequency v(t, x_i) is read as the probability of an infection
event in generation t. Up to the fixation time N_i the event count Y_i is
Poisson-binomial; for small probabilities it is close to Poisson with rate
lambda_i = sum_t p_it, and with a geometric law on N_i it becomes a mixture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.signal import find_peaks
from scipy.special import gammaln, xlogy
from scipy.stats import poisson

from .config import MIXTURE_TERM_BUDGET
from .errors import DomainError, ResourceError
from .lattice import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FIX = 1e-10
DEFAULT_HORIZON = 400
MIXTURE_TAIL_BOUND = 1e-9


class OutbreakMethod(str, Enum):
    POISSON_BINOMIAL = "poisson-binomial"
    POISSON = "poisson"
    GEOMETRIC_MIXTURE = "geometric-mixture"


@dataclass(frozen=True, eq=False)
class SiteHistory:
    """Frequency series of one site and its fixation time (None when censored)."""

    site: int
    p_series: np.ndarray
    fixation: Optional[int]
    horizon: int

    @property
    def censored(self) -> bool:
        return self.fixation is None


@dataclass(frozen=True)
class ModeSummary:
    count: int
    peaks: List[int]
    prominences: List[float]


@dataclass(frozen=True, eq=False)
class OutbreakCurve:
    """P(Y_i = k) for every site, with the inputs that produced it."""

    k: int
    probabilities: np.ndarray
    method: OutbreakMethod
    fixation: np.ndarray
    rates: np.ndarray
    x: np.ndarray
    modality: ModeSummary


def _site_series(trajectory: Trajectory) -> np.ndarray:
    trajectory.require_dense()
    return trajectory.values.reshape(len(trajectory), -1)


def fixation_times(values: np.ndarray, epsilon_fix: float = DEFAULT_EPSILON_FIX) -> np.ndarray:
    """
    First t with |v(t+1) - v(t)| <= epsilon_fix, per column; -1 where censored.

    Args:
        values: Array of shape (generations + 1, sites)
        epsilon_fix: Tolerance standing in for exact equality
    """
    if values.shape[0] < 2:
        raise DomainError("fixation detection needs at least two generations")
    settled = np.abs(np.diff(values, axis=0)) <= epsilon_fix
    first = np.argmax(settled, axis=0)
    return np.where(settled.any(axis=0), first, -1)


def detect_fixation(trajectory: Trajectory, site: int, epsilon_fix: float = DEFAULT_EPSILON_FIX) -> Optional[int]:
    """Fixation time N_i of one (flattened) site, or None if it never settles."""
    series = _site_series(trajectory)[:, site : site + 1]
    n_fix = int(fixation_times(series, epsilon_fix)[0])
    return None if n_fix < 0 else n_fix


def site_history(
    trajectory: Trajectory,
    site: int,
    horizon: int = DEFAULT_HORIZON,
    epsilon_fix: float = DEFAULT_EPSILON_FIX,
) -> SiteHistory:
    series = _site_series(trajectory)[: horizon + 1, site]
    n_fix = detect_fixation(trajectory, site, epsilon_fix)
    if n_fix is not None and n_fix > horizon:
        n_fix = None
    return SiteHistory(site=site, p_series=series, fixation=n_fix, horizon=horizon)


def _check_probabilities(p: np.ndarray) -> np.ndarray:
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise DomainError("probabilities must lie in [0, 1]")
    return p


def poisson_binomial_pmf(p: ArrayLike) -> np.ndarray:
    """
    Exact PMF of a sum of independent Bernoulli(p_t) variables.

    The running PMF is the coefficient vector of prod_t (1 - p_t + p_t x),
    updated one factor at a time.
    """
    probabilities = _check_probabilities(np.atleast_1d(np.asarray(p, dtype=float)))
    pmf = np.array([1.0])
    for q in probabilities:
        nxt = np.zeros(len(pmf) + 1)
        nxt[:-1] = pmf * (1 - q)
        nxt[1:] += pmf * q
        pmf = nxt
    return pmf


def poisson_pmf(lam: ArrayLike, k: ArrayLike):
    """exp(-lambda) lambda^k / k!, evaluated in log space."""
    lam_arr = np.asarray(lam, dtype=float)
    k_arr = np.asarray(k, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError("Poisson rate must be nonnegative")
    if np.any(k_arr < 0) or np.any(k_arr != np.floor(k_arr)):
        raise DomainError("outbreak size must be a nonnegative integer")
    out = np.exp(xlogy(k_arr, lam_arr) - lam_arr - gammaln(k_arr + 1))
    return float(out) if out.ndim == 0 else out


def total_variation(pmf_a: ArrayLike, pmf_b: ArrayLike) -> float:
    """Half the L1 distance of two PMFs on {0, 1, ...}; the shorter one is zero-padded."""
    a = np.asarray(pmf_a, dtype=float)
    b = np.asarray(pmf_b, dtype=float)
    size = max(a.size, b.size)
    a = np.pad(a, (0, size - a.size))
    b = np.pad(b, (0, size - b.size))
    return 0.5 * float(np.sum(np.abs(a - b)))


def le_cam_bound(p: ArrayLike) -> float:
    """Le Cam's bound sum p_i^2 on the Poisson approximation error."""
    return float(np.sum(_check_probabilities(np.asarray(p, dtype=float)) ** 2))


def poisson_approximation_error(p: ArrayLike) -> float:
    """Total-variation distance between PB(p) and Poisson(sum p), tail included."""
    pb = poisson_binomial_pmf(p)
    rate = float(np.sum(p))
    approx = poisson.pmf(np.arange(len(pb)), rate)
    return total_variation(pb, approx) + 0.5 * float(poisson.sf(len(pb) - 1, rate))


def frozen_rate(p_star: float, n_fix: int, m: int) -> float:
    """Rate accumulated while p_t stays frozen at p_star for n_fix <= t <= m."""
    if not 0.0 <= p_star <= 1.0:
        raise DomainError(f"p_star must lie in [0, 1], got {p_star}")
    return float(max(0, m + 1 - n_fix) * p_star)


def _truncated_pb(series: np.ndarray, active: np.ndarray, k: int) -> np.ndarray:
    """Entry k of the PB PMF per site, using only steps where ``active`` is True."""
    sites = series.shape[1]
    pmf = np.zeros((sites, k + 1))
    pmf[:, 0] = 1.0
    for t in range(series.shape[0]):
        on = active[t]
        if not on.any():
            continue
        q = series[t, on][:, None]
        block = pmf[on]
        nxt = block * (1 - q)
        nxt[:, 1:] += block[:, :-1] * q
        pmf[on] = nxt
    return pmf[:, k]


def _tail_terms(q: float) -> int:
    if q >= 1.0:
        return 0
    return max(0, math.ceil(math.log(MIXTURE_TAIL_BOUND) / math.log(1.0 - q)) - 1)


def geometric_mixture(
    p_series: ArrayLike,
    k: int,
    q: ArrayLike,
    m_max: Optional[int] = None,
    extend_with: Optional[ArrayLike] = None,
    term_budget: int = MIXTURE_TERM_BUDGET,
) -> np.ndarray:
    """
    sum_m P(Y_i = k | N_i = m) (1 - q_i)^m q_i, truncated at m_max.

    Args:
        p_series: Shape (generations,) or (sites, generations)
        k: Outbreak size
        q: Geometric success probability per site, in (0, 1]
        m_max: Truncation; chosen per site from the 1e-9 tail bound if omitted
        extend_with: Value each site holds beyond its series (NaN: cannot extend)
        term_budget: Largest truncation allowed

    Returns:
        Mixture probability per site
    """
    series = np.atleast_2d(np.asarray(p_series, dtype=float))
    _check_probabilities(series)
    sites, length = series.shape
    q_arr = np.broadcast_to(np.asarray(q, dtype=float), (sites,)).copy()
    if np.any(q_arr <= 0.0) or np.any(q_arr > 1.0):
        raise DomainError("geometric success probability must lie in (0, 1]")

    needed = np.array([_tail_terms(qi) for qi in q_arr])
    if m_max is not None:
        short = (1.0 - q_arr) ** (m_max + 1) >= MIXTURE_TAIL_BOUND
        if np.any(short):
            raise DomainError(f"m_max={m_max} leaves geometric tail mass >= {MIXTURE_TAIL_BOUND}")
        needed = np.full(sites, m_max)
    top = int(needed.max())
    if top > term_budget:
        raise ResourceError(f"geometric mixture needs {top} terms, budget is {term_budget}")

    if top > length:
        fill = np.full(sites, np.nan) if extend_with is None else np.broadcast_to(
            np.asarray(extend_with, dtype=float), (sites,)
        )
        missing = (needed > length) & ~np.isfinite(fill)
        if np.any(missing):
            raise ResourceError(
                f"{int(missing.sum())} sites need {top} generations but only {length} are available"
            )
        tail = np.repeat(np.nan_to_num(fill)[:, None], top - length, axis=1)
        series = np.concatenate([series, tail], axis=1)

    pmf = np.zeros((sites, k + 1))
    pmf[:, 0] = 1.0
    total = np.zeros(sites)
    weight = q_arr.copy()
    for m in range(top + 1):
        use = m <= needed
        total[use] += weight[use] * pmf[use, k]
        if m == top:
            break
        p = series[:, m][:, None]
        nxt = pmf * (1 - p)
        nxt[:, 1:] += pmf[:, :-1] * p
        pmf = nxt
        weight = weight * (1.0 - q_arr)
    return total


def count_modes(curve: ArrayLike, prominence: float = 0.05, min_separation: int = 3) -> ModeSummary:
    """
    Count the peaks of a spatial curve that stand out from their surroundings.

    A peak survives when its prominence is at least ``prominence`` times the
    curve's maximum and it lies ``min_separation`` cells from a taller peak.
    """
    values = np.asarray(curve, dtype=float)
    if values.ndim != 1 or values.size < 5:
        raise DomainError("mode counting needs a 1D curve with at least 5 points")
    top = float(values.max())
    if top <= 0.0:
        return ModeSummary(count=0, peaks=[], prominences=[])
    peaks, props = find_peaks(values, prominence=prominence * top, distance=min_separation)
    return ModeSummary(
        count=len(peaks),
        peaks=[int(p) for p in peaks],
        prominences=[float(p) for p in props["prominences"]],
    )


def outbreak_curve(
    trajectory: Trajectory,
    k: int,
    method: OutbreakMethod | str = OutbreakMethod.POISSON,
    horizon: int = DEFAULT_HORIZON,
    epsilon_fix: float = DEFAULT_EPSILON_FIX,
    q: Optional[ArrayLike] = None,
    prominence: float = 0.05,
    min_separation: int = 3,
) -> OutbreakCurve:
    """
    P(Y_i = k) at every site from one simulated trajectory.

    Each site's series is cut at min(N_i, horizon); censored sites use the
    full horizon. The geometric mixture defaults to q_i = 1 / (1 + N_i).
    """
    method = OutbreakMethod(method)
    if k < 0:
        raise DomainError(f"outbreak size must be nonnegative, got {k}")
    if trajectory.horizon < horizon:
        raise DomainError(f"trajectory covers {trajectory.horizon} generations, horizon {horizon} requested")

    config = trajectory.config
    values = _site_series(trajectory)[: horizon + 1]
    n_fix = fixation_times(values, epsilon_fix)
    cut = np.where(n_fix < 0, horizon, np.minimum(n_fix, horizon))
    series = values[:horizon]
    active = np.arange(horizon)[:, None] < cut[None, :]
    rates = np.sum(series * active, axis=0)

    if method is OutbreakMethod.POISSON:
        probabilities = poisson_pmf(rates, k)
    elif method is OutbreakMethod.POISSON_BINOMIAL:
        probabilities = _truncated_pb(series, active, k)
    else:
        q_arr = 1.0 / (1.0 + cut) if q is None else q
        held = np.where(n_fix < 0, np.nan, values[np.clip(n_fix, 0, horizon), np.arange(values.shape[1])])
        logger.info("geometric mixture with %s q", "default 1/(1+N_i)" if q is None else "user-supplied")
        probabilities = geometric_mixture(series.T, k, q_arr, extend_with=held)

    probabilities = np.asarray(probabilities, dtype=float).reshape(config.shape)
    line = probabilities if config.dimension == 1 else probabilities[:, config.center[1]]
    return OutbreakCurve(
        k=k,
        probabilities=probabilities,
        method=method,
        fixation=n_fix.reshape(config.shape),
        rates=rates.reshape(config.shape),
        x=config.axis_coordinates(0),
        modality=count_modes(line, prominence, min_separation),
    )
