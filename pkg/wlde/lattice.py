"""
Lattice state, release profiles and the one-generation WLDE update.

The update is

    v_i(t+1) = (1 - delta_i) f(v_i(t)) + sum_j delta_j K_ij f(v_j(t)),

which for a constant delta is (1 - delta) f(v) + delta (K * f(v)).
"""

from __future__ import annotations

import io
import logging
import math
import struct
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import growth
from .config import MEMORY_BUDGET_BYTES
from .errors import ArtifactIOError, ClippingWarning, ConvergenceError, DomainError, ResourceError
from .growth import GrowthParams
from .kernels import Boundary, DiscreteKernel, convolve_values

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"WLDE1"
VALUE_TOLERANCE = 1e-12


class LatticeConfig(BaseModel):
    """Finite 1D or 2D grid with spacing, boundary policy and origin site."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dimension: int = 1
    extent: Tuple[int, ...] = (400,)
    spacing: float = 1.0
    boundary: Boundary = Boundary.PERIODIC
    origin: Optional[Tuple[int, ...]] = None

    @field_validator("extent", "origin", mode="before")
    @classmethod
    def _scalar_to_tuple(cls, value):
        if isinstance(value, int):
            return (value,)
        return value

    @model_validator(mode="after")
    def _check_invariants(self) -> "LatticeConfig":
        if self.dimension not in (1, 2):
            raise ValueError(f"lattice dimension must be 1 or 2, got {self.dimension}")
        if len(self.extent) != self.dimension:
            raise ValueError(f"extent {self.extent} does not match dimension {self.dimension}")
        if any(n < 8 for n in self.extent):
            raise ValueError(f"every extent must be >= 8, got {self.extent}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.origin is not None:
            if len(self.origin) != self.dimension or any(not 0 <= o < n for o, n in zip(self.origin, self.extent)):
                raise ValueError(f"origin {self.origin} outside extent {self.extent}")
        return self

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.extent)

    @property
    def sites(self) -> int:
        return int(np.prod(self.extent))

    @property
    def center(self) -> Tuple[int, ...]:
        return self.origin if self.origin is not None else tuple(n // 2 for n in self.extent)

    def axis_coordinates(self, axis: int = 0) -> np.ndarray:
        """Site coordinates x = (i - origin) * h along one axis."""
        return (np.arange(self.extent[axis]) - self.center[axis]) * self.spacing

    def coordinates(self) -> np.ndarray:
        """Coordinates of every site, shape (d, *extent)."""
        axes = [self.axis_coordinates(a) for a in range(self.dimension)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Infection frequencies v_i(t) at one generation."""

    values: np.ndarray
    generation: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise DomainError("lattice field contains non-finite values")
        if values.size and (values.min() < -VALUE_TOLERANCE or values.max() > 1.0 + VALUE_TOLERANCE):
            raise DomainError(f"lattice field outside [0, 1]: min={values.min()}, max={values.max()}")
        values = np.clip(values, 0.0, 1.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.generation < 0:
            raise DomainError(f"generation must be nonnegative, got {self.generation}")


class ProfileShape(str, Enum):
    PULSE = "pulse"
    TRIANGULAR = "triangular"
    QUADRATIC = "quadratic"


class ReleaseProfile(BaseModel):
    """Initial release v_0(x) with amplitude ``a`` and half-width ``L`` (length units)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: ProfileShape = ProfileShape.PULSE
    amplitude: float
    half_width: float
    center: float | Tuple[float, ...] = 0.0

    @model_validator(mode="after")
    def _check_invariants(self) -> "ReleaseProfile":
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"release amplitude must lie in (0, 1], got {self.amplitude}")
        if not self.half_width > 0:
            raise ValueError(f"release half-width must be positive, got {self.half_width}")
        return self

    def with_amplitude(self, amplitude: float) -> "ReleaseProfile":
        return self.model_copy(update={"amplitude": amplitude})

    def _center(self, dimension: int) -> np.ndarray:
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if center.size == 1:
            center = np.repeat(center, dimension)
        if center.size != dimension:
            raise DomainError(f"profile center {self.center} does not match dimension {dimension}")
        return center

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        """Sample v_0 at coordinates of shape (d, ...)."""
        center = self._center(coords.shape[0]).reshape((-1,) + (1,) * (coords.ndim - 1))
        r = np.sqrt(np.sum((coords - center) ** 2, axis=0))
        a, half = self.amplitude, self.half_width
        if self.shape is ProfileShape.PULSE:
            return np.where(r < half, a, 0.0)
        inside = r <= half
        if self.shape is ProfileShape.TRIANGULAR:
            return np.where(inside, a * (1.0 - r / half), 0.0)
        return np.where(inside, a * (1.0 - (r / half) ** 2), 0.0)


@dataclass(frozen=True, eq=False)
class DispersalSetting:
    """Dispersing fraction: a constant delta or one delta_i per site."""

    delta: float | np.ndarray

    def __post_init__(self):
        if np.ndim(self.delta) == 0:
            if not 0.0 < float(self.delta) <= 1.0:
                raise DomainError(f"constant delta must lie in (0, 1], got {self.delta}")
            object.__setattr__(self, "delta", float(self.delta))
        else:
            arr = np.asarray(self.delta, dtype=float)
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise DomainError("per-site delta values must lie in [0, 1]")
            arr.setflags(write=False)
            object.__setattr__(self, "delta", arr)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.delta, float)

    def require_constant(self) -> float:
        if not self.is_constant:
            raise DomainError("this analysis needs a constant delta")
        return self.delta


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored fields of one simulation; generations may be strided."""

    values: np.ndarray
    generations: np.ndarray
    config: LatticeConfig

    def __len__(self) -> int:
        return len(self.generations)

    @property
    def initial(self) -> LatticeField:
        return self.field(0)

    @property
    def final(self) -> LatticeField:
        return self.field(len(self) - 1)

    @property
    def horizon(self) -> int:
        return int(self.generations[-1])

    @property
    def is_dense(self) -> bool:
        return bool(np.array_equal(self.generations, np.arange(len(self))))

    def field(self, index: int) -> LatticeField:
        return LatticeField(values=self.values[index], generation=int(self.generations[index]))

    def require_dense(self) -> None:
        if not self.is_dense:
            raise DomainError("this analysis needs every generation stored (stride 1)")


def init_field(config: LatticeConfig, profile: ReleaseProfile) -> LatticeField:
    """Sample the release profile on the lattice at generation 0."""
    if math.isfinite(profile.half_width):
        center = profile._center(config.dimension)
        for axis in range(config.dimension):
            coords = config.axis_coordinates(axis)
            if center[axis] - profile.half_width < coords[0] or center[axis] + profile.half_width > coords[-1]:
                raise DomainError(
                    f"profile support [{center[axis] - profile.half_width}, {center[axis] + profile.half_width}] "
                    f"exceeds lattice axis {axis} [{coords[0]}, {coords[-1]}]"
                )
    values = np.clip(profile.evaluate(config.coordinates()), 0.0, 1.0)
    return LatticeField(values=values, generation=0)


def step(
    field: LatticeField,
    params: GrowthParams,
    dispersal: DispersalSetting,
    kernel: DiscreteKernel,
    boundary: Boundary | str = Boundary.PERIODIC,
) -> LatticeField:
    """Advance the field by one generation."""
    grown = growth.evaluate(params, field.values)
    if dispersal.is_constant:
        delta = dispersal.delta
        new = (1.0 - delta) * grown + delta * convolve_values(grown, kernel, boundary=boundary)
    else:
        delta = dispersal.delta
        if delta.shape != field.values.shape:
            raise DomainError(f"delta array shape {delta.shape} does not match field {field.values.shape}")
        new = (1.0 - delta) * grown + convolve_values(delta * grown, kernel, boundary=boundary)
        if new.min() < -VALUE_TOLERANCE or new.max() > 1.0 + VALUE_TOLERANCE:
            warnings.warn("per-site delta pushed frequencies outside [0, 1]; clipping", ClippingWarning, stacklevel=2)
    return LatticeField(values=np.clip(new, 0.0, 1.0), generation=field.generation + 1)


def _guard_margin(config: LatticeConfig, kernel: DiscreteKernel) -> int:
    return min(2 * kernel.radius, min(config.extent) // 4)


def _front_near_edge(values: np.ndarray, margin: int, level: float = 0.5) -> bool:
    edges = []
    for axis in range(values.ndim):
        edges.append(np.take(values, range(margin), axis=axis))
        edges.append(np.take(values, range(values.shape[axis] - margin, values.shape[axis]), axis=axis))
    return any(edge.max() > level for edge in edges)


def simulate(
    config: LatticeConfig,
    profile: ReleaseProfile | None,
    params: GrowthParams,
    dispersal: DispersalSetting,
    kernel: DiscreteKernel,
    generations: int,
    stride: int = 1,
    memory_budget: int = MEMORY_BUDGET_BYTES,
    wrap_guard: bool = False,
    initial: LatticeField | None = None,
) -> Trajectory:
    """
    Run the WLDE for a number of generations.

    Args:
        config: Lattice geometry and boundary policy
        profile: Release profile for the initial field (ignored if ``initial`` is given)
        params: Growth parameters
        dispersal: Constant or per-site delta
        kernel: Discretized dispersal kernel
        generations: Number of updates T; T + 1 fields exist in total
        stride: Keep every ``stride``-th field plus the final one
        memory_budget: Bytes the stored fields may occupy
        wrap_guard: Abort if the front comes within two kernel radii of the edge
        initial: Explicit initial field

    Returns:
        Trajectory with the stored fields
    """
    if generations < 0:
        raise DomainError(f"generations must be nonnegative, got {generations}")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    if kernel.dimension != config.dimension:
        raise DomainError(f"kernel dimension {kernel.dimension} does not match lattice {config.dimension}")

    stored = generations // stride + 1 + (1 if generations % stride else 0)
    needed = stored * config.sites * 8
    if needed > memory_budget:
        raise ResourceError(
            f"trajectory needs {needed / 2**20:.1f} MiB, budget is {memory_budget / 2**20:.1f} MiB; "
            f"raise the budget or use a larger stride"
        )

    if initial is None:
        if profile is None:
            raise DomainError("either a release profile or an initial field is required")
        initial = init_field(config, profile)
    if initial.values.shape != config.shape:
        raise DomainError(f"initial field shape {initial.values.shape} does not match lattice {config.shape}")

    margin = _guard_margin(config, kernel)
    fields: List[np.ndarray] = [initial.values]
    kept: List[int] = [initial.generation]
    current = initial
    for t in range(1, generations + 1):
        current = step(current, params, dispersal, kernel, boundary=config.boundary)
        if wrap_guard and config.boundary is Boundary.PERIODIC and _front_near_edge(current.values, margin):
            raise ConvergenceError(
                f"front came within {margin} cells of the boundary at generation {current.generation}; "
                f"widen the lattice"
            )
        if t % stride == 0 or t == generations:
            fields.append(current.values)
            kept.append(current.generation)

    logger.debug("simulated %d generations on %s (%d stored)", generations, config.shape, len(kept))
    return Trajectory(values=np.stack(fields), generations=np.asarray(kept), config=config)


def cost(profile: ReleaseProfile) -> float:
    """Release cost: the integral of v_0 over the line."""
    a, half = profile.amplitude, profile.half_width
    if profile.shape is ProfileShape.PULSE:
        return 2.0 * a * half
    if profile.shape is ProfileShape.TRIANGULAR:
        return a * half
    return 4.0 * a * half / 3.0


def trajectory_to_csv(trajectory: Trajectory, config_hash: str) -> str:
    """One row per stored generation, one column per site (row-major in 2D)."""
    flat = trajectory.values.reshape(len(trajectory), -1)
    frame = pd.DataFrame(flat, columns=[f"site_{i}" for i in range(flat.shape[1])])
    frame.insert(0, "generation", trajectory.generations)
    body = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return f"# config_sha256={config_hash}\n{body}"


def trajectory_to_bytes(trajectory: Trajectory) -> bytes:
    """Binary dump: magic, ndim, little-endian uint64 dims, little-endian float64 data."""
    values = np.ascontiguousarray(trajectory.values, dtype="<f8")
    header = BINARY_MAGIC + struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}Q", *values.shape)
    return header + values.tobytes(order="C")


def trajectory_from_bytes(payload: bytes) -> np.ndarray:
    """Read back the values written by ``trajectory_to_bytes``."""
    stream = io.BytesIO(payload)
    if stream.read(len(BINARY_MAGIC)) != BINARY_MAGIC:
        raise ArtifactIOError("not a WLDE1 trajectory dump")
    (ndim,) = struct.unpack("<B", stream.read(1))
    shape = struct.unpack(f"<{ndim}Q", stream.read(8 * ndim))
    data = np.frombuffer(stream.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ArtifactIOError(f"trajectory dump truncated: expected {int(np.prod(shape))} values, got {data.size}")
    return data.reshape(shape)
