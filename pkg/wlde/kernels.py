"""
Dispersal kernel families, their lattice discretizations and transforms.

Each analytic family is a small class behind a common abstract base, and
``discretize`` turns a ``KernelSpec`` into an immutable, normalized,
symmetric ``DiscreteKernel`` on the integer lattice.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field as dataclass_field, replace
from enum import Enum
from typing import TYPE_CHECKING, Dict, Sequence, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.signal import fftconvolve
from scipy.special import gammaln

from .errors import ConfigError, DomainError

if TYPE_CHECKING:
    from .lattice import LatticeField

logger = logging.getLogger(__name__)

# Truncation must keep at least this much of the analytic mass.
MIN_CAPTURED_MASS = 0.5


class KernelFamily(str, Enum):
    CAUCHY = "cauchy"
    POWER_LAW = "power_law"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    LAPLACE = "laplace"


class Boundary(str, Enum):
    PERIODIC = "periodic"
    ABSORBING = "absorbing"


class KernelSpec(BaseModel):
    """
    A named kernel family and its parameters, in lattice-spacing units.

    ``scale`` is gamma for Cauchy, sigma for Gaussian, b for Laplace, the odd
    box width M for Uniform and the length scale for PowerLaw. ``exponent`` is
    the PowerLaw tail exponent and is ignored by the other families.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: KernelFamily
    scale: float = 1.0
    exponent: float = 3.0

    @model_validator(mode="after")
    def _check_scale(self) -> "KernelSpec":
        if not self.scale > 0:
            raise ValueError(f"kernel scale must be positive, got {self.scale}")
        if self.family is KernelFamily.UNIFORM:
            if self.scale != int(self.scale) or int(self.scale) % 2 == 0:
                raise ValueError(f"uniform kernel width must be an odd integer, got {self.scale}")
        if self.family is KernelFamily.POWER_LAW and not self.exponent > 1:
            raise ValueError(f"power-law exponent must exceed 1, got {self.exponent}")
        return self

    @property
    def label(self) -> str:
        if self.family is KernelFamily.POWER_LAW:
            return f"{self.family.value}(scale={self.scale:g},exponent={self.exponent:g})"
        return f"{self.family.value}(scale={self.scale:g})"


class DispersalFamily(ABC):
    """Analytic density and closed-form transform of one kernel family."""

    heavy_tailed = False

    def __init__(self, spec: KernelSpec):
        self.spec = spec
        self.scale = spec.scale

    @abstractmethod
    def density(self, coords: np.ndarray) -> np.ndarray:
        """
        Evaluate the density at integer offsets.

        Args:
            coords: Array of shape (d, ...) holding one offset vector per point

        Returns:
            Density values with shape ``coords.shape[1:]``
        """

    @abstractmethod
    def closed_form(self, modes: np.ndarray, sizes: np.ndarray) -> complex:
        """Closed-form transform at signed integer ``modes`` on a grid of ``sizes``."""

    def validate(self, dimension: int) -> None:
        """Reject parameter combinations that do not converge in ``dimension``."""

    def default_radius(self, grid_size: int) -> int:
        if self.heavy_tailed:
            return grid_size // 2
        return min(grid_size // 2, math.ceil(8 * self.scale))


class CauchyFamily(DispersalFamily):
    heavy_tailed = True

    def density(self, coords):
        r2 = np.sum(coords * coords, axis=0)
        return self.scale / (math.pi * (self.scale ** 2 + r2))

    def closed_form(self, modes, sizes):
        decay = 2 * math.pi * self.scale
        return complex(math.exp(-decay * float(np.sqrt(np.sum(modes * modes)))) / (1 + math.exp(-decay)))


class PowerLawFamily(DispersalFamily):
    heavy_tailed = True

    def validate(self, dimension):
        if not self.spec.exponent > dimension:
            raise ConfigError(
                f"power-law exponent {self.spec.exponent} must exceed the lattice dimension {dimension}",
                field="kernel.exponent",
            )

    def _normalizer(self, dimension: int) -> float:
        gamma, length = self.spec.exponent, self.scale
        if dimension == 1:
            log_mass = 0.5 * math.log(math.pi) + gammaln((gamma - 1) / 2) - gammaln(gamma / 2)
            return 1.0 / (length * math.exp(log_mass))
        return (gamma - 2) / (2 * math.pi * length ** 2)

    def density(self, coords):
        r2 = np.sum(coords * coords, axis=0) / self.scale ** 2
        return self._normalizer(coords.shape[0]) * (1 + r2) ** (-self.spec.exponent / 2)

    def closed_form(self, modes, sizes):
        return complex((1 + np.sum((modes / sizes) ** 2)) ** (-self.spec.exponent / 2))


class GaussianFamily(DispersalFamily):
    def density(self, coords):
        d = coords.shape[0]
        r2 = np.sum(coords * coords, axis=0)
        return np.exp(-r2 / (2 * self.scale ** 2)) / (math.sqrt(2 * math.pi) * self.scale) ** d

    def closed_form(self, modes, sizes):
        return complex(math.exp(-2 * math.pi ** 2 * self.scale ** 2 * float(np.sum((modes / sizes) ** 2))))


class UniformFamily(DispersalFamily):
    """Box of odd width M; the Dirichlet form reduces to the tabulated one when M fills the grid."""

    @property
    def width(self) -> int:
        return int(self.scale)

    def density(self, coords):
        half = (self.width - 1) // 2
        inside = np.all(np.abs(coords) <= half, axis=0)
        return inside / float(self.width) ** coords.shape[0]

    def closed_form(self, modes, sizes):
        value = 1.0
        for k, size in zip(modes, sizes):
            if k == 0:
                continue
            value *= math.sin(math.pi * k * self.width / size) / (self.width * math.sin(math.pi * k / size))
        return complex(value)

    def default_radius(self, grid_size):
        return min(grid_size // 2, (self.width - 1) // 2)


class LaplaceFamily(DispersalFamily):
    """
    Two-sided exponential, product form in 2D.

    Extension beyond the tabulated families: its transform is the
    discrete-time Fourier transform of rho^|m| with rho = exp(-1/b),
    normalized to 1 at mode 0.
    """

    def density(self, coords):
        d = coords.shape[0]
        return np.exp(-np.sum(np.abs(coords), axis=0) / self.scale) / (2 * self.scale) ** d

    def closed_form(self, modes, sizes):
        rho = math.exp(-1.0 / self.scale)
        value = 1.0
        for k, size in zip(modes, sizes):
            omega = 2 * math.pi * k / size
            value *= (1 - rho) ** 2 / (1 - 2 * rho * math.cos(omega) + rho ** 2)
        return complex(value)


FAMILIES: Dict[KernelFamily, Type[DispersalFamily]] = {
    KernelFamily.CAUCHY: CauchyFamily,
    KernelFamily.POWER_LAW: PowerLawFamily,
    KernelFamily.GAUSSIAN: GaussianFamily,
    KernelFamily.UNIFORM: UniformFamily,
    KernelFamily.LAPLACE: LaplaceFamily,
}


def get_family(spec: KernelSpec) -> DispersalFamily:
    """Instantiate the analytic family for a spec."""
    return FAMILIES[spec.family](spec)


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Normalized symmetric weights on the offsets ``[-radius, radius]^d``."""

    spec: KernelSpec
    dimension: int
    radius: int
    weights: np.ndarray
    captured_mass: float
    _spectra: Dict[Tuple[int, ...], np.ndarray] = dataclass_field(default_factory=dict, compare=False, repr=False)

    @property
    def offsets(self) -> np.ndarray:
        """Offset vectors with shape (d, 2R+1, ..., 2R+1), aligned with ``weights``."""
        axis = np.arange(-self.radius, self.radius + 1)
        return np.stack(np.meshgrid(*([axis] * self.dimension), indexing="ij"))

    @property
    def standard_deviation(self) -> float:
        """Discrete standard deviation along the first axis."""
        first = self.offsets[0].astype(float)
        return float(math.sqrt(np.sum(self.weights * first * first)))

    def spectrum(self, grid_sizes: Sequence[int]) -> np.ndarray:
        """Cached DFT of the circularly embedded weights on ``grid_sizes``."""
        key = tuple(int(s) for s in grid_sizes)
        if key not in self._spectra:
            spectrum = np.fft.fftn(_embed(self, key))
            spectrum.setflags(write=False)
            self._spectra[key] = spectrum
        return self._spectra[key]


def _embed(kernel: DiscreteKernel, grid_sizes: Tuple[int, ...]) -> np.ndarray:
    padded = np.zeros(grid_sizes)
    axis = np.arange(-kernel.radius, kernel.radius + 1)
    index = np.meshgrid(*[axis % size for size in grid_sizes], indexing="ij")
    # Offsets that wrap onto the same cell accumulate.
    np.add.at(padded, tuple(index), kernel.weights)
    return padded


def discretize(
    spec: KernelSpec,
    dimension: int,
    truncation_radius: int | None = None,
    grid_size: int | None = None,
) -> DiscreteKernel:
    """
    Sample a kernel family on the integer lattice and renormalize it.

    Args:
        spec: Kernel family and parameters
        dimension: Lattice dimension (1 or 2)
        truncation_radius: Largest offset kept per axis; derived from ``grid_size`` if omitted
        grid_size: Lattice extent used to pick the default radius

    Returns:
        DiscreteKernel whose weights sum to 1 and are symmetric under negation
    """
    if dimension not in (1, 2):
        raise ConfigError(f"lattice dimension must be 1 or 2, got {dimension}", field="lattice.dimension")
    family = get_family(spec)
    family.validate(dimension)

    if truncation_radius is None:
        if grid_size is None:
            raise ConfigError("either truncation_radius or grid_size is required", field="kernel.truncation_radius")
        radius = family.default_radius(grid_size)
    else:
        if truncation_radius < 1:
            raise ConfigError(f"truncation radius must be >= 1, got {truncation_radius}", field="kernel.truncation_radius")
        radius = int(truncation_radius)

    axis = np.arange(-radius, radius + 1)
    coords = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij")).astype(float)
    raw = family.density(coords)
    mass = float(raw.sum())
    if mass < MIN_CAPTURED_MASS:
        raise ConfigError(
            f"truncation radius {radius} keeps only {mass:.3f} of the {spec.label} mass",
            field="kernel.truncation_radius",
        )

    for ax in range(dimension):
        raw = 0.5 * (raw + np.flip(raw, axis=ax))
    weights = raw / raw.sum()
    weights.setflags(write=False)
    logger.debug("discretized %s in %dD: radius=%d captured_mass=%.6f", spec.label, dimension, radius, mass)
    return DiscreteKernel(spec=spec, dimension=dimension, radius=radius, weights=weights, captured_mass=mass)


def transform_closed_form(spec: KernelSpec, mode: Sequence[int], grid_sizes: Sequence[int]) -> complex:
    """
    Evaluate the family's closed-form transform at one mode.

    Modes are taken in [0, grid_size) and mapped to their signed frequency
    (k or k - M) before evaluation so the aliased half of the spectrum is
    represented correctly.
    """
    modes = np.asarray(mode, dtype=int)
    sizes = np.asarray(grid_sizes, dtype=int)
    if modes.shape != sizes.shape:
        raise DomainError("mode and grid_sizes must have the same length")
    if np.any(modes < 0) or np.any(modes >= sizes):
        raise DomainError(f"mode {tuple(modes)} outside grid {tuple(sizes)}")
    signed = np.where(modes > sizes // 2, modes - sizes, modes).astype(float)
    return get_family(spec).closed_form(signed, sizes.astype(float))


def transform_numeric(kernel: DiscreteKernel, grid_sizes: Sequence[int]) -> np.ndarray:
    """Exact DFT of the zero-padded, circularly shifted weights; one amplitude per mode."""
    sizes = tuple(int(s) for s in grid_sizes)
    if len(sizes) != kernel.dimension:
        raise DomainError(f"grid has {len(sizes)} axes, kernel has {kernel.dimension}")
    if any(2 * kernel.radius > s for s in sizes):
        raise DomainError(f"truncation radius {kernel.radius} exceeds half the grid {sizes}")
    return kernel.spectrum(sizes)


def convolve_values(
    values: np.ndarray,
    kernel: DiscreteKernel,
    method: str = "spectral",
    boundary: Boundary | str = Boundary.PERIODIC,
) -> np.ndarray:
    """Convolve a raw site array with the kernel."""
    if values.ndim != kernel.dimension:
        raise DomainError(f"field has {values.ndim} axes, kernel has {kernel.dimension}")
    boundary = Boundary(boundary)

    if boundary is Boundary.ABSORBING:
        # Each row of effective weights is renormalized over the in-domain sites.
        flux = fftconvolve(values, kernel.weights, mode="same")
        reach = fftconvolve(np.ones_like(values), kernel.weights, mode="same")
        return np.clip(flux / reach, 0.0, None)

    if method == "spectral":
        return np.fft.ifftn(np.fft.fftn(values) * kernel.spectrum(values.shape)).real
    if method == "direct":
        out = np.zeros_like(values, dtype=float)
        axes = tuple(range(kernel.dimension))
        offsets = kernel.offsets.reshape(kernel.dimension, -1).T
        for offset, weight in zip(offsets, kernel.weights.ravel()):
            if weight != 0.0:
                out += weight * np.roll(values, shift=tuple(int(o) for o in offset), axis=axes)
        return out
    raise ConfigError(f"unknown convolution method {method!r}")


def convolve(
    field: "LatticeField",
    kernel: DiscreteKernel,
    method: str = "spectral",
    boundary: Boundary | str = Boundary.PERIODIC,
) -> "LatticeField":
    """Return a new field holding ``kernel * field`` (circular by default)."""
    return replace(field, values=convolve_values(field.values, kernel, method, boundary))


def matched_specs(target_sd: float, exponent: float = 4.0) -> Dict[KernelFamily, KernelSpec]:
    """
    Scale every family to a common spread.

    Gaussian, Laplace (b = sd / sqrt 2), Uniform and PowerLaw (exponent > 3)
    are matched on standard deviation; Cauchy has no variance and is matched
    on the Gaussian interquartile range instead.
    """
    if not target_sd > 0:
        raise DomainError(f"target standard deviation must be positive, got {target_sd}")
    if not exponent > 3:
        raise DomainError("power-law variance is finite only for exponent > 3")
    width = max(1, int(round((math.sqrt(12 * target_sd ** 2 + 1) - 1) / 2)) * 2 + 1)
    return {
        KernelFamily.CAUCHY: KernelSpec(family=KernelFamily.CAUCHY, scale=0.6745 * target_sd),
        KernelFamily.POWER_LAW: KernelSpec(
            family=KernelFamily.POWER_LAW, scale=target_sd * math.sqrt(exponent - 3), exponent=exponent
        ),
        KernelFamily.GAUSSIAN: KernelSpec(family=KernelFamily.GAUSSIAN, scale=target_sd),
        KernelFamily.UNIFORM: KernelSpec(family=KernelFamily.UNIFORM, scale=width),
        KernelFamily.LAPLACE: KernelSpec(family=KernelFamily.LAPLACE, scale=target_sd / math.sqrt(2)),
    }
