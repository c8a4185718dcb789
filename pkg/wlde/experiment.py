"""Experiment configuration files: YAML sections validated with pydantic."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .config import CONFIG_DIR, ENV_OVERRIDE_PREFIX, MEMORY_BUDGET_BYTES
from .errors import ArtifactIOError, ConfigError
from .growth import GrowthParams, from_allee
from .kernels import DiscreteKernel, KernelFamily, KernelSpec, discretize, matched_specs
from .lattice import DispersalSetting, LatticeConfig, ProfileShape, ReleaseProfile
from .optimize import Criterion, InvasionPredicate, OptimizeConfig
from .outbreak import DEFAULT_EPSILON_FIX, DEFAULT_HORIZON, OutbreakMethod
from .stability import DEFAULT_MARGIN
from .waves import SweepAxis, WaveSetup

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GrowthSection(_Section):
    """Either (s_f, s_h) or (s_h, allee)."""

    s_h: float
    s_f: Optional[float] = None
    allee: Optional[float] = None

    @model_validator(mode="after")
    def _one_parameterization(self) -> "GrowthSection":
        if (self.s_f is None) == (self.allee is None):
            raise ValueError("give exactly one of s_f or allee next to s_h")
        self.params()
        return self

    def params(self) -> GrowthParams:
        if self.allee is not None:
            return from_allee(self.s_h, self.allee)
        return GrowthParams(s_f=self.s_f, s_h=self.s_h)


class KernelSection(_Section):
    family: KernelFamily = KernelFamily.GAUSSIAN
    scale: float = 1.0
    exponent: float = 3.0
    truncation_radius: Optional[int] = None

    @model_validator(mode="after")
    def _check_spec(self) -> "KernelSection":
        self.spec()
        return self

    def spec(self) -> KernelSpec:
        return KernelSpec(family=self.family, scale=self.scale, exponent=self.exponent)


class DispersalSection(_Section):
    """Constant ``delta`` or a CSV of per-site values in ``delta_file``."""

    delta: Optional[float] = None
    delta_file: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _default_delta(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("delta") is None and data.get("delta_file") is None:
            return {**data, "delta": 0.2}
        return data

    @model_validator(mode="after")
    def _one_source(self) -> "DispersalSection":
        if self.delta is not None and self.delta_file is not None:
            raise ValueError("give delta or delta_file, not both")
        if self.delta is not None and not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        return self

    def setting(self, lattice: LatticeConfig) -> DispersalSetting:
        if self.delta_file is None:
            return DispersalSetting(delta=self.delta)
        try:
            values = pd.read_csv(self.delta_file, header=None).to_numpy(dtype=float)
        except (OSError, ValueError) as exc:
            raise ArtifactIOError(f"cannot read delta_file {self.delta_file}: {exc}") from exc
        if values.size != lattice.sites:
            raise ConfigError(f"{values.size} values for {lattice.sites} sites", field="dispersal.delta_file")
        return DispersalSetting(delta=values.reshape(lattice.shape))


class SimulateSection(_Section):
    stride: int = Field(default=1, ge=1)
    memory_budget_mb: Optional[float] = None
    wrap_guard: bool = False
    snapshots: List[int] = Field(default_factory=list)

    @property
    def memory_budget(self) -> int:
        if self.memory_budget_mb is None:
            return MEMORY_BUDGET_BYTES
        return int(self.memory_budget_mb * 2**20)


class StabilitySection(_Section):
    margin: float = DEFAULT_MARGIN
    epsilon: float = 1e-4
    generations: int = 200
    resolution: int = 101


class WavesSection(_Section):
    level: float = Field(default=0.5, gt=0.0, lt=1.0)
    tail_fraction: float = 0.25
    half_width: float = 10.0
    amplitude: float = 1.0
    axis: Optional[SweepAxis] = None
    values: List[float] = Field(default_factory=list)
    kernels: List[KernelSpec] = Field(default_factory=list)
    matched_sd: Optional[float] = None
    families: List[KernelFamily] = Field(
        default_factory=lambda: [
            KernelFamily.CAUCHY, KernelFamily.POWER_LAW, KernelFamily.GAUSSIAN, KernelFamily.UNIFORM,
        ]
    )
    track_fronts: bool = False


class OutbreakSection(_Section):
    method: OutbreakMethod = OutbreakMethod.POISSON
    ks: List[int] = Field(default_factory=lambda: [1])
    amplitudes: List[float] = Field(default_factory=list)
    horizon: int = DEFAULT_HORIZON
    epsilon_fix: float = DEFAULT_EPSILON_FIX
    q: Optional[float] = None
    prominence: float = 0.05
    # in lattice cells; peaks closer than this merge
    min_separation: int = 3


class OptimizeSection(_Section):
    criterion: str = "both"
    shapes: List[ProfileShape] = Field(default_factory=list)
    half_widths: List[float] = Field(default_factory=lambda: [round(float(w), 6) for w in np.geomspace(0.25, 4.0, 8)])
    a_lo: float = 0.05
    a_hi: float = 1.0
    beta: float = 0.9
    tolerance: float = 1e-3
    step: float = 5e-3
    predicate: InvasionPredicate = InvasionPredicate.MEAN
    kernels: List[KernelSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_criterion(self) -> "OptimizeSection":
        if self.criterion not in ("acm", "mcm", "both"):
            raise ValueError(f"criterion must be acm, mcm or both, got {self.criterion!r}")
        return self

    @property
    def criteria(self) -> List[Criterion]:
        if self.criterion == "both":
            return [Criterion.MCM, Criterion.ACM]
        return [Criterion(self.criterion.upper())]


class ReferenceSection(_Section):
    """
    Published values a run is checked against.

    Keys name observed quantities (``c_star/cauchy/1``,
    ``laplace/pulse/k1/mcm_a``, ``pulse/k1``). With ``mode: absolute`` a value passes when
    it lies within ``tolerance`` of the reference, with ``mode: factor`` when
    it lies in [ref / tolerance, ref * tolerance]. Each entry of ``orderings``
    lists keys whose observed values must increase strictly.
    """

    values: Dict[str, float] = Field(default_factory=dict)
    mode: str = "absolute"
    tolerance: float = 0.05
    orderings: List[List[str]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_mode(self) -> "ReferenceSection":
        if self.mode not in ("absolute", "factor"):
            raise ValueError(f"reference mode must be absolute or factor, got {self.mode!r}")
        if self.mode == "factor" and not self.tolerance > 1.0:
            raise ValueError("a factor band needs tolerance > 1")
        if self.mode == "absolute" and not self.tolerance >= 0.0:
            raise ValueError("tolerance must be nonnegative")
        return self

    @property
    def empty(self) -> bool:
        return not self.values and not self.orderings

    def _within(self, expected: float, observed: float) -> bool:
        if self.mode == "absolute":
            return abs(observed - expected) <= self.tolerance + 1e-12
        return expected / self.tolerance <= observed <= expected * self.tolerance

    def compare(self, observed: Mapping[str, float]) -> Dict[str, Any]:
        """Per-key deviations and ordering checks; NaN or missing observations fail."""
        cells = []
        for key in sorted(self.values):
            expected = self.values[key]
            value = observed.get(key)
            finite = value is not None and bool(np.isfinite(value))
            cells.append({
                "key": key,
                "expected": expected,
                "observed": float(value) if finite else None,
                "deviation": float(value - expected) if finite else None,
                "within": finite and self._within(expected, float(value)),
            })
        orderings = []
        for keys in self.orderings:
            values = [observed.get(key) for key in keys]
            known = all(v is not None and np.isfinite(v) for v in values)
            holds = known and all(a < b for a, b in zip(values, values[1:]))
            orderings.append({"keys": list(keys), "observed": [None if not known else float(v) for v in values],
                              "holds": holds})
        return {
            "mode": self.mode,
            "tolerance": self.tolerance,
            "cells": cells,
            "orderings": orderings,
            "all_within": all(c["within"] for c in cells),
            "orderings_hold": all(o["holds"] for o in orderings),
        }


class ExperimentConfig(_Section):
    """One experiment file, every default materialized after validation."""

    name: str = "experiment"
    growth: GrowthSection
    kernel: KernelSection = Field(default_factory=KernelSection)
    dispersal: DispersalSection = Field(default_factory=DispersalSection)
    lattice: LatticeConfig = Field(default_factory=LatticeConfig)
    profile: ReleaseProfile = Field(default_factory=lambda: ReleaseProfile(amplitude=1.0, half_width=10.0))
    horizon: int = Field(default=200, ge=0)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    stability: StabilitySection = Field(default_factory=StabilitySection)
    waves: WavesSection = Field(default_factory=WavesSection)
    outbreak: OutbreakSection = Field(default_factory=OutbreakSection)
    optimize: OptimizeSection = Field(default_factory=OptimizeSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    seed: int = 0

    def params(self) -> GrowthParams:
        return self.growth.params()

    def discrete_kernel(self, spec: KernelSpec | None = None) -> DiscreteKernel:
        return discretize(
            spec or self.kernel.spec(),
            self.lattice.dimension,
            truncation_radius=self.kernel.truncation_radius,
            grid_size=min(self.lattice.extent),
        )

    def dispersal_setting(self) -> DispersalSetting:
        return self.dispersal.setting(self.lattice)

    def wave_kernels(self) -> List[KernelSpec]:
        """Explicit kernel list, else ``waves.families`` matched to ``matched_sd``, else the main kernel."""
        if self.waves.kernels:
            return list(self.waves.kernels)
        if self.waves.matched_sd is not None:
            matched = matched_specs(self.waves.matched_sd)
            return [matched[family] for family in self.waves.families]
        return [self.kernel.spec()]

    def wave_setup(self) -> WaveSetup:
        return WaveSetup(
            params=self.params(),
            delta=self.dispersal_setting().require_constant(),
            extent=self.lattice.extent[0],
            spacing=self.lattice.spacing,
            generations=self.horizon,
            amplitude=self.waves.amplitude,
            half_width=self.waves.half_width,
            level=self.waves.level,
            tail_fraction=self.waves.tail_fraction,
        )

    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(
            kernel=self.kernel.spec(),
            truncation_radius=self.kernel.truncation_radius,
            params=self.params(),
            delta=self.dispersal_setting().require_constant(),
            shape=self.profile.shape,
            half_widths=self.optimize.half_widths,
            a_lo=self.optimize.a_lo,
            a_hi=self.optimize.a_hi,
            beta=self.optimize.beta,
            extent=self.lattice.extent[0],
            spacing=self.lattice.spacing,
            generations=self.horizon,
            ks=self.outbreak.ks,
            tolerance=self.optimize.tolerance,
            step=self.optimize.step,
            predicate=self.optimize.predicate,
            outbreak_method=self.outbreak.method,
            outbreak_horizon=self.outbreak.horizon,
            epsilon_fix=self.outbreak.epsilon_fix,
            prominence=self.outbreak.prominence,
            min_separation=self.outbreak.min_separation,
        )

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """SHA-256 of the resolved config as canonical JSON."""
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _apply_env_overrides(raw: Dict[str, Any], environ: Mapping[str, str]) -> Dict[str, Any]:
    """WLDE__LATTICE__SPACING=0.5 sets raw['lattice']['spacing'] = 0.5."""
    for key in sorted(environ):
        if not key.startswith(ENV_OVERRIDE_PREFIX):
            continue
        path = [part.lower() for part in key[len(ENV_OVERRIDE_PREFIX):].split("__") if part]
        if not path:
            continue
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {key} descends into a scalar", field=".".join(path))
        node[path[-1]] = yaml.safe_load(environ[key])
        logger.debug("override %s from %s", ".".join(path), key)
    return raw


def _resolve_path(path: str | os.PathLike) -> Path:
    candidate = Path(path)
    if candidate.exists():
        return candidate
    shipped = Path(CONFIG_DIR) / f"{candidate.stem}.yaml"
    if candidate.suffix in ("", ".yaml") and shipped.exists():
        return shipped
    raise ConfigError(f"config file not found: {path}")


def validate_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate an already-parsed mapping, turning pydantic errors into ConfigError."""
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigError(first["msg"], field=field or None) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str | os.PathLike, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """
    Load an experiment YAML file.

    Args:
        path: File path, or the name of a config shipped in ``configs/``
        environ: Source of ``WLDE__SECTION__KEY`` overrides (default: os.environ)

    Returns:
        Validated ExperimentConfig
    """
    resolved = _resolve_path(path)
    try:
        raw = yaml.safe_load(resolved.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{resolved}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{resolved}: top level must be a mapping")
    raw = _apply_env_overrides(raw, os.environ if environ is None else environ)

    delta_file = raw.get("dispersal", {}).get("delta_file") if isinstance(raw.get("dispersal"), dict) else None
    if delta_file and not Path(delta_file).is_absolute():
        raw["dispersal"]["delta_file"] = str(resolved.parent / delta_file)

    config = validate_config(raw)
    logger.info("loaded config %s (%s) from %s", config.name, config.config_hash()[:12], resolved)
    return config
