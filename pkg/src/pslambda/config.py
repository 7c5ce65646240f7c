"""Strict experiment configuration (JSON or TOML) and builders for the
objects it describes.

Unknown keys are rejected everywhere; validation failures are reported as a
list of ``{"path", "key", "message"}`` entries.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt, ValidationError, \
    model_validator

from .errors import ConfigError
from .flow import FlowControls
from .maps import LinearMap, SectionMap
from .systems import (PiecewiseSystem, SmoothField, SwitchingFunction, constant_field, coordinate_surface,
                      duffing_field, harmonic_field, linear_field, polynomial_field, polynomial_surface)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "validation_errors",
    "build_system",
    "build_extension",
    "build_map",
    "build_controls",
]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- fields and surfaces -------------------------------------------------------

Term = tuple[float, list[int]]


class ConstantSpec(Strict):
    kind: Literal["constant"]
    value: list[float]
    label: str = ""


class LinearSpec(Strict):
    kind: Literal["linear"]
    matrix: list[list[float]]
    label: str = ""


class DuffingSpec(Strict):
    kind: Literal["duffing"]
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 0.0
    label: str = ""


class PolynomialSpec(Strict):
    kind: Literal["polynomial"]
    terms: list[list[Term]]
    label: str = ""


class HarmonicSpec(Strict):
    """Uniform forcing ``amplitude * cos(2 pi t / T + phase)``; ``T`` comes from the extension block."""

    kind: Literal["harmonic"]
    amplitude: list[float]
    phase: float = 0.0
    label: str = ""


FieldSpec = Annotated[Union[ConstantSpec, LinearSpec, DuffingSpec, PolynomialSpec], Field(discriminator="kind")]
PerturbationSpec = Annotated[Union[HarmonicSpec, ConstantSpec, LinearSpec, PolynomialSpec],
                             Field(discriminator="kind")]


class CoordinateSurfaceSpec(Strict):
    kind: Literal["coordinate"]
    axis: int = Field(ge=0)
    value: float = 0.0
    label: str = ""


class PolynomialSurfaceSpec(Strict):
    kind: Literal["polynomial"]
    terms: list[Term]
    label: str = ""


SurfaceSpec = Annotated[Union[CoordinateSurfaceSpec, PolynomialSurfaceSpec], Field(discriminator="kind")]


class BuiltinParams(Strict):
    c: float = 0.7
    beta: float = 1.5
    nu: float = -0.5


class SystemBlock(Strict):
    """Either a built-in benchmark or explicit components, surfaces and a sign table."""

    builtin: Optional[Literal["example1", "tier-a-split", "tier-a-smooth", "tier-b"]] = None
    params: BuiltinParams = BuiltinParams()
    dim: Optional[PositiveInt] = None
    components: list[FieldSpec] = []
    surfaces: list[SurfaceSpec] = []
    regions: dict[str, int] = {}
    label: str = ""

    @model_validator(mode="after")
    def _one_source(self):
        if self.builtin is None and not self.components:
            raise ValueError("give either 'builtin' or a non-empty 'components' list")
        if self.builtin is not None and (self.components or self.surfaces or self.regions):
            raise ValueError("'builtin' cannot be combined with components/surfaces/regions")
        if self.builtin is None and not self.regions:
            raise ValueError("explicit systems need a 'regions' sign table")
        return self


class MapBlock(Strict):
    """Synthetic affine map ``x -> A x + offset`` used in place of a Poincare map."""

    kind: Literal["linear"] = "linear"
    matrix: list[list[float]]
    offset: Optional[list[float]] = None
    surfaces: list[SurfaceSpec] = []


class ExtensionBlock(Strict):
    period: PositiveFloat
    epsilon: list[NonNegativeFloat] = [0.0]
    perturbation: Optional[PerturbationSpec] = None

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.epsilon:
            raise ValueError("epsilon list must not be empty")
        return self


class ControlsBlock(Strict):
    rtol: PositiveFloat = 1e-10
    atol: PositiveFloat = 1e-12
    event_tol: PositiveFloat = 1e-12
    tangency_rel: PositiveFloat = 1e-6
    max_events: PositiveInt = 10_000
    max_norm: PositiveFloat = 1e8
    membership_tol: PositiveFloat = 1e-10
    grad_tol: PositiveFloat = 1e-8


# -- experiments -------------------------------------------------------------

Point = list[float]
Pair = tuple[PositiveFloat, PositiveFloat]


class SimulateSpec(Strict):
    kind: Literal["simulate"]
    x0: Point
    t0: float = 0.0
    duration: float
    points_per_arc: PositiveInt = 50


class SectionSpec(Strict):
    phase: float = 0.0
    guess: Point = [0.0, 0.0]
    newton_tol: PositiveFloat = 1e-10


class PoincareSpec(SectionSpec):
    kind: Literal["poincare"]
    orbit_of: list[Point] = []
    iterates: int = Field(0, ge=0)


class ManifoldSpec(SectionSpec):
    kind: Literal["manifold"]
    branch: Literal["unstable", "stable"] = "unstable"
    side: Literal[1, -1] = 1
    radius: PositiveFloat = 0.1
    steps: int = Field(2, ge=0)
    h_max: PositiveFloat = 0.02
    angle_max: PositiveFloat = 0.05


class IntersectSpec(SectionSpec):
    kind: Literal["intersect"]
    side: Literal[1, -1] = 1
    radius: PositiveFloat = 0.1
    unstable_steps: int = Field(2, ge=0)
    stable_steps: int = Field(3, ge=0)
    clearance: PositiveFloat = 1e-4
    angle_threshold: PositiveFloat = 1e-3


class SegmentSpec(Strict):
    center: Point
    direction: Point
    radius: PositiveFloat
    nodes: int = Field(21, ge=2)


class WindowSpec(Strict):
    """Target disk cut from the unstable atlas: nodes of curve ``curve`` with ``lo < x[axis] < hi``."""

    curve: int = Field(ge=0)
    axis: int = Field(0, ge=0)
    lo: float
    hi: float


class ConvergenceSpec(Strict):
    schedule: list[int] = list(range(10))
    side: Literal[1, -1] = 1
    radius: PositiveFloat = 0.1
    unstable_steps: int = Field(2, ge=0)
    stable_steps: int = Field(3, ge=0)
    q_guess: Optional[Point] = None
    clearance: PositiveFloat = 1e-4
    angle_threshold: PositiveFloat = 1e-3
    delta: Optional[SegmentSpec] = None
    targets: list[Union[WindowSpec, SegmentSpec]] = []
    m: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _schedule(self):
        if not self.schedule or min(self.schedule) < 0:
            raise ValueError("schedule must be a non-empty list of non-negative integers")
        if not self.targets:
            raise ValueError("at least one target disk is required")
        return self


class LambdaVerifySpec(SectionSpec):
    kind: Literal["lambda-verify"]
    box_V: Pair = (0.2, 0.03)
    box_V1: Pair = (0.005, 0.005)
    chart_radius: PositiveFloat = 0.3
    samples: int = Field(11, ge=2)
    eta: PositiveFloat = 1e-2
    traces: PositiveInt = 100
    iterates: int = Field(20, ge=1)
    convergence: Optional[ConvergenceSpec] = None


class ConjugacySpec(Strict):
    kind: Literal["conjugacy"]
    pairs: list[tuple[float, float]]
    samples: PositiveInt = 100
    box: tuple[Point, Point] = ([-0.5, -0.3], [0.5, 0.3])


class LambdaSetSpec(Strict):
    kind: Literal["lambda-set"]
    depth: int = Field(ge=0)
    box: tuple[Point, Point]
    resolution: tuple[PositiveInt, PositiveInt] = (201, 201)
    tol: NonNegativeFloat = 0.0
    phase: float = 0.0
    duration: Optional[float] = None


ExperimentSpec = Annotated[Union[SimulateSpec, PoincareSpec, ManifoldSpec, IntersectSpec, LambdaVerifySpec,
                                 ConjugacySpec, LambdaSetSpec], Field(discriminator="kind")]


class OutputBlock(Strict):
    dir: str = "out"
    prefix: str = ""


class ExperimentConfig(Strict):
    system: Optional[SystemBlock] = None
    map: Optional[MapBlock] = None
    extension: Optional[ExtensionBlock] = None
    experiment: ExperimentSpec
    controls: ControlsBlock = ControlsBlock()
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _consistent(self):
        kind = self.experiment.kind
        if self.system is None and self.map is None:
            raise ValueError("either 'system' or 'map' is required")
        if self.map is not None and kind not in ("lambda-verify", "lambda-set"):
            raise ValueError(f"a synthetic 'map' only supports lambda-verify and lambda-set, not {kind}")
        needs_ext = kind in ("poincare", "manifold", "intersect", "conjugacy")
        if kind == "lambda-verify" and self.map is None:
            needs_ext = True
        if needs_ext and self.extension is None:
            raise ValueError(f"experiment {kind} needs an 'extension' block")
        if kind == "lambda-set" and self.map is None and self.extension is None:
            if self.experiment.duration is None:
                raise ValueError("lambda-set on an autonomous system needs 'duration' (time-tau map)")
        return self

    @property
    def epsilons(self) -> list[float]:
        return list(self.extension.epsilon) if self.extension is not None else [0.0]


# -- parsing -------------------------------------------------------------

def validation_errors(exc: ValidationError) -> list[dict]:
    """Flatten pydantic errors into ``{"path", "key", "message"}`` records."""
    out = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"]]
        out.append({"path": ".".join(loc) or "<root>", "key": loc[-1] if loc else None,
                    "message": err["msg"]})
    return out


def parse_config(data: dict, source: str = "<dict>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        errs = validation_errors(exc)
        summary = "; ".join(f"{e['path']}: {e['message']}" for e in errs)
        raise ConfigError(f"invalid configuration {source}: {summary}", errors=errs, source=source) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", source=str(path)) from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", source=str(path),
                          errors=[{"path": "<root>", "key": None, "message": str(exc)}]) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object", source=str(path))
    return parse_config(data, str(path))


# -- builders -------------------------------------------------------------

def _field(fs, dim: int | None, period: float | None = None) -> SmoothField:
    if fs.kind == "constant":
        return constant_field(fs.value, label=fs.label or "constant")
    if fs.kind == "linear":
        return linear_field(fs.matrix, label=fs.label or "linear")
    if fs.kind == "duffing":
        return duffing_field(fs.alpha, fs.beta, fs.delta, label=fs.label or "duffing")
    if fs.kind == "polynomial":
        return polynomial_field([[(c, tuple(e)) for c, e in comp] for comp in fs.terms], dim=dim,
                                label=fs.label or "polynomial")
    if fs.kind == "harmonic":
        if period is None:
            raise ConfigError("harmonic perturbation needs the extension period")
        return harmonic_field(fs.amplitude, period, fs.phase, label=fs.label or "harmonic")
    raise ConfigError(f"unknown field kind {fs.kind}")


def _surface(fs, dim: int, index: int) -> SwitchingFunction:
    if fs.kind == "coordinate":
        if fs.axis >= dim:
            raise ConfigError(f"surface {index}: axis {fs.axis} out of range for dimension {dim}",
                              errors=[{"path": f"surfaces.{index}.axis", "key": "axis",
                                       "message": "axis out of range"}])
        return coordinate_surface(fs.axis, fs.value, dim, index=index, label=fs.label)
    return polynomial_surface([(c, tuple(e)) for c, e in fs.terms], dim, index=index, label=fs.label)


def build_system(block: SystemBlock) -> PiecewiseSystem:
    from .benchmarks import example1_system, tier_a_systems, tier_b
    if block.builtin == "example1":
        return example1_system()
    if block.builtin in ("tier-a-split", "tier-a-smooth"):
        split, smooth = tier_a_systems(block.params.c)
        return split if block.builtin == "tier-a-split" else smooth
    if block.builtin == "tier-b":
        p = block.params
        return tier_b(p.c, p.beta, p.nu).system
    comps = [_field(c, block.dim) for c in block.components]
    dim = block.dim or comps[0].dim
    surfs = [_surface(s, dim, i) for i, s in enumerate(block.surfaces)]
    try:
        return PiecewiseSystem(comps, surfs, dict(block.regions), label=block.label)
    except Exception as exc:
        raise ConfigError(f"system block: {exc}",
                          errors=[{"path": "system", "key": None, "message": str(exc)}]) from None


def build_extension(cfg: ExperimentConfig, epsilon: float):
    from .poincare import ExtendedSystem
    ext = cfg.extension
    system = build_system(cfg.system)
    pert = None if ext.perturbation is None else _field(ext.perturbation, system.dim, ext.period)
    return ExtendedSystem(system, pert, epsilon, ext.period)


def build_map(block: MapBlock) -> SectionMap:
    A = np.array(block.matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("map.matrix must be square",
                          errors=[{"path": "map.matrix", "key": "matrix", "message": "not square"}])
    dim = A.shape[0]
    surfs = [_surface(s, dim, i) for i, s in enumerate(block.surfaces)]
    return LinearMap(A, block.offset, surfs)


def build_controls(block: ControlsBlock) -> FlowControls:
    return FlowControls(**block.model_dump())
