"""Run configuration: strict JSON with a versioned schema string."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .collision import GasState, VelocityGrid
from .slab import SlabGeometry

SCHEMA = "knudsen-layer/1"
THREADS_ENV = "KNUDSEN_LAYER_THREADS"


class _Strict(BaseModel):
    model_config = ConfigDict(strict=True, extra="forbid", frozen=True)


class GasConfig(_Strict):
    rho0: float = 1.0
    u_tau0: float = 0.0
    T0: float = 1.0
    T_M: float = 0.75
    zeta: float = 1.0 / 6.0
    beta: float = 4.0

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> GasState:
        return GasState(**self.model_dump())


class GeometryConfig(_Strict):
    epsilon: float = 0.04
    a_exp: float = math.log(8.0) / math.log(25.0)
    d: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self, d: float | None = None) -> SlabGeometry:
        if d is not None:
            return SlabGeometry.from_depth(self.epsilon, d) if self.epsilon > 0 \
                else SlabGeometry(0.0, self.a_exp, d=d)
        return SlabGeometry(self.epsilon, self.a_exp, self.d)


class GridConfig(_Strict):
    n_velocity: int = 96
    v_max: float = 8.0
    n_eta: int = 200
    eta_ratio: float = 1.08
    n_omega: int = 64
    refined_velocity: int = 128

    @model_validator(mode="after")
    def _check(self):
        VelocityGrid.uniform(self.n_velocity, self.v_max)
        if self.n_eta < 3:
            raise ValueError("n_eta must be at least 3")
        if not self.eta_ratio >= 1.0:
            raise ValueError("eta_ratio must be >= 1")
        return self


class Tolerances(_Strict):
    solver: float = 1e-10
    ramp: float = 1e-7
    picard: float = 1e-9
    solvability: float = 1e-8
    residual: float = 1e-6
    b1: float = 1e-8
    flux: float = 1e-6
    lam_step: float = 0.1
    lam_min_step: float = 1e-3
    max_iter: int = 500


class ScenarioConfig(_Strict):
    family: Literal["bump", "exponential", "zero"] = "bump"
    amplitude: float = 1.0
    sigma0: float = 1.0
    boundary: Literal["none", "odd_flux"] = "none"
    project: bool = False
    lam: float = 1.0
    n_damp: Optional[float] = None
    method: Literal["krylov", "picard"] = "krylov"
    continuation: bool = True
    d_sweep: list[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0])


class SlabTraceConfig(_Strict):
    eta: float = 0.5
    v1: float = 0.3
    v2: float = 1.2
    t: float = 0.0
    horizon: float = 50.0
    n_samples: int = 201


class DiskTraceConfig(_Strict):
    r: float = 0.8
    phi: float = 0.3
    vbar1: float = -1.0
    vbar2: float = 0.5
    t: float = 10.0
    horizon: float = 5.0
    n_samples: int = 201


class ChecksConfig(_Strict):
    n_random: int = 100
    kernel_beta: float = 4.0
    kernel_zeta: Optional[float] = None
    kernel_speeds: int = 33
    inject_noise: float = 0.0


class OutputConfig(_Strict):
    directory: str = "out"
    binary: bool = True


class RunConfig(_Strict):
    schema_version: Literal["knudsen-layer/1"] = Field(SCHEMA, alias="schema")
    gas: GasConfig = Field(default_factory=GasConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    grids: GridConfig = Field(default_factory=GridConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    trace: SlabTraceConfig = Field(default_factory=SlabTraceConfig)
    disk: DiskTraceConfig = Field(default_factory=DiskTraceConfig)
    checks: ChecksConfig = Field(default_factory=ChecksConfig)
    outputs: OutputConfig = Field(default_factory=OutputConfig)

    model_config = ConfigDict(strict=True, extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _check(self):
        geom = self.geometry.build()
        if geom.epsilon ** 2 * geom.d >= 1:
            raise ValueError("d eps^2 must be below 1")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(by_alias=True, mode="json"), indent=2,
                          sort_keys=False)


def parse_config(text: str) -> RunConfig:
    return RunConfig.model_validate_json(text)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def default_config() -> RunConfig:
    return RunConfig()
