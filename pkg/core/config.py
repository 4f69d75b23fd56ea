"""
Scenario configuration: JSON files validated by pydantic.

Every block forbids unknown keys, so a typo in a parameter name is a load
error instead of a silently ignored physics change. Defaults reproduce the
space-homogeneous test (alpha = 1, D = 0.2, lambda = 0.1, M = 4, N = 10^4,
dt = 10^-2, T = 50, 81 velocity nodes on [-3, 3], initial Normal(1, 1/4)).
"""

from __future__ import annotations

import json
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError

SCENARIOS = (
    "homogeneous",
    "sweep",
    "convergence-M",
    "convergence-N",
    "convergence-S",
    "inhom-local",
    "inhom-cs",
    "stationary",
)

Scenario = Literal[
    "homogeneous",
    "sweep",
    "convergence-M",
    "convergence-N",
    "convergence-S",
    "inhom-local",
    "inhom-cs",
    "stationary",
]

DEFAULT_AXIS_VALUES = {
    "convergence-M": [1, 2, 4, 8],
    "convergence-N": [100, 1000, 10000],
    "convergence-S": [10, 100, 1000],
}


def _whole_steps(t: float, dt: float) -> bool:
    # same tolerance as particles.step_count
    n = round(t / dt)
    return abs(n * dt - t) <= 1e-9 * max(1.0, abs(t))


class Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(Block):
    alpha: float = Field(1.0, ge=0)
    lambda_alpha: float = Field(0.0, ge=0, le=1)
    D: float = Field(0.2, ge=0)
    lambda_D: float = Field(0.1, ge=0, le=1)
    kernel: Literal["homogeneous", "local", "cucker-smale"] = "homogeneous"
    gamma: float = Field(0.1, ge=0)
    H: float = Field(1.0, ge=0)
    lambda_H: float = Field(0.0, ge=0, le=1)
    cell_width: float = Field(0.2, gt=0)


class DiscretizationBlock(Block):
    N: int = Field(10_000, ge=1)
    S: Optional[int] = Field(None, ge=1)
    M: int = Field(4, ge=0, le=40)
    dt: float = Field(0.01, gt=0)
    T: float = Field(50.0, ge=0)
    quad_nodes: Optional[int] = Field(None, ge=1)
    observe_every: int = Field(100, ge=1)
    snapshot_times: List[float] = Field(default_factory=lambda: [0.5, 1.0, 5.0])

    @model_validator(mode="after")
    def _consistent(self):
        if self.S is not None and self.S > self.N:
            raise ValueError(f"S={self.S} exceeds N={self.N}")
        if self.quad_nodes is not None and self.quad_nodes < 2 * (self.M + 1):
            raise ValueError(f"quad_nodes={self.quad_nodes} is below 2(M+1)={2 * (self.M + 1)}")
        if any(t < 0 for t in self.snapshot_times):
            raise ValueError("snapshot times must be non-negative")
        if not _whole_steps(self.T, self.dt):
            raise ValueError(f"T={self.T} is not a whole number of steps dt={self.dt}")
        off = [t for t in self.snapshot_times if t <= self.T and not _whole_steps(t, self.dt)]
        if off:
            raise ValueError(f"snapshot times {off} are not whole numbers of steps dt={self.dt}")
        return self

    @property
    def subsample(self) -> int:
        return self.N if self.S is None else self.S


class GridBlock(Block):
    x_lo: float = -2.0
    x_hi: float = 2.0
    Nx: int = Field(20, ge=1)
    v_lo: float = -3.0
    v_hi: float = 3.0
    Nv: int = Field(40, ge=1)
    periodic: bool = True

    @model_validator(mode="after")
    def _ordered(self):
        if not self.x_hi > self.x_lo:
            raise ValueError(f"x_hi={self.x_hi} must exceed x_lo={self.x_lo}")
        if not self.v_hi > self.v_lo:
            raise ValueError(f"v_hi={self.v_hi} must exceed v_lo={self.v_lo}")
        return self


class InitialBlock(Block):
    mu_x: float = 0.0
    sigma_x: float = Field(0.0, ge=0)
    mu_v: float = 1.0
    sigma_v: float = Field(0.5, gt=0)


class ReferenceBlock(Block):
    Nv: int = Field(81, ge=3)
    v_lo: float = -3.0
    v_hi: float = 3.0
    cfl: float = Field(0.4, gt=0, le=1)
    dt: Optional[float] = Field(None, gt=0)
    energy_every: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.v_hi > self.v_lo:
            raise ValueError(f"v_hi={self.v_hi} must exceed v_lo={self.v_lo}")
        return self


class SweepBlock(Block):
    D_values: List[float] = Field(default_factory=lambda: [k / 10 for k in range(11)], min_length=1)
    refine: bool = False
    refine_points: int = Field(5, ge=2)

    @model_validator(mode="after")
    def _non_negative(self):
        if any(d < 0 for d in self.D_values):
            raise ValueError("diffusion values must be non-negative")
        return self


class ConvergenceBlock(Block):
    values: Optional[List[int]] = None
    replicas: int = Field(10, ge=1)
    reference_M: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _positive(self):
        if self.values is not None and (not self.values or any(v < 1 for v in self.values)):
            raise ValueError("axis values must be a non-empty list of positive integers")
        return self


class OutputBlock(Block):
    directory: Optional[str] = None
    dump_ensemble: bool = False


class ScenarioConfig(Block):
    scenario: Scenario = "homogeneous"
    seed: int = Field(0, ge=0, lt=2**64)
    threads: Optional[int] = Field(None, ge=1)

    model: ModelBlock = Field(default_factory=ModelBlock)
    discretization: DiscretizationBlock = Field(default_factory=DiscretizationBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    reference: ReferenceBlock = Field(default_factory=ReferenceBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    convergence: ConvergenceBlock = Field(default_factory=ConvergenceBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _scenario_rules(self):
        if self.scenario.startswith("convergence-"):
            axis = self.scenario.split("-", 1)[1]
            values = self.axis_values
            if axis == "S" and any(s > self.discretization.N for s in values):
                raise ValueError(f"S-axis values {values} exceed N={self.discretization.N}")
            if axis == "M" and any(m >= self.convergence.reference_M for m in values):
                raise ValueError(f"M-axis values {values} must stay below reference_M={self.convergence.reference_M}")
        return self

    @property
    def axis_values(self) -> List[int]:
        if self.convergence.values is not None:
            return list(self.convergence.values)
        return list(DEFAULT_AXIS_VALUES.get(self.scenario, []))


def _problems(err: ValidationError) -> List[str]:
    out = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        out.append(f"{where}: {msg}")
    return out


def config_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_problems(e)) from None


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """
    Read a scenario file (or start from defaults when `path` is None) and
    apply top-level overrides such as {"seed": 7, "scenario": "sweep"}.
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf8") as fp:
                data = json.load(fp)
        except FileNotFoundError:
            raise ConfigError([f"{path}: file not found"]) from None
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"]) from None

        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a JSON object"])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "out":
            data.setdefault("output", {})
            if isinstance(data["output"], dict):
                data["output"]["directory"] = value
        elif isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value

    return config_from_dict(data)


def echo(cfg: ScenarioConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")
