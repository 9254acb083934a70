"""Run configuration: a YAML file validated with pydantic."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .grid import GridSpec
from .models import Model
from .moments import Corridor

__all__ = ["RunConfig", "load_config", "bundled_configs", "ConfigError", "ValidationError"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Strict):
    kind: Literal["cev", "vg", "subordinated_cev"]
    spot: float = Field(100.0, gt=0)
    rate: float = 0.0
    sigma0: float = Field(gt=0)
    beta: float = 1.0
    theta: float = 0.0
    mu: float = Field(1.0, gt=0)
    nu: float = Field(0.05, gt=0)

    def build(self) -> Model:
        return Model(self.kind, self.spot, self.rate, self.sigma0, self.beta, self.theta, self.mu, self.nu)


class GridBlock(_Strict):
    l: float = Field(gt=0)
    s: float
    u: float
    N: int
    g_l: float = Field(gt=0)
    g_u: float = Field(gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.l < self.s < self.u:
            raise ValueError("grid needs l < s < u")
        if self.N < 4 or self.N % 2:
            raise ValueError("grid N must be an even integer >= 4")
        return self

    def build(self) -> GridSpec:
        return GridSpec(self.l, self.s, self.u, self.N, self.g_l, self.g_u)


class CorridorBlock(_Strict):
    lower: float = Field(0.0, ge=0)
    upper: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"corridor needs lower < upper, got [{self.lower}, {self.upper}]")
        return self

    def build(self) -> Corridor:
        return Corridor(self.lower, math.inf if self.upper is None else self.upper)


class MatchingBlock(_Strict):
    k: Literal[1, 2, 3]
    alpha: Union[float, Literal["auto"]] = "auto"
    C: int = Field(gt=0)
    n: Optional[int] = None
    m: Optional[int] = None
    region: Union[tuple[float, float], Literal["auto"]] = "auto"

    @field_validator("alpha")
    @classmethod
    def _alpha(cls, v):
        if v != "auto" and v <= 0:
            raise ValueError("alpha must be positive or 'auto'")
        return v

    @model_validator(mode="after")
    def _orders(self):
        if self.k == 2 and (self.n is None or self.n < 2):
            raise ValueError("k=2 needs an integer n >= 2")
        if self.k == 3:
            if self.n is None or self.m is None:
                raise ValueError("k=3 needs both n and m")
            if self.m <= self.n:
                raise ValueError("m must exceed n")
            if self.n < 2:
                raise ValueError("k=3 needs n >= 2")
        if self.region != "auto" and not self.region[0] < self.region[1]:
            raise ValueError("region needs lower < upper")
        jump = {1: 1, 2: self.n or 1, 3: self.m or 1}[self.k]
        if jump >= 2 * self.C + 1:
            raise ValueError(f"largest jump {jump} must be below 2C+1={2 * self.C + 1}")
        return self


class GuardBlock(_Strict):
    boundary_tol: float = Field(1e-12, gt=0)
    c_multiple: float = Field(3.0, gt=0)
    region_mass: float = Field(1e-6, gt=0)


class PayoffBlock(_Strict):
    kind: Literal["variance_swap", "volatility_swap", "variance_call"]
    theta: float = Field(1.0, gt=0)
    discount: bool = False


class VanillaBlock(_Strict):
    strikes: list[float] = Field(min_length=1)
    forward_strikes: bool = True


class McBlock(_Strict):
    paths: int = Field(100_000, ge=1)
    steps_per_year: int = Field(252, ge=1)
    seed: int = 0
    batch_size: int = Field(10_000, ge=1)


class RunConfig(_Strict):
    name: str = "run"
    description: str = ""
    tolerance_bps: Optional[float] = None
    model: ModelBlock
    grid: GridBlock
    corridor: Optional[CorridorBlock] = None
    maturities: list[float] = Field(min_length=1)
    matching: list[MatchingBlock] = Field(min_length=1)
    payoffs: list[PayoffBlock] = Field(min_length=1)
    guards: GuardBlock = GuardBlock()
    vanilla: Optional[VanillaBlock] = None
    mc: Optional[McBlock] = None
    output_dir: str = "out"
    threads: int = Field(1, ge=1)

    @field_validator("maturities")
    @classmethod
    def _maturities(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("maturities must be positive")
        return sorted(set(v))

    @model_validator(mode="after")
    def _spot_on_grid(self):
        if not math.isclose(self.grid.s, self.model.spot):
            raise ValueError("grid anchor s must equal the model spot")
        return self

    @property
    def corridor_spec(self) -> Corridor:
        return self.corridor.build() if self.corridor else Corridor()


def bundled_configs() -> dict[str, Path]:
    root = resources.files("volchain") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def load_config(source: str | Path) -> RunConfig:
    """Load from a path, or from the name of a bundled config."""
    path = Path(source)
    if not path.exists():
        known = bundled_configs()
        if str(source) not in known:
            raise ConfigError(f"no config file {source!r} and no bundled config of that name "
                              f"(bundled: {', '.join(sorted(known))})")
        path = known[str(source)]
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return RunConfig.model_validate(data)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    data = cfg.model_dump(mode="json", exclude_none=True)
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
