"""Model descriptions shared by the chain builder and the Monte Carlo oracle.

Three families are supported:

* ``cev``: diffusion with sigma(s) = sigma0 (s/S0)^(beta-1) and drift gamma = r;
* ``vg``: constant-volatility diffusion with drift theta + sigma0^2/2, time
  changed by a gamma subordinator (variance gamma);
* ``subordinated_cev``: CEV diffusion time changed by a gamma subordinator,
  with the drift chosen so that the time-changed asset grows at rate r.

For ``vg`` the time-changed asset does not grow at rate r; prices use the
deterministic factor exp((r - g) t), with g the chain's growth rate, so the
asset forward is S0 exp(r t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .generator import (
    BernsteinSpec,
    DiffusionSpec,
    GeneratorMatrix,
    build_diffusion_generator,
    chain_growth_rate,
    risk_neutral_drift,
    subordinate,
)
from .grid import StateGrid

MODEL_KINDS = ("cev", "vg", "subordinated_cev")


@dataclass(frozen=True)
class Model:
    kind: str
    spot: float
    rate: float
    sigma0: float
    beta: float = 1.0
    theta: float = 0.0
    mu: float = 1.0
    nu: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")

    @property
    def bernstein(self) -> BernsteinSpec | None:
        if self.kind == "cev":
            return None
        return BernsteinSpec(self.mu, self.nu)

    @property
    def diffusion(self) -> DiffusionSpec:
        if self.kind == "cev":
            return DiffusionSpec(self.sigma0, gamma=self.rate, beta=self.beta, s0=self.spot)
        if self.kind == "vg":
            return DiffusionSpec(self.sigma0, gamma=self.theta + 0.5 * self.sigma0**2, beta=1.0, s0=self.spot)
        gamma = risk_neutral_drift(self.bernstein, self.rate)
        return DiffusionSpec(self.sigma0, gamma=gamma, beta=self.beta, s0=self.spot)

    @property
    def growth_rate(self) -> float:
        return chain_growth_rate(self.diffusion.gamma, self.bernstein)

    @property
    def correction_rate(self) -> float:
        """Rate c with S_t = exp(c t) Y_t, Y the (time-changed) diffusion; zero unless vg."""
        c = self.rate - self.growth_rate
        return 0.0 if abs(c) < 1e-15 else c

    def forward_scale(self, t: float) -> float:
        return math.exp(self.correction_rate * t)

    def generator(self, grid: StateGrid) -> GeneratorMatrix:
        return subordinate(build_diffusion_generator(grid, self.diffusion), self.bernstein)
