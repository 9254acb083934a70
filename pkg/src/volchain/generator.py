"""Generators of the approximating chain, their semigroups and vanilla prices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .grid import StateGrid
from .linalg import COND_CAP, eigen_spectrum, expm

ROW_SUM_TOL = 1e-10
CLIP_TOL = 1e-10


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorMatrix:
    entries: np.ndarray
    grid: StateGrid

    def __post_init__(self) -> None:
        L = np.asarray(self.entries, dtype=float)
        n = self.grid.size
        if L.shape != (n, n):
            raise GeneratorError(f"generator shape {L.shape} does not match grid size {n}")
        scale = np.maximum(1.0, np.abs(np.diag(L)))
        if np.any(np.abs(L.sum(axis=1)) > ROW_SUM_TOL * scale):
            raise GeneratorError("generator rows must sum to zero")
        off = L - np.diag(np.diag(L))
        if off.min() < 0:
            raise GeneratorError(f"negative off-diagonal intensity {off.min():.3e}")
        L.setflags(write=False)
        object.__setattr__(self, "entries", L)

    @property
    def states(self) -> np.ndarray:
        return self.grid.states

    @property
    def size(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class DiffusionSpec:
    """dS = gamma S dt + sigma(S/s0) S dW with sigma(y) = sigma0 * y**(beta - 1)."""

    sigma0: float
    gamma: float
    beta: float = 1.0
    s0: float = 100.0

    def __post_init__(self) -> None:
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")

    def local_vol(self, x):
        return self.sigma0 * (np.asarray(x, float) / self.s0) ** (self.beta - 1.0)


@dataclass(frozen=True)
class BernsteinSpec:
    """Gamma subordinator with mean rate mu and variance rate nu."""

    mu: float = 1.0
    nu: float = 0.05

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.nu <= 0:
            raise ValueError("gamma subordinator needs mu > 0 and nu > 0")

    def phi(self, lam):
        """Laplace exponent: E[exp(-lam T_t)] = exp(-t phi(lam))."""
        return self.mu**2 / self.nu * np.log1p(lam * self.nu / self.mu)

    @property
    def domain_lower(self) -> float:
        return -self.mu / self.nu


def _with_diagonal(off: np.ndarray) -> np.ndarray:
    L = off.copy()
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def build_diffusion_generator(grid: StateGrid, spec: DiffusionSpec) -> GeneratorMatrix:
    """Tridiagonal generator matching drift and variance of each increment.

    Interior rows solve a*(x- - x) + b*(x+ - x) = gamma x and
    a*(x- - x)^2 + b*(x+ - x)^2 = sigma^2 x^2.  Boundary rows keep only the
    drift equation with their single neighbour; when that would need a
    negative rate the row is absorbing.
    """
    x = grid.states
    n = len(x)
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    xi = x[1:-1]
    var = (spec.local_vol(xi) * xi) ** 2
    drift = spec.gamma * xi
    up = (var + drift * hm) / (hp * (hp + hm))
    down = (var - drift * hp) / (hm * (hp + hm))

    bad = np.nonzero((up < 0) | (down < 0))[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise GeneratorError(
            f"negative intensity at state x[{i}]={x[i]:.6g}: drift dominates the "
            "local variance for this spacing; refine the grid near this state"
        )

    off = np.zeros((n, n))
    rows = np.arange(1, n - 1)
    off[rows, rows - 1] = down
    off[rows, rows + 1] = up
    if spec.gamma > 0:
        off[0, 1] = spec.gamma * x[0] / (x[1] - x[0])
    elif spec.gamma < 0:
        off[-1, -2] = -spec.gamma * x[-1] / (x[-1] - x[-2])
    return GeneratorMatrix(_with_diagonal(off), grid)


def subordinate(
    gen: GeneratorMatrix,
    bern: BernsteinSpec | None,
    cond_cap: float = COND_CAP,
    clip_tol: float = CLIP_TOL,
) -> GeneratorMatrix:
    """Generator of the chain time-changed by the subordinator, -U phi(-Lambda) U^{-1}.

    ``bern=None`` stands for deterministic time and returns ``gen`` itself.
    Off-diagonal round-off below ``clip_tol`` relative to the largest rate is
    set to zero; anything more negative is an error.
    """
    if bern is None:
        return gen
    spec = eigen_spectrum(gen.entries, cond_cap)
    if not spec.usable:
        raise GeneratorError(
            f"generator eigenbasis is ill-conditioned (cond={spec.condition:.3e}); "
            "cannot subordinate"
        )
    arg = 1.0 - spec.w * bern.nu / bern.mu
    outside = np.nonzero(arg.real <= 0)[0]
    if outside.size:
        lam = spec.w[outside[0]]
        raise GeneratorError(
            f"eigenvalue {lam:.6g} maps outside the Bernstein domain (-mu/nu, inf)"
        )
    phi = bern.mu**2 / bern.nu * np.log(arg)
    Lp = -((spec.V * phi) @ spec.Vinv)
    if np.abs(Lp.imag).max() > 1e-8 * max(1.0, np.abs(Lp.real).max()):
        raise GeneratorError("subordinated generator has a non-negligible imaginary part")
    Lp = Lp.real
    off = Lp - np.diag(np.diag(Lp))
    tol = clip_tol * max(1.0, np.abs(off).max())
    if off.min() < -tol:
        i, j = np.unravel_index(np.argmin(off), off.shape)
        raise GeneratorError(
            f"subordination produced a negative rate {off[i, j]:.3e} at ({i}, {j})"
        )
    off = np.where(off < 0, 0.0, off)
    return GeneratorMatrix(_with_diagonal(off), gen.grid)


def risk_neutral_drift(bern: BernsteinSpec, r: float) -> float:
    """Diffusion drift gamma for which the subordinated asset grows at rate r."""
    return bern.mu / bern.nu * (1.0 - math.exp(-r * bern.nu / bern.mu**2))


def chain_growth_rate(gamma: float, bern: BernsteinSpec | None) -> float:
    """Growth rate g of E[S_t] = S_0 exp(g t) for the (possibly time-changed) diffusion."""
    if bern is None:
        return gamma
    return float(-bern.phi(-gamma))


def semigroup(gen: GeneratorMatrix, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return expm(gen.entries, t)


def price_vanilla(
    gen: GeneratorMatrix,
    t: float,
    strike: float,
    rate: float,
    kind: str = "call",
    scale: float = 1.0,
) -> np.ndarray:
    """Discounted vanilla price for every initial state.

    ``scale`` multiplies the terminal state before the payoff; it carries a
    deterministic martingale correction when the chain's drift differs from
    the rate.
    """
    if strike < 0:
        raise ValueError("strike must be nonnegative")
    y = scale * gen.states
    if kind == "call":
        pay = np.maximum(y - strike, 0.0)
    elif kind == "put":
        pay = np.maximum(strike - y, 0.0)
    else:
        raise ValueError(f"unknown option kind {kind!r}")
    return math.exp(-rate * t) * semigroup(gen, t) @ pay


def bs_call(spot: float, strike: float, rate: float, t: float, vol: float) -> float:
    if vol <= 0 or t <= 0:
        return max(spot - strike * math.exp(-rate * t), 0.0)
    sd = vol * math.sqrt(t)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * t) / sd
    return spot * norm.cdf(d1) - strike * math.exp(-rate * t) * norm.cdf(d1 - sd)


def implied_vol(price: float, spot: float, strike: float, rate: float, t: float) -> float:
    lower = max(spot - strike * math.exp(-rate * t), 0.0)
    if not (lower < price < spot):
        raise ValueError(
            f"call price {price!r} outside the open no-arbitrage band ({lower!r}, {spot!r})"
        )
    return brentq(lambda v: bs_call(spot, strike, rate, t, v) - price, 1e-9, 10.0, xtol=1e-12)


def write_generator_csv(gen: GeneratorMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [repr(float(v)) for v in gen.states])
        for x, row in zip(gen.states, gen.entries):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
