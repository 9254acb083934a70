"""Non-uniform state space for the approximating Markov chain.

Points are clustered around an anchor ``s`` (usually spot) by a sinh map,
with independent stretch factors below and above the anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    l: float
    s: float
    u: float
    N: int
    g_l: float
    g_u: float

    def __post_init__(self) -> None:
        if not (self.l < self.s < self.u):
            raise GridError(f"need l < s < u, got l={self.l}, s={self.s}, u={self.u}")
        if self.l <= 0:
            raise GridError(f"lower bound must be positive, got l={self.l}")
        if self.N < 4 or self.N % 2:
            raise GridError(f"N must be an even integer >= 4, got N={self.N}")
        if self.g_l <= 0 or self.g_u <= 0:
            raise GridError("granularities g_l, g_u must be positive")


@dataclass(frozen=True)
class StateGrid:
    states: np.ndarray
    spot_index: int
    spec: GridSpec | None = None

    def __post_init__(self) -> None:
        self.states.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def spot(self) -> float:
        return float(self.states[self.spot_index])

    def index_of(self, x: float) -> int:
        """Index of the grid point closest to ``x``."""
        return int(np.argmin(np.abs(self.states - x)))


def build_grid(spec: GridSpec) -> StateGrid:
    l, s, u, N = spec.l, spec.s, spec.u, spec.N
    n_lo = math.ceil(N / 2)
    n_hi = N - (n_lo + 1)
    c1 = math.asinh((l - s) / spec.g_l)
    c2 = math.asinh((u - s) / spec.g_u)

    lo = s + spec.g_l * np.sinh(c1 * (1.0 - np.arange(n_lo + 1) / n_lo))
    hi = s + spec.g_u * np.sinh(c2 * np.arange(1, n_hi + 1) / n_hi)
    x = np.concatenate([lo, hi])
    # pin the three defining points so round-off in sinh(asinh(.)) cannot move them
    x[0], x[n_lo], x[-1] = l, s, u

    gaps = np.diff(x)
    scale = np.maximum(np.abs(x[1:]), np.abs(x[:-1]))
    bad = np.nonzero(gaps <= 1e-12 * scale)[0]
    if bad.size:
        i = int(bad[0])
        raise GridError(
            f"grid points {i} and {i + 1} collide or are out of order "
            f"(x={float(x[i])!r}, {float(x[i + 1])!r}); increase g_l/g_u or reduce N"
        )
    return StateGrid(states=x, spot_index=n_lo, spec=spec)
