"""Instantaneous conditional moments of (corridor-)realized variance of the chain."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .generator import GeneratorMatrix


@dataclass(frozen=True)
class Corridor:
    """Closed price interval [lower, upper]; lower=0 and upper=inf mean no barrier."""

    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self) -> None:
        if self.lower < 0:
            raise ValueError(f"corridor lower barrier must be >= 0, got {self.lower}")
        if not self.lower < self.upper:
            raise ValueError(f"corridor needs lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def has_lower(self) -> bool:
        return self.lower > 0

    @property
    def has_upper(self) -> bool:
        return math.isfinite(self.upper)

    @property
    def is_full(self) -> bool:
        return not (self.has_lower or self.has_upper)

    def contains(self, x):
        return (np.asarray(x) >= self.lower) & (np.asarray(x) <= self.upper)


FULL = Corridor()


def clamp(x, corridor: Corridor):
    """max(lower, min(x, upper))."""
    out = np.maximum(corridor.lower, np.minimum(x, corridor.upper))
    return float(out) if np.ndim(out) == 0 else out


def crossing_mask(x: np.ndarray, corridor: Corridor) -> np.ndarray:
    """Pairs (x, y) lying strictly on opposite sides of the corridor."""
    if not (corridor.has_lower and corridor.has_upper):
        return np.zeros((len(x), len(x)), dtype=bool)
    below = x < corridor.lower
    above = x > corridor.upper
    return np.outer(below, above) | np.outer(above, below)


def squared_log_moves(x: np.ndarray, corridor: Corridor) -> np.ndarray:
    """Matrix of squared clamped log moves with jumps over the corridor zeroed."""
    xb = clamp(np.asarray(x, float), corridor)
    lr2 = np.log(xb[None, :] / xb[:, None]) ** 2
    cross = crossing_mask(x, corridor)
    if cross.any():
        # a jump over the whole corridor has clamped move log(U/L); it accrues nothing
        lr2 = np.where(cross, 0.0, lr2)
    return lr2


@dataclass(frozen=True)
class MomentTable:
    values: np.ndarray
    corridor: Corridor
    generator: GeneratorMatrix

    @property
    def order(self) -> int:
        return self.values.shape[1]

    def M(self, j: int) -> np.ndarray:
        return self.values[:, j - 1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state"] + [f"M{j}" for j in range(1, self.order + 1)])
            for x, row in zip(self.generator.states, self.values):
                w.writerow([repr(float(x))] + [repr(float(v)) for v in row])


def moments(gen: GeneratorMatrix, corridor: Corridor = FULL, k: int = 3) -> MomentTable:
    """M_j(x) = sum_y L(x, y) [log(ybar/xbar)^(2j) - log(U/L)^(2j) 1_A(x, y)], j = 1..k."""
    if k < 1:
        raise ValueError("moment order k must be >= 1")
    L = np.array(gen.entries)
    np.fill_diagonal(L, 0.0)
    lr2 = squared_log_moves(gen.states, corridor)
    vals = np.column_stack([(L * lr2**j).sum(axis=1) for j in range(1, k + 1)])
    vals.setflags(write=False)
    return MomentTable(vals, corridor, gen)
