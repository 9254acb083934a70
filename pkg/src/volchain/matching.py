"""Moment-matched compound-Poisson intensities for the accrued-variance chain.

The variance process I lives on the lattice {0, alpha, ..., 2C alpha} and, while
the asset chain sits at x, jumps by d*alpha at rate lambda_d(x).  Intensities
are chosen so that alpha^j sum_d d^j lambda_d(x) = M_j(x) for j = 1..k:

* k=1: one jump size, lambda_1 = M_1/alpha;
* k=2: lambda_1 for size 1 and a common lambda_n for sizes 2..n;
* k=3: as k=2 plus a common lambda_m for sizes n+1..m.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .generator import GeneratorMatrix
from .moments import Corridor, MomentTable

RESIDUAL_TOL = 1e-9
Interval = tuple[float, float]


class FeasibilityError(ValueError):
    def __init__(self, message: str, report: FeasibilityReport | None = None):
        super().__init__(message)
        self.report = report


def b_sum(j: int, n: int, m: int) -> int:
    """sum_{l=n+1}^{m} l^j."""
    if not (m > n >= 0 and j >= 1):
        raise ValueError(f"b_sum needs m > n >= 0 and j >= 1, got j={j}, n={n}, m={m}")
    return sum(l**j for l in range(n + 1, m + 1))


def _k3_system(n: int, m: int) -> np.ndarray:
    return np.array([[1, b_sum(j, 1, n), b_sum(j, n, m)] for j in (1, 2, 3)], dtype=float)


def max_tx_bound(n: int, m: int) -> float:
    """Largest 4 M1 M3 / M2^2 for which lambda_n can be made positive (k=3)."""
    b1, b2, b3 = (b_sum(j, n, m) for j in (1, 2, 3))
    return (b3 - b1) ** 2 / ((b3 - b2) * (b2 - b1))


# ---------------------------------------------------------------- intervals

def _intersect(a: list[Interval], b: list[Interval]) -> list[Interval]:
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if lo <= hi:
                out.append((lo, hi))
    return sorted(out)


def quadratic_nonneg_set(a: float, b: float, c: float) -> list[Interval]:
    """Subset of alpha > 0 where a alpha^2 + b alpha + c >= 0, as closed intervals."""
    pos = [(0.0, math.inf)]
    if a == 0.0:
        if b == 0.0:
            return pos if c >= 0 else []
        r = -c / b
        if b > 0:
            return [(max(r, 0.0), math.inf)]
        return [(0.0, r)] if r > 0 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return pos if a > 0 else []
    # cancellation-free roots: q/a and c/q
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    r1, r2 = sorted((q / a, c / q if q != 0.0 else 0.0))
    if a > 0:
        return _intersect([(0.0, r1), (r2, math.inf)], pos)
    return _intersect([(r1, r2)], pos)


# ---------------------------------------------------------------- profiles

@dataclass(frozen=True)
class IntensityProfile:
    alpha: float
    C: int
    k: int
    lambda1: np.ndarray
    lambdaN: np.ndarray | None = None
    lambdaM: np.ndarray | None = None
    n: int = 1
    m: int | None = None
    region: np.ndarray | None = None
    corridor: Corridor = field(default_factory=Corridor)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.k == 2 and self.n < 2:
            raise ValueError("k=2 needs n >= 2")
        if self.k == 3 and not (self.m is not None and 1 < self.n < self.m):
            raise ValueError("k=3 needs 1 < n < m")
        if self.max_jump >= 2 * self.C + 1:
            raise ValueError(f"largest jump {self.max_jump} must be below 2C+1={2 * self.C + 1}")
        for arr in (self.lambda1, self.lambdaN, self.lambdaM):
            if arr is not None:
                if np.any(arr < 0):
                    raise ValueError("intensities must be nonnegative")
                arr.setflags(write=False)

    @property
    def max_jump(self) -> int:
        return {1: 1, 2: self.n, 3: self.m}[self.k]

    @property
    def n_states(self) -> int:
        return len(self.lambda1)

    def jump_table(self) -> np.ndarray:
        """N x max_jump array; column d-1 holds lambda_d(x)."""
        t = np.zeros((self.n_states, self.max_jump))
        t[:, 0] = self.lambda1
        if self.k >= 2:
            t[:, 1:self.n] = self.lambdaN[:, None]
        if self.k == 3:
            t[:, self.n:self.m] = self.lambdaM[:, None]
        return t

    def reconstructed_moments(self, order: int | None = None) -> np.ndarray:
        order = order or self.k
        t = self.jump_table()
        d = np.arange(1, t.shape[1] + 1, dtype=float)
        return np.column_stack([self.alpha**j * (t @ d**j) for j in range(1, order + 1)])

    def moment_residual(self, table: MomentTable) -> float:
        """Max relative mismatch of the matched moments over the region."""
        rec = self.reconstructed_moments()
        target = table.values[:, :self.k]
        reg = self.region if self.region is not None else np.ones(self.n_states, bool)
        scale = np.maximum(np.abs(target[reg]), 1e-300)
        return float((np.abs(rec[reg] - target[reg]) / scale).max())


# ---------------------------------------------------------------- regions

def region_mask(states: np.ndarray, bounds: tuple[float, float] | np.ndarray | None) -> np.ndarray:
    if bounds is None:
        return np.ones(len(states), dtype=bool)
    if isinstance(bounds, np.ndarray) and bounds.dtype == bool:
        return bounds.copy()
    lo, hi = bounds
    mask = (states >= lo) & (states <= hi)
    if not mask.any():
        raise ValueError(f"feasibility region [{lo}, {hi}] contains no grid state")
    return mask


def auto_region(gen: GeneratorMatrix, x0: int, horizon: float, threshold: float = 1e-6) -> np.ndarray:
    """Contiguous block of states carrying more than ``threshold`` mass at ``horizon``."""
    from .generator import semigroup

    row = semigroup(gen, horizon)[x0]
    idx = np.nonzero(row > threshold)[0]
    mask = np.zeros(gen.size, dtype=bool)
    mask[min(idx.min(), x0):max(idx.max(), x0) + 1] = True
    return mask


def _extend(values: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Hold each out-of-region state at the value of the nearest in-region state."""
    idx = np.nonzero(region)[0]
    pos = np.searchsorted(idx, np.arange(len(values)))
    left = idx[np.clip(pos - 1, 0, len(idx) - 1)]
    right = idx[np.clip(pos, 0, len(idx) - 1)]
    here = np.arange(len(values))
    nearest = np.where(np.abs(here - left) <= np.abs(right - here), left, right)
    return values[nearest]


# ---------------------------------------------------------------- feasibility

@dataclass(frozen=True)
class FeasibilityReport:
    k: int
    n: int
    m: int | None
    states: np.ndarray
    region: np.ndarray
    ratio: np.ndarray
    admissible: list[Interval]
    failing: np.ndarray
    bound: float | None = None
    coefficients: np.ndarray | None = None
    discriminant: np.ndarray | None = None
    roots_lo: np.ndarray | None = None
    roots_hi: np.ndarray | None = None
    per_state: list[list[Interval]] | None = None

    @property
    def feasible(self) -> bool:
        return bool(self.admissible)

    def admits(self, alpha: float) -> bool:
        return any(lo <= alpha <= hi for lo, hi in self.admissible)

    def ratio_extremes(self) -> tuple[float, float]:
        r = self.ratio[self.region]
        return float(r.min()), float(r.max())

    def choose_alpha(self) -> float:
        """Geometric midpoint of the widest bounded admissible interval."""
        finite = [(lo, hi) for lo, hi in self.admissible if lo > 0 and math.isfinite(hi)]
        if not finite:
            raise FeasibilityError(
                f"no bounded admissible alpha interval for k={self.k}; "
                f"failing states: {np.round(self.states[self.failing], 4).tolist()}",
                self,
            )
        lo, hi = max(finite, key=lambda iv: math.log(iv[1] / iv[0]))
        return math.sqrt(lo * hi)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.k == 2:
                w.writerow(["state", "in_region", "ratio_M2_M1", "alpha_min", "alpha_max"])
                b1, b2 = b_sum(1, 1, self.n), b_sum(2, 1, self.n)
                for x, r, q in zip(self.states, self.region, self.ratio):
                    w.writerow([repr(float(x)), int(r), repr(float(q)), repr(float(q * b1 / b2)), repr(float(q))])
            else:
                head = ["state", "in_region", "ratio_4M1M3_M2sq", "max_tx_bound"]
                for name in ("lambda1", "lambdaN", "lambdaM"):
                    head += [f"{name}_disc", f"{name}_root_lo", f"{name}_root_hi"]
                w.writerow(head)
                for i, x in enumerate(self.states):
                    row = [repr(float(x)), int(self.region[i]), repr(float(self.ratio[i])), repr(self.bound)]
                    for q in range(3):
                        row += [repr(float(v)) for v in (self.discriminant[i, q], self.roots_lo[i, q], self.roots_hi[i, q])]
                    w.writerow(row)
            w.writerow([])
            w.writerow(["admissible_lo", "admissible_hi"])
            for lo, hi in self.admissible:
                w.writerow([repr(lo), repr(hi)])


def feasibility_k2(table: MomentTable, n: int, region=None) -> FeasibilityReport:
    if n < 2:
        raise ValueError("k=2 needs n >= 2")
    x = table.generator.states
    reg = region_mask(x, region)
    M1, M2 = table.M(1), table.M(2)
    if np.any(M1[reg] <= 0):
        bad = x[reg & (M1 <= 0)]
        raise ValueError(f"M1 vanishes at states {bad.tolist()} inside the region")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(M1 > 0, M2 / M1, np.nan)
    b1, b2 = b_sum(1, 1, n), b_sum(2, 1, n)
    lo = ratio * b1 / b2
    per_state = [[(float(a), float(b))] for a, b in zip(lo, ratio)]
    lo_g, hi_g = float(np.nanmax(lo[reg])), float(np.nanmin(ratio[reg]))
    admissible = [(lo_g, hi_g)] if lo_g <= hi_g else []
    failing = np.zeros(len(x), dtype=bool)
    if not admissible:
        failing[np.nonzero(reg)[0][np.nanargmax(lo[reg])]] = True
        failing[np.nonzero(reg)[0][np.nanargmin(ratio[reg])]] = True
    return FeasibilityReport(2, n, None, x, reg, ratio, admissible, failing, per_state=per_state)


def feasibility_k3(table: MomentTable, n: int, m: int, region=None) -> FeasibilityReport:
    """Admissible alpha from the three per-state quadratics lambda_i(alpha) alpha^3 >= 0."""
    if not 1 < n < m:
        raise ValueError("k=3 needs 1 < n < m")
    x = table.generator.states
    reg = region_mask(x, region)
    M = table.values[:, :3]
    Ainv = np.linalg.inv(_k3_system(n, m))
    # lambda_i * alpha^3 = Ainv[i,0] M1 alpha^2 + Ainv[i,1] M2 alpha + Ainv[i,2] M3
    coef = Ainv[None, :, :] * M[:, None, :]
    a, b, c = coef[..., 0], coef[..., 1], coef[..., 2]
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = -0.5 * (b + np.copysign(sq, b))
        r1 = q / a
        r2 = np.where(q != 0, c / q, 0.0)
    roots_lo, roots_hi = np.fmin(r1, r2), np.fmax(r1, r2)

    per_state = []
    for i in range(len(x)):
        s = [(0.0, math.inf)]
        for q in range(3):
            s = _intersect(s, quadratic_nonneg_set(float(a[i, q]), float(b[i, q]), float(c[i, q])))
        per_state.append(s)
    admissible = [(0.0, math.inf)]
    for i in np.nonzero(reg)[0]:
        admissible = _intersect(admissible, per_state[i])
    failing = reg & np.array([not s for s in per_state])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 4 * M[:, 0] * M[:, 2] / M[:, 1] ** 2
    return FeasibilityReport(
        3, n, m, x, reg, ratio, admissible, failing,
        bound=max_tx_bound(n, m), coefficients=coef, discriminant=disc,
        roots_lo=roots_lo, roots_hi=roots_hi, per_state=per_state,
    )


# ---------------------------------------------------------------- matching

def _finish(
    sols: list[np.ndarray], table: MomentTable, alpha: float, reg: np.ndarray, report_fn
) -> list[np.ndarray]:
    scale = table.M(1) / alpha
    out = []
    for lam in sols:
        tiny = np.abs(lam) <= 1e-12 * np.maximum(scale, 1e-300)
        lam = np.where(tiny, 0.0, lam)
        bad = reg & (lam < 0)
        if bad.any():
            report = report_fn()
            worst = int(np.argmin(np.where(reg, lam, np.inf)))
            raise FeasibilityError(
                f"alpha={alpha:g} gives negative intensity {lam[worst]:.4g} at state "
                f"x={table.generator.states[worst]:.6g} inside the feasibility region "
                f"({int(bad.sum())} states affected); admissible alpha: {report.admissible}",
                report,
            )
        out.append(_extend(lam, reg))
    return out


def match_k1(table: MomentTable, alpha: float, C: int, region=None) -> IntensityProfile:
    reg = region_mask(table.generator.states, region)
    if np.any(table.M(1) < 0):
        raise ValueError("M1 must be nonnegative")
    lam1 = _extend(table.M(1) / alpha, reg)
    return IntensityProfile(alpha, C, 1, lam1, region=reg, corridor=table.corridor)


def match_k2(table: MomentTable, alpha: float, n: int, C: int, region=None) -> IntensityProfile:
    if n < 2:
        raise ValueError("k=2 needs n >= 2")
    reg = region_mask(table.generator.states, region)
    M1, M2 = table.M(1), table.M(2)
    b1, b2 = b_sum(1, 1, n), b_sum(2, 1, n)
    den = alpha**2 * (b2 - b1)
    lam1 = (alpha * M1 * b2 - M2 * b1) / den
    lamn = (M2 - alpha * M1) / den
    lam1, lamn = _finish([lam1, lamn], table, alpha, reg, lambda: feasibility_k2(table, n, reg))
    return IntensityProfile(alpha, C, 2, lam1, lamn, n=n, region=reg, corridor=table.corridor)


def match_k3(table: MomentTable, alpha: float, n: int, m: int, C: int, region=None) -> IntensityProfile:
    if not 1 < n < m:
        raise ValueError("m must exceed n and n must exceed 1")
    x = table.generator.states
    reg = region_mask(x, region)
    M = table.values[:, :3]
    if M.shape[1] < 3:
        raise ValueError("k=3 needs a moment table of order >= 3")

    bound = max_tx_bound(n, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 4 * M[:, 0] * M[:, 2] / M[:, 1] ** 2
    over = reg & (ratio > bound)
    if over.any():
        worst = int(np.argmax(np.where(reg, ratio, -np.inf)))
        raise FeasibilityError(
            f"4*M1*M3/M2^2 = {ratio[worst]:.4g} at x={x[worst]:.6g} exceeds the bound "
            f"{bound:.4g} for (n={n}, m={m}): lambda_n cannot be positive",
            feasibility_k3(table, n, m, reg),
        )

    A = _k3_system(n, m)
    rhs = M / alpha ** np.arange(1, 4)
    sol = scipy.linalg.solve(A, rhs.T).T
    resid = np.abs(sol @ A.T - rhs) / np.maximum(np.abs(rhs), 1e-300)
    if np.any(resid[reg] > RESIDUAL_TOL):
        raise FeasibilityError(f"k=3 solve residual {resid[reg].max():.2e} above tolerance")
    lam1, lamn, lamm = _finish(
        [sol[:, 0], sol[:, 1], sol[:, 2]], table, alpha, reg,
        lambda: feasibility_k3(table, n, m, reg),
    )
    return IntensityProfile(alpha, C, 3, lam1, lamn, lamm, n=n, m=m, region=reg, corridor=table.corridor)


def match(table: MomentTable, k: int, alpha: float, C: int, n: int | None = None,
          m: int | None = None, region=None) -> IntensityProfile:
    if k == 1:
        return match_k1(table, alpha, C, region)
    if k == 2:
        return match_k2(table, alpha, n, C, region)
    if k == 3:
        return match_k3(table, alpha, n, m, C, region)
    raise ValueError(f"moment order k must be 1, 2 or 3, got {k}")


# ---------------------------------------------------------------- lattice size

def expected_accrued_variance(gen: GeneratorMatrix, rate: np.ndarray, horizon: float) -> np.ndarray:
    """E[int_0^T rate(X_s) ds | X_0 = x] for every x, exactly.

    Uses exp(T [[L, rate], [0, 0]]), whose top-right column is the integral.
    """
    n = gen.size
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = gen.entries
    aug[:n, n] = rate
    return scipy.linalg.expm(horizon * aug)[:n, n]


@dataclass(frozen=True)
class LatticeCheck:
    ok: bool
    span: float
    required: float
    expected_variance: float
    multiple: float


def check_lattice_size(alpha: float, C: int, expected_variance: float, multiple: float = 3.0) -> LatticeCheck:
    span = 2 * C * alpha
    required = multiple * expected_variance
    return LatticeCheck(span >= required, span, required, expected_variance, multiple)
