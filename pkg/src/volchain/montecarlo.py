"""Monte Carlo oracle for realized and corridor-realized variance.

Paths of S are simulated on a daily grid: Euler for the diffusion, and for
time-changed models gamma business-time increments followed by Euler
sub-steps no longer than the calendar step.  Realized variance is the sum of
squared (clamped) daily log returns.

Paths are split into fixed-size batches, each with its own child seed from
``numpy.random.SeedSequence``, so results do not depend on the thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .generator import BernsteinSpec, DiffusionSpec, GeneratorMatrix
from .moments import Corridor, squared_log_moves
from .spectral import PayoffSpec

FULL = Corridor()


@dataclass(frozen=True)
class McConfig:
    diffusion: DiffusionSpec
    bernstein: BernsteinSpec | None = None
    paths: int = 100_000
    steps_per_year: int = 252
    seed: int = 0
    s0: float = 100.0
    correction_rate: float = 0.0
    floor_frac: float = 1e-4
    batch_size: int = 10_000
    threads: int = 1

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def n_steps(self, horizon: float) -> int:
        return max(1, int(round(horizon * self.steps_per_year)))


@dataclass(frozen=True)
class PathSet:
    times: np.ndarray
    values: np.ndarray  # (steps + 1, paths)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    paths: int

    def __post_init__(self) -> None:
        if not self.std_error >= 0:
            raise ValueError("standard error must be nonnegative")


# ---------------------------------------------------------------- path engines

def _euler_step(S, dt, spec: DiffusionSpec, z, floor):
    nxt = S + spec.gamma * S * dt + spec.local_vol(S) * S * np.sqrt(dt) * z
    return np.where((S <= floor) | (nxt <= floor), floor, nxt)


def _cev_paths(cfg: McConfig, horizon: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_steps(horizon)
    h = horizon / n
    floor = cfg.floor_frac * cfg.s0
    X = np.empty((n + 1, n_paths))
    X[0] = cfg.s0
    for i in range(n):
        X[i + 1] = _euler_step(X[i], h, cfg.diffusion, rng.standard_normal(n_paths), floor)
    return X


def gamma_increments(bern: BernsteinSpec, dt: float, size, rng: np.random.Generator) -> np.ndarray:
    """Increments over dt with mean mu*dt and variance nu*dt."""
    return rng.gamma(dt * bern.mu**2 / bern.nu, bern.nu / bern.mu, size=size)


def _subordinated_paths(cfg: McConfig, horizon: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_steps(horizon)
    h = horizon / n
    floor = cfg.floor_frac * cfg.s0
    X = np.empty((n + 1, n_paths))
    X[0] = cfg.s0
    for i in range(n):
        dT = gamma_increments(cfg.bernstein, h, n_paths, rng)
        k = np.maximum(np.ceil(dT / h).astype(np.int64), 1)
        dt = dT / k
        Y = X[i].copy()
        active = np.arange(n_paths)
        for s in range(int(k.max())):
            if s:
                active = active[k[active] > s]
            Y[active] = _euler_step(Y[active], dt[active], cfg.diffusion, rng.standard_normal(len(active)), floor)
        X[i + 1] = Y
    return X


def _simulate(cfg: McConfig, horizon: float, n_paths: int, rng: np.random.Generator) -> PathSet:
    if cfg.bernstein is None:
        X = _cev_paths(cfg, horizon, n_paths, rng)
    else:
        X = _subordinated_paths(cfg, horizon, n_paths, rng)
    times = np.linspace(0.0, horizon, X.shape[0])
    if cfg.correction_rate:
        X = X * np.exp(cfg.correction_rate * times)[:, None]
    return PathSet(times, X)


def simulate_cev(cfg: McConfig, horizon: float, rng: np.random.Generator | None = None) -> PathSet:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    plain = McConfig(**{**cfg.__dict__, "bernstein": None})
    return _simulate(plain, horizon, cfg.paths, rng)


def simulate_gamma_subordinator(cfg: McConfig, horizon: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Daily business-time increments, shape (steps, paths)."""
    if cfg.bernstein is None:
        raise ValueError("config has no subordinator")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n = cfg.n_steps(horizon)
    return gamma_increments(cfg.bernstein, horizon / n, (n, cfg.paths), rng)


def simulate_subordinated(cfg: McConfig, horizon: float, rng: np.random.Generator | None = None) -> PathSet:
    if cfg.bernstein is None:
        raise ValueError("config has no subordinator")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return _simulate(cfg, horizon, cfg.paths, rng)


# ---------------------------------------------------------------- realized variance

def variance_increments(values: np.ndarray, corridor: Corridor = FULL) -> np.ndarray:
    """Per-step corridor contributions along axis 0 of ``values``."""
    a, b = values[:-1], values[1:]
    ina, inb = corridor.contains(a), corridor.contains(b)
    weight = (ina | inb).astype(float)
    lo, hi = corridor.lower, corridor.upper
    ca, cb = np.clip(a, lo, hi), np.clip(b, lo, hi)
    return weight * np.log(cb / ca) ** 2


def realized_variance(path, corridor: Corridor = FULL):
    """Sum over monitoring steps of the corridor-weighted squared clamped log return.

    Accepts one path (1-D) or a (steps + 1, paths) array.
    """
    values = np.asarray(path, float)
    if values.shape[0] < 2:
        raise ValueError("a path needs at least two monitoring points")
    rv = variance_increments(values, corridor).sum(axis=0)
    return float(rv) if np.ndim(rv) == 0 else rv


# ---------------------------------------------------------------- estimation

def _batches(cfg: McConfig) -> list[tuple[int, np.random.SeedSequence]]:
    n_batches = math.ceil(cfg.paths / cfg.batch_size)
    children = np.random.SeedSequence(cfg.seed).spawn(n_batches)
    sizes = [cfg.batch_size] * (n_batches - 1) + [cfg.paths - cfg.batch_size * (n_batches - 1)]
    return list(zip(sizes, children))


def _run_batches(cfg: McConfig, fn) -> list:
    jobs = _batches(cfg)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(lambda job: fn(job[0], np.random.default_rng(job[1])), jobs))
    return [fn(size, np.random.default_rng(seq)) for size, seq in jobs]


@dataclass(frozen=True)
class McSamples:
    """Per-path accrued variance and terminal price at each maturity."""

    variance: dict[float, np.ndarray]
    terminal: dict[float, np.ndarray]
    corridor: Corridor = field(default_factory=Corridor)

    def to_csv(self, path: str | Path, maturity: float) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "realized_variance", "terminal_price"])
            for i, (v, s) in enumerate(zip(self.variance[maturity], self.terminal[maturity])):
                w.writerow([i, repr(float(v)), repr(float(s))])


def simulate_samples(cfg: McConfig, maturities: Sequence[float], corridor: Corridor = FULL) -> McSamples:
    maturities = sorted(set(float(t) for t in maturities))
    horizon = maturities[-1]
    n = cfg.n_steps(horizon)
    checkpoints = [min(n, max(1, int(round(t * n / horizon)))) for t in maturities]

    def batch(size, rng):
        ps = _simulate(cfg, horizon, size, rng)
        cum = np.cumsum(variance_increments(ps.values, corridor), axis=0)
        return ({t: cum[c - 1] for t, c in zip(maturities, checkpoints)},
                {t: ps.values[c] for t, c in zip(maturities, checkpoints)})

    parts = _run_batches(cfg, batch)
    var = {t: np.concatenate([p[0][t] for p in parts]) for t in maturities}
    term = {t: np.concatenate([p[1][t] for p in parts]) for t in maturities}
    return McSamples(var, term, corridor)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    mean = math.fsum(x) / len(x)
    if len(x) < 2:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2) / (len(x) - 1)
    return mean, math.sqrt(var / len(x))


def estimate_from_samples(samples: np.ndarray, payoff: PayoffSpec) -> McEstimate:
    """Price and standard error of a variance payoff from accrued-variance samples."""
    v = np.asarray(samples, float) / payoff.maturity
    disc = math.exp(-payoff.rate * payoff.maturity)
    if payoff.kind == "variance_swap":
        m, se = _mean_se(v)
        k0 = math.sqrt(m)
        # delta method for sqrt of the mean
        return McEstimate(disc * k0, disc * se / (2 * k0) if k0 > 0 else 0.0, len(v))
    if payoff.kind == "volatility_swap":
        m, se = _mean_se(np.sqrt(v))
        return McEstimate(disc * m, disc * se, len(v))
    k0 = math.sqrt(math.fsum(v) / len(v))
    m, se = _mean_se(np.maximum(v - (payoff.theta * k0) ** 2, 0.0))
    return McEstimate(disc * m, disc * se, len(v))


def estimate(cfg: McConfig, payoffs: Sequence[PayoffSpec], corridor: Corridor = FULL) -> list[McEstimate]:
    for p in payoffs:
        if p.corridor != corridor:
            raise ValueError("all payoffs must share the simulation corridor")
    samples = simulate_samples(cfg, [p.maturity for p in payoffs], corridor)
    return [estimate_from_samples(samples.variance[float(p.maturity)], p) for p in payoffs]


def estimate_vanilla(samples: McSamples, strike: float, maturity: float, rate: float) -> McEstimate:
    """Discounted European call from simulated terminal prices."""
    s = samples.terminal[float(maturity)]
    m, se = _mean_se(np.maximum(s - strike, 0.0))
    d = math.exp(-rate * maturity)
    return McEstimate(d * m, d * se, len(s))


# ---------------------------------------------------------------- chain oracle

def simulate_chain_variance(
    gen: GeneratorMatrix,
    x0: int,
    maturities: Sequence[float],
    paths: int,
    seed: int = 0,
    corridor: Corridor = FULL,
    batch_size: int = 50_000,
) -> dict[float, np.ndarray]:
    """Exact simulation of the chain's continuous-time corridor-realized variance.

    Every jump x -> y adds the squared clamped log move, except jumps over the
    whole corridor which add nothing.  No time discretization is involved.
    """
    maturities = sorted(set(float(t) for t in maturities))
    L = gen.entries
    q = -np.diag(L)
    jump = np.where(np.eye(gen.size, dtype=bool), 0.0, L)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(jump, axis=1) / q[:, None]
    cum[q == 0] = 1.0
    cost = squared_log_moves(gen.states, corridor)
    n_batches = math.ceil(paths / batch_size)
    out = {t: [] for t in maturities}
    for b, seq in enumerate(np.random.SeedSequence(seed).spawn(n_batches)):
        rng = np.random.default_rng(seq)
        size = min(batch_size, paths - b * batch_size)
        state = np.full(size, x0)
        clock = np.zeros(size)
        acc = np.zeros(size)
        for T in maturities:
            alive = np.nonzero(q[state] > 0)[0]
            while alive.size:
                wait = rng.exponential(1.0, alive.size) / q[state[alive]]
                due = clock[alive] + wait <= T
                alive = alive[due]
                clock[alive] += wait[due]
                u = rng.random(alive.size)
                nxt = (cum[state[alive]] < u[:, None]).sum(axis=1)
                nxt = np.minimum(nxt, gen.size - 1)
                acc[alive] += cost[state[alive], nxt]
                state[alive] = nxt
                alive = alive[q[state[alive]] > 0]
            # holding times are memoryless, so the next leg restarts its clock at T
            clock[:] = T
            out[T].append(acc.copy())
    return {t: np.concatenate(v) for t, v in out.items()}
