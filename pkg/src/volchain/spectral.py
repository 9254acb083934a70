"""Joint law of (X_T, I_T) from the twisted generators, and variance payoffs.

With K = 2C+1 and p_j = 2 pi j / K,

    P(X_T = y, I_T = d alpha | X_0 = x) = (1/K) sum_j exp(i p_j d) exp(T L_j)(x, y),

where L_j = L + diag(sum_d (exp(-i p_j d) - 1) lambda_d(x)).  L_{K-j} is the
complex conjugate of L_j, so only j = 0..C are diagonalized.  Each spectrum is
computed once and reused for every maturity.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .generator import GeneratorMatrix
from .grid import StateGrid
from .linalg import COND_CAP, Spectrum, eigen_spectrum, twisted_shift
from .matching import IntensityProfile
from .moments import Corridor

IMAG_TOL = 1e-7
NEG_TOL = 1e-9
MASS_TOL = 1e-7
MARGINAL_TOL = 1e-8
BOUNDARY_TOL = 1e-12

PAYOFF_KINDS = ("variance_swap", "volatility_swap", "variance_call")


class SpectralError(RuntimeError):
    pass


class BoundaryError(SpectralError):
    pass


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    maturity: float
    theta: float = 1.0
    corridor: Corridor = field(default_factory=Corridor)
    rate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}; expected one of {PAYOFF_KINDS}")
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")
        if self.kind == "variance_call" and self.theta <= 0:
            raise ValueError("variance call needs theta > 0")

    @property
    def label(self) -> str:
        prefix = "" if self.corridor.is_full else "corridor_"
        if self.kind == "variance_call":
            return f"{prefix}variance_call(theta={self.theta:g})"
        return prefix + self.kind


@dataclass(frozen=True)
class JointLaw:
    masses: np.ndarray
    maturity: float
    alpha: float
    x0: int
    states: np.ndarray
    corridor: Corridor = field(default_factory=Corridor)

    @property
    def lattice(self) -> np.ndarray:
        return self.alpha * np.arange(self.masses.shape[1])

    def variance_marginal(self) -> np.ndarray:
        return self.masses.sum(axis=0)

    def state_marginal(self) -> np.ndarray:
        return self.masses.sum(axis=1)

    def to_csv(self, path: str | Path, joint: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if joint:
                w.writerow(["state", "variance", "probability"])
                for y, row in zip(self.states, self.masses):
                    for v, p in zip(self.lattice, row):
                        w.writerow([repr(float(y)), repr(float(v)), repr(float(p))])
            else:
                w.writerow(["variance", "probability"])
                for v, p in zip(self.lattice, self.variance_marginal()):
                    w.writerow([repr(float(v)), repr(float(p))])


def _payoff_values(probs: np.ndarray, lattice: np.ndarray, payoff: PayoffSpec) -> np.ndarray:
    """Price(s) from distribution(s) of I_T on the lattice; ``probs`` is (..., K)."""
    v = lattice / payoff.maturity
    disc = math.exp(-payoff.rate * payoff.maturity)
    if payoff.kind == "variance_swap":
        out = np.sqrt(probs @ v)
    elif payoff.kind == "volatility_swap":
        out = probs @ np.sqrt(v)
    else:
        k0 = np.sqrt(probs @ v)
        strike = (payoff.theta * k0) ** 2
        out = (probs * np.maximum(v - np.expand_dims(strike, -1), 0.0)).sum(axis=-1)
    return disc * out


def price(law: JointLaw, payoff: PayoffSpec) -> float:
    if not math.isclose(law.maturity, payoff.maturity, rel_tol=1e-12):
        raise ValueError(f"law maturity {law.maturity} differs from payoff maturity {payoff.maturity}")
    if law.corridor != payoff.corridor:
        raise ValueError("payoff corridor differs from the corridor the law was built for")
    return float(_payoff_values(law.variance_marginal(), law.lattice, payoff))


class SpectralPricer:
    """Caches the spectra of L_0..L_C for one (generator, profile) pair."""

    def __init__(
        self,
        gen: GeneratorMatrix,
        profile: IntensityProfile,
        threads: int = 1,
        cond_cap: float = COND_CAP,
        boundary_tol: float = BOUNDARY_TOL,
    ):
        if profile.n_states != gen.size:
            raise ValueError("profile and generator are defined on grids of different size")
        self.gen = gen
        self.profile = profile
        self.threads = max(1, int(threads))
        self.cond_cap = cond_cap
        self.boundary_tol = boundary_tol
        self.K = 2 * profile.C + 1
        self._table = profile.jump_table()
        self._spectra: list[Spectrum] | None = None
        self._semigroups: dict[float, np.ndarray] = {}

    def twisted(self, j: int) -> np.ndarray:
        p = 2 * np.pi * j / self.K
        if j == 0:
            return self.gen.entries.astype(complex)
        return self.gen.entries + np.diag(twisted_shift(self._table, p))

    @property
    def spectra(self) -> list[Spectrum]:
        if self._spectra is None:
            def one(j):
                return eigen_spectrum(self.twisted(j), self.cond_cap)
            js = range(self.profile.C + 1)
            if self.threads > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    self._spectra = list(ex.map(one, js))
            else:
                self._spectra = [one(j) for j in js]
        return self._spectra

    def _half_terms(self, T: float, x0: int | None) -> np.ndarray:
        """exp(T L_j) applied for j = 0..C: row x0 (shape C+1, N) or row sums (C+1, N)."""
        out = np.empty((self.profile.C + 1, self.gen.size), dtype=complex)
        ones = np.ones(self.gen.size)
        for j, sp in enumerate(self.spectra):
            if sp.usable:
                e = np.exp(sp.w * T)
                if x0 is None:
                    out[j] = sp.V @ (e * (sp.Vinv @ ones))
                else:
                    out[j] = (sp.V[x0] * e) @ sp.Vinv
            else:
                E = scipy.linalg.expm(T * self.twisted(j))
                out[j] = E.sum(axis=1) if x0 is None else E[x0]
        return out

    def _invert(self, half: np.ndarray) -> np.ndarray:
        """Assemble all K frequencies by conjugate symmetry and invert the DFT over d."""
        full = np.empty((self.K,) + half.shape[1:], dtype=complex)
        full[: self.profile.C + 1] = half
        full[self.profile.C + 1:] = np.conj(half[1:][::-1])
        out = np.fft.ifft(full, axis=0)
        imag = np.abs(out.imag).max()
        if imag > IMAG_TOL:
            raise SpectralError(f"imaginary residue {imag:.2e} in the joint law; profile is inconsistent")
        return out.real

    def _semigroup_row(self, T: float, x0: int) -> np.ndarray:
        if T not in self._semigroups:
            self._semigroups[T] = scipy.linalg.expm(T * self.gen.entries)
        return self._semigroups[T][x0]

    def _guard(self, var_law: np.ndarray, T: float, where: str) -> None:
        top = var_law[..., 2 * self.profile.C - self.profile.max_jump:].sum(axis=-1)
        worst = float(np.max(top))
        if worst > self.boundary_tol:
            raise BoundaryError(
                f"{where}: mass {worst:.2e} at T={T:g} sits within the largest jump of the "
                f"lattice top (2C={2 * self.profile.C}); increase C or alpha "
                f"(guard threshold {self.boundary_tol:g})"
            )

    def joint_law(self, x0: int, T: float) -> JointLaw:
        n = self.gen.size
        if T == 0:
            masses = np.zeros((n, self.K))
            masses[x0, 0] = 1.0
        else:
            masses = self._invert(self._half_terms(T, x0)).T
            if masses.min() < -NEG_TOL:
                raise SpectralError(f"joint law has a negative mass {masses.min():.2e}")
            masses = np.where(masses < 0, 0.0, masses)
            total = masses.sum()
            if abs(total - 1.0) > MASS_TOL:
                raise SpectralError(f"joint law total mass {total:.10f} differs from 1")
            gap = np.abs(masses.sum(axis=1) - self._semigroup_row(T, x0)).max()
            if gap > MARGINAL_TOL:
                raise SpectralError(f"state marginal deviates from exp(TL) by {gap:.2e}")
            self._guard(masses.sum(axis=0), T, f"initial state {x0}")
        return JointLaw(masses, T, self.profile.alpha, x0, self.gen.states, self.profile.corridor)

    def variance_laws(self, T: float) -> np.ndarray:
        """Law of I_T for every initial state, shape (N, K)."""
        q = self._invert(self._half_terms(T, None)).T
        if q.min() < -NEG_TOL:
            raise SpectralError(f"variance law has a negative mass {q.min():.2e}")
        q = np.where(q < 0, 0.0, q)
        self._guard(q[self.profile.region] if self.profile.region is not None else q, T, "feasibility region")
        return q

    def price(self, payoff: PayoffSpec, x0: int) -> float:
        return price(self.joint_law(x0, payoff.maturity), payoff)

    def price_per_state(self, payoff: PayoffSpec) -> np.ndarray:
        if payoff.corridor != self.profile.corridor:
            raise ValueError("payoff corridor differs from the corridor the profile was built for")
        q = self.variance_laws(payoff.maturity)
        lattice = self.profile.alpha * np.arange(self.K)
        return _payoff_values(q, lattice, payoff)


def joint_law(gen: GeneratorMatrix, profile: IntensityProfile, x0: int, T: float, **kw) -> JointLaw:
    return SpectralPricer(gen, profile, **kw).joint_law(x0, T)


def price_per_state(gen: GeneratorMatrix, profile: IntensityProfile, payoff: PayoffSpec, **kw) -> np.ndarray:
    return SpectralPricer(gen, profile, **kw).price_per_state(payoff)


def greeks(values, grid: StateGrid | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Delta and gamma on a non-uniform grid from three-point stencils.

    Interior points use central stencils; the end points use the one-sided
    stencil through their two nearest neighbours.  All are exact for quadratics.
    """
    x = grid.states if isinstance(grid, StateGrid) else np.asarray(grid, float)
    p = np.asarray(values, float)
    if len(x) < 3:
        raise ValueError("greeks need at least three grid points")

    def stencil(i0, i1, i2, at):
        # derivative weights of the quadratic through x[i0], x[i1], x[i2], evaluated at x[at]
        a, b, c = x[i0], x[i1], x[i2]
        t = x[at]
        wd = np.array([
            ((t - b) + (t - c)) / ((a - b) * (a - c)),
            ((t - a) + (t - c)) / ((b - a) * (b - c)),
            ((t - a) + (t - b)) / ((c - a) * (c - b)),
        ])
        wg = np.array([2 / ((a - b) * (a - c)), 2 / ((b - a) * (b - c)), 2 / ((c - a) * (c - b))])
        vals = p[[i0, i1, i2]]
        return wd @ vals, wg @ vals

    n = len(x)
    delta = np.empty(n)
    gamma = np.empty(n)
    for i in range(n):
        trio = (0, 1, 2) if i == 0 else (n - 3, n - 2, n - 1) if i == n - 1 else (i - 1, i, i + 1)
        delta[i], gamma[i] = stencil(*trio, at=i)
    return delta, gamma
