"""Dense linear algebra used by the pricer.

Circulant eigenstructure, cached eigendecompositions with a conditioning
check, matrix exponentials, and the partial-circulant lift of the pair
(asset chain, variance chain).  The lift is materialized only for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

if TYPE_CHECKING:
    from .generator import GeneratorMatrix
    from .matching import IntensityProfile

COND_CAP = 1e8
LIFT_SIZE_CAP = 500


class LiftTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class CirculantMatrix:
    """Circulant matrix stored by its defining vector, C[i, j] = c[(i - j) % n]."""

    c: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)

    def materialize(self) -> np.ndarray:
        n = self.n
        i, j = np.indices((n, n))
        return np.asarray(self.c)[(i - j) % n]


def circulant_spectrum(c) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and unit eigenvectors of the circulant with defining vector ``c``.

    Eigenvector r has entries exp(-2*pi*i*r*j/n)/sqrt(n) and does not depend on
    ``c``.  With the (i - j) indexing its eigenvalue is sum_k c_k exp(+2*pi*i*r*k/n);
    the multiset of eigenvalues equals the DFT of ``c``.  Columns of the returned
    matrix are the eigenvectors.
    """
    c = np.asarray(c)
    n = len(c)
    eigvals = n * np.fft.ifft(c)
    r = np.arange(n)
    vectors = np.exp(-2j * np.pi * np.outer(r, r) / n) / np.sqrt(n)
    return eigvals, vectors


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition M = V diag(w) V^{-1}, or ``None`` fields if rejected."""

    w: np.ndarray | None
    V: np.ndarray | None
    Vinv: np.ndarray | None
    condition: float

    @property
    def usable(self) -> bool:
        return self.w is not None


def eigen_spectrum(M: np.ndarray, cond_cap: float = COND_CAP) -> Spectrum:
    try:
        w, V = np.linalg.eig(M)
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError:
        return Spectrum(None, None, None, np.inf)
    cond = float(np.linalg.norm(V, 2) * np.linalg.norm(Vinv, 2))
    if not np.isfinite(cond) or cond > cond_cap:
        return Spectrum(None, None, None, cond)
    return Spectrum(w, V, Vinv, cond)


def expm_from_spectrum(spec: Spectrum, t: float) -> np.ndarray:
    return (spec.V * np.exp(spec.w * t)) @ spec.Vinv


def expm(M: np.ndarray, t: float = 1.0, cond_cap: float = COND_CAP) -> np.ndarray:
    """exp(t M), by eigendecomposition when well conditioned, else Pade."""
    M = np.asarray(M)
    if t == 0:
        return np.eye(M.shape[0], dtype=M.dtype)
    spec = eigen_spectrum(M, cond_cap)
    if spec.usable:
        out = expm_from_spectrum(spec, t)
    else:
        out = scipy.linalg.expm(t * M)
    if np.isrealobj(M):
        out = out.real
    return out


@dataclass(frozen=True)
class PartialCirculantAssembly:
    """Block matrix with blocks B^(i) + A[i, i] I on the diagonal and A[i, j] I off it."""

    outer: np.ndarray
    blocks: tuple[CirculantMatrix, ...]

    @property
    def m(self) -> int:
        return self.outer.shape[0]

    @property
    def n(self) -> int:
        return self.blocks[0].n

    def materialize(self, cap: int = LIFT_SIZE_CAP) -> np.ndarray:
        m, n = self.m, self.n
        if m * n > cap:
            raise LiftTooLarge(f"lift dimension {m * n} exceeds cap {cap}")
        G = np.kron(self.outer, np.eye(n))
        for i, blk in enumerate(self.blocks):
            G[i * n:(i + 1) * n, i * n:(i + 1) * n] += blk.materialize()
        return G


@dataclass(frozen=True)
class TwistedGenerator:
    j: int
    p: float
    matrix: np.ndarray


def assemble_lift(gen: GeneratorMatrix, profile: IntensityProfile) -> PartialCirculantAssembly:
    """Generator of the pair (X, I) on E x {0, ..., 2C}, in partial-circulant form.

    For each state x the variance chain moves from c to (c + d) mod (2C+1) at
    rate lambda_d(x).  With C[i, j] = c[(i - j) % n] the rate of the move
    c -> c + d sits at offset -d, i.e. position n - d of the defining vector.
    """
    table = profile.jump_table()
    K = 2 * profile.C + 1
    if table.shape[1] >= K:
        raise ValueError(f"largest jump {table.shape[1]} must be below 2C+1={K}")
    blocks = []
    for rates in table:
        c = np.zeros(K)
        c[0] = -rates.sum()
        c[K - np.arange(1, len(rates) + 1)] = rates
        blocks.append(CirculantMatrix(c))
    return PartialCirculantAssembly(np.asarray(gen.entries, float), tuple(blocks))


def twisted_shift(table: np.ndarray, p: float) -> np.ndarray:
    """Diagonal shift sum_d (exp(-i p d) - 1) lambda_d(x) for one frequency."""
    d = np.arange(1, table.shape[1] + 1)
    return table @ (np.exp(-1j * p * d) - 1.0)


def twisted_generators(assembly: PartialCirculantAssembly) -> list[TwistedGenerator]:
    K = assembly.n
    # recover the jump table from the circulant patterns: rate of +d is at c[K - d]
    rates = np.array([blk.c[K - np.arange(1, K)] for blk in assembly.blocks])
    out = []
    for j in range(K):
        p = 2 * np.pi * j / K
        if j == 0:
            Lj = assembly.outer.astype(complex)
        else:
            Lj = assembly.outer + np.diag(twisted_shift(rates, p))
        out.append(TwistedGenerator(j, p, Lj))
    return out
