"""Independent reference computations shared by the test modules."""

import numpy as np
import scipy.linalg

from volchain.linalg import assemble_lift
from volchain.matching import IntensityProfile


def lift_law(gen, profile, x0, T):
    """Row x0 of exp(T G) for the materialized lift, reshaped to (state, lattice index)."""
    G = assemble_lift(gen, profile).materialize()
    K = 2 * profile.C + 1
    return scipy.linalg.expm(T * G)[x0 * K].reshape(gen.size, K)


def random_instance(rng, toy_generator):
    """Generator with N <= 5 states and a profile with C <= 20, k <= 3."""
    N = int(rng.integers(2, 6))
    k = int(rng.integers(1, 4))
    C = int(rng.integers(2 if k == 3 else 1, 21))
    states = np.sort(rng.uniform(50, 150, N))
    gen = toy_generator(states, rng.uniform(0, 3, (N, N)) * (rng.random((N, N)) < 0.8))
    lam = lambda: rng.uniform(0, 2, N)
    alpha = float(rng.uniform(1e-3, 1e-2))
    if k == 1:
        prof = IntensityProfile(alpha, C, 1, lam())
    elif k == 2:
        n = int(rng.integers(2, 2 * C + 1))
        prof = IntensityProfile(alpha, C, 2, lam(), lam(), n=n)
    else:
        m = int(rng.integers(3, 2 * C + 1))
        n = int(rng.integers(2, m))
        prof = IntensityProfile(alpha, C, 3, lam(), lam(), lam(), n=n, m=m)
    x0 = int(rng.integers(0, N))
    T = float(rng.uniform(0.05, 2.0))
    return gen, prof, x0, T
