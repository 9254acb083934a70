"""Spectral pricing of realized and corridor-realized variance derivatives on Markov chains."""

from .generator import (
    BernsteinSpec,
    DiffusionSpec,
    GeneratorMatrix,
    build_diffusion_generator,
    implied_vol,
    price_vanilla,
    risk_neutral_drift,
    semigroup,
    subordinate,
)
from .grid import GridSpec, StateGrid, build_grid
from .matching import (
    FeasibilityError,
    FeasibilityReport,
    IntensityProfile,
    b_sum,
    feasibility_k2,
    feasibility_k3,
    match_k1,
    match_k2,
    match_k3,
)
from .models import Model
from .moments import Corridor, MomentTable, clamp, moments
from .spectral import JointLaw, PayoffSpec, SpectralPricer, greeks, joint_law, price, price_per_state

__version__ = "0.1.0"
