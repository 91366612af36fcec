"""Numerical lab for Berry-Esseen rates of Markov chain central limit theorems."""

from .chain import FiniteChain, build_chain, ergodicity_constants, stationary_distribution
from .errors import CltLabError, InputError
from .models import AffineModel, mc_variance_estimate, mix_seed, simulate_affine, simulate_finite
from .poisson import solve_poisson
from .rates import (
    berry_esseen_integral,
    charfn_S,
    exact_sn_distribution,
    kolmogorov_distance,
    rate_slope_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AffineModel",
    "CltLabError",
    "FiniteChain",
    "InputError",
    "berry_esseen_integral",
    "build_chain",
    "charfn_S",
    "ergodicity_constants",
    "exact_sn_distribution",
    "kolmogorov_distance",
    "mc_variance_estimate",
    "mix_seed",
    "rate_slope_fit",
    "simulate_affine",
    "simulate_finite",
    "solve_poisson",
    "stationary_distribution",
]
