"""Cookie random walks, their branching process with migration, and exact numerics."""

from .env import CookieConfig, EnvironmentVariant, Regime, cookie_strength, derive_exponents
from .errors import (
    CookieWalkError, DomainError, InsufficientTail, NoConvergence, ResourceError,
    StepCapExceeded, TruncationTooSevere,
)
from .walk import hitting_times, simulate_walk, simulate_walk_summary, sup_batch
from .branching import MigrationSampler, simulate_excursion, simulate_excursions
from .kernel import (
    build_kernel, expected_sigma, law_of_A, stationary_law, survival_probabilities,
)
from .bessel import F_eta, PhiLambda, bessel_k
from .stats import fit_tail, ks_two_sample, sample_mittag_leffler, sample_stable

__all__ = [
    "CookieConfig", "EnvironmentVariant", "Regime", "cookie_strength", "derive_exponents",
    "CookieWalkError", "DomainError", "InsufficientTail", "NoConvergence", "ResourceError",
    "StepCapExceeded", "TruncationTooSevere",
    "hitting_times", "simulate_walk", "simulate_walk_summary", "sup_batch",
    "MigrationSampler", "simulate_excursion", "simulate_excursions",
    "build_kernel", "expected_sigma", "law_of_A", "stationary_law", "survival_probabilities",
    "F_eta", "PhiLambda", "bessel_k",
    "fit_tail", "ks_two_sample", "sample_mittag_leffler", "sample_stable",
]
