"""Lookdown particle systems, their Doob h-transforms and Monte Carlo checks."""
from lookdown.errors import (
    ConfigError,
    DomainError,
    InfeasibleConditioning,
    LookdownError,
    SamplerFailure,
    SolverFailure,
)
from lookdown.measures import (
    BranchingMechanism,
    LambdaSpec,
    NuSpec,
    SubordinatorExponent,
    phi_tilde,
    psi,
    psi_prime,
    psi_prime_at_zero,
    pushing_rate,
    pushing_rate_increment,
    sample_jump_frequency,
)

__version__ = "0.1.0"
