class LookdownError(Exception):
    pass


class ConfigError(LookdownError, ValueError):
    """Invalid model parameters or experiment configuration."""


class SamplerFailure(LookdownError, RuntimeError):
    """A rejection sampler exceeded its iteration cap."""


class SolverFailure(LookdownError, RuntimeError):
    pass


class InfeasibleConditioning(LookdownError, RuntimeError):
    """Acceptance rate of a conditioned sampler fell below its floor."""


class DomainError(LookdownError, ValueError):
    pass
