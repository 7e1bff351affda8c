"""
Simulation Errors

Exception types raised by the simulation modules. Each maps onto one failure class of
the harness; the CLI turns SimulationError subclasses into exit codes (ConfigError and
ReportWriteError -> 2, everything else -> 1).
"""


class SimulationError(Exception):
    """Base class for all harness errors."""


class SamplingFailure(SimulationError, RuntimeError):
    """The biased sampler exceeded its iteration cap (signals a broken rng)."""


class DegenerateInputError(SimulationError, ValueError):
    """Inputs sit on a removable singularity or are not finite."""


class ResourceViolation(SimulationError, RuntimeError):
    """A run broke its resource contract, or a closed transcript was reused."""


class InfeasibleParametersError(SimulationError, ValueError):
    """Flip parameters and correlation do not assemble into a valid pmf."""


class ConsistencyError(SimulationError, RuntimeError):
    """An identity that must hold exactly failed at runtime."""


class ConfigError(SimulationError, ValueError):
    """Invalid command-line or file configuration."""


class ReportWriteError(SimulationError, OSError):
    """A report could not be written."""
