"""
Exception hierarchy shared by the analytic, simulation and CLI layers
"""


class ModelError(Exception):
    """Base class for every error raised by the m2m package"""

    category = "model_error"
    exit_code = 1

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.message = message
        self.diagnostics = diagnostics

    def describe(self) -> str:
        """One machine-readable line for stderr"""
        extra = " ".join(f"{key}={value}" for key, value in sorted(self.diagnostics.items()))
        line = f"error category={self.category} message={self.message}"
        return f"{line} {extra}" if extra else line


class ConfigError(ModelError):
    """Missing or invalid configuration value"""

    category = "config"
    exit_code = 2


class DomainError(ModelError, ValueError):
    """Argument outside the mathematical domain of a function"""

    category = "domain"
    exit_code = 2


class DegeneratePlanError(ModelError):
    """Stage plan with more receivers than transmitters at the last stage"""

    category = "degenerate_plan"
    exit_code = 3


class TruncationError(ModelError):
    """Load PMF truncated with too much probability mass left over"""

    category = "truncation"
    exit_code = 4


class ConvergenceError(ModelError):
    """Series, quadrature or optimizer failed to reach tolerance"""

    category = "convergence"
    exit_code = 5


class UnboundedHopsError(ModelError):
    """Per-stage coverage of one makes the hop upper bound infinite"""

    category = "unbounded_hops"
    exit_code = 6


class HopScanExhaustedError(ModelError):
    """No stage count up to the scan cap satisfies the fixed-point bound"""

    category = "hop_scan_exhausted"
    exit_code = 6


class InsufficientSamplesError(ModelError):
    """Too few Monte Carlo samples for a confidence interval"""

    category = "insufficient_samples"
    exit_code = 7
