"""Exception types shared across the package."""


class MFSpikeError(Exception):
    """Base class for all package errors."""


class NonPositiveParameter(MFSpikeError):
    """A model constant violated its positivity constraint."""

    def __init__(self, name: str, value=None):
        self.name = name
        self.value = value
        msg = f"parameter {name!r} must be strictly positive"
        if value is not None:
            msg += f" (got {value!r})"
        super().__init__(msg)


class NonMonotoneHistory(MFSpikeError):
    """The rate history does not define an increasing clock map."""


class NotAdmissibleTimeChange(MFSpikeError):
    """An inverse clock map violated its slope band."""


class SingularQuadrature(MFSpikeError):
    """Product-integration weights degenerated (grid too coarse)."""


class CFLViolation(MFSpikeError):
    """Explicit advection step exceeded its stability bound."""


class NoConvergence(MFSpikeError):
    """Picard continuation stalled on a window."""

    def __init__(self, window: int, iterations: int, residual: float):
        self.window = window
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence on window {window} after {iterations} iterations "
            f"(last update {residual:.3e})"
        )


class EternalBlowup(MFSpikeError):
    """The naive exit rule found no blowup exit before the horizon."""

    def __init__(self, trigger: float):
        self.trigger = trigger
        super().__init__(f"no exit found for the episode triggered at {trigger:.6g}")


class ExplosiveInput(MFSpikeError):
    """Buffer input reached the pole of the regular branch outside an episode."""


class ConfigError(MFSpikeError):
    """Run configuration failed to parse or validate."""
