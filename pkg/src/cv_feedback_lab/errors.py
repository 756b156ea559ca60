"""Exception types shared across the library."""


class ParameterError(ValueError):
    """A physical parameter is outside its admissible range."""


class ConfigurationError(ValueError):
    """A run is set up inconsistently (unknown keys, misaligned grids, ...)."""


class DelayError(ConfigurationError):
    """Delay bookkeeping is misconfigured or read before history exists."""


class StepSizeError(ConfigurationError):
    """An explicit time step violates its stability bound."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, t: float | None = None, step: int | None = None):
        if t is not None:
            message = f"{message} (t={t:.6g}" + (f", step={step})" if step is not None else ")")
        super().__init__(message)
        self.t = t
        self.step = step


class AnalysisError(RuntimeError):
    """A numerical analysis routine failed to converge or was ill-posed."""


class GridIntegrityError(RuntimeError):
    """Grid-field mass bookkeeping violated its tolerance."""
