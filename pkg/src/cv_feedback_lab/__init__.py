"""cv-feedback-lab: measurement-based feedback control of a damped oscillator.

Conditional stochastic trajectories, Gaussian moment closure, phase-space
grid evolution, delay stability analysis, and the classical limit of a
continuously monitored damped harmonic oscillator under two feedback
schemes (delayed-signal and reference-signal).
"""

from .errors import (
    AnalysisError,
    ConfigurationError,
    DelayError,
    DivergenceError,
    GridIntegrityError,
    ParameterError,
    StepSizeError,
)
from .params import (
    FeedbackConfig,
    GaussianState,
    MeasurementParams,
    OscillatorParams,
    ReferenceWave,
    Violation,
    bose_einstein,
    ensure_valid,
    to_classical,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "OscillatorParams",
    "MeasurementParams",
    "FeedbackConfig",
    "ReferenceWave",
    "GaussianState",
    "Violation",
    "bose_einstein",
    "to_classical",
    "validate",
    "ensure_valid",
    "ParameterError",
    "ConfigurationError",
    "DelayError",
    "StepSizeError",
    "DivergenceError",
    "AnalysisError",
    "GridIntegrityError",
    "__version__",
]
