"""Parameter objects and unit conventions shared by every other module.

All quantities live in the rescaled canonical units in which the oscillator
Hamiltonian is symmetric in x and p.  ``omega`` is the angular frequency,
``kappa`` the energy damping rate, and ``hbar`` the action scale, kept as a
runtime parameter so classical-limit studies can shrink it.  Temperature
enters only through the bath occupation; T = 0 is represented as
beta = +infinity so that the occupation is exactly zero without overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

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
]

#: sigma below this value is reported as the error-free measurement regime
ERROR_FREE_SIGMA = 1e-12


def bose_einstein(beta: float, hbar: float, omega: float) -> float:
    """Bath occupation 1/(exp(beta*hbar*omega) - 1); exactly 0 at beta = inf."""
    if not beta > 0:
        raise ParameterError(f"beta must be positive or +inf, got {beta}")
    if not hbar > 0:
        raise ParameterError(f"hbar must be positive, got {hbar}")
    if not omega > 0:
        raise ParameterError(f"omega must be positive, got {omega}")
    if math.isinf(beta):
        return 0.0
    x = beta * hbar * omega
    if x > 700.0:  # exp would overflow; occupation is already below 1e-304
        return 0.0
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class OscillatorParams:
    """Damped harmonic oscillator and its bath.

    ``fixed_point_kind='unstable'`` models the inverted bath variant: it flips
    the sign of kappa in mean drifts only, never in diffusion coefficients.
    """

    omega: float
    kappa: float = 0.0
    hbar: float = 1.0
    beta: float = math.inf
    fixed_point_kind: str = "stable"

    @property
    def n_bath(self) -> float:
        return bose_einstein(self.beta, self.hbar, self.omega)

    @property
    def kappa_mean(self) -> float:
        """Damping rate entering mean drifts; negative for the unstable kind."""
        return -self.kappa if self.fixed_point_kind == "unstable" else self.kappa

    def thermal_diffusion(self) -> float:
        """Bath-fed phase-space diffusion kappa*hbar*(1 + 2 n_B)/2 (always >= 0)."""
        return 0.5 * self.kappa * self.hbar * (1.0 + 2.0 * self.n_bath)


@dataclass(frozen=True)
class MeasurementParams:
    """Continuous position monitoring at rate gamma.

    In quantum mode the detector efficiency eta is a free parameter in (0, 1].
    In classical mode the error scale sigma replaces it; the formal
    identification eta = hbar/sigma is applied internally and eta is never set
    directly.
    """

    gamma: float
    eta: float = 1.0
    mode: str = "quantum"
    sigma: float | None = None

    def record_noise_amp(self, hbar: float) -> float:
        """Amplitude of the white noise on the measurement record dI."""
        if not self.gamma > 0:
            raise ParameterError("measurement record requires gamma > 0")
        if self.mode == "classical":
            if self.sigma is None or not self.sigma >= 0:
                raise ParameterError("classical mode requires sigma >= 0")
            return math.sqrt(self.sigma / (2.0 * self.gamma))
        return math.sqrt(hbar / (2.0 * self.gamma * self.eta))

    def conditioning_amp(self, hbar: float) -> float:
        """Strength of the innovation update pulling the conditional state."""
        if not self.gamma > 0:
            raise ParameterError("conditioning requires gamma > 0")
        if self.mode == "classical":
            if self.sigma is None or not self.sigma > 0:
                raise ParameterError("classical mode requires sigma > 0")
            return math.sqrt(2.0 * self.gamma / self.sigma)
        return math.sqrt(2.0 * self.gamma * self.eta / hbar)

    def effective_eta(self, hbar: float) -> float:
        """Detector efficiency; hbar/sigma under the classical identification."""
        if self.mode == "classical":
            if self.sigma is None or not self.sigma > 0:
                raise ParameterError("classical mode requires sigma > 0")
            return hbar / self.sigma
        return self.eta

    @property
    def error_free(self) -> bool:
        """True in the classical sigma -> 0 regime (deterministic record)."""
        return self.mode == "classical" and self.sigma is not None and self.sigma <= ERROR_FREE_SIGMA


def to_classical(q: MeasurementParams, sigma: float) -> MeasurementParams:
    """Map quantum measurement parameters to the classical noisy-meter model.

    Keeps gamma; downstream record noise becomes sqrt(sigma/2 gamma) in place
    of sqrt(hbar/2 gamma eta).
    """
    if q.mode != "quantum":
        raise ParameterError("to_classical expects quantum-mode parameters")
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return MeasurementParams(gamma=q.gamma, mode="classical", sigma=sigma)


@dataclass(frozen=True)
class ReferenceWave:
    """Reference signal x*(t) = -y0*cos(Omega*t + phi).

    Omega defaults to the oscillator frequency when left as None.
    """

    y0: float
    Omega: float | None = None
    phi: float = 0.0

    def value(self, t: float, default_omega: float):
        w = self.Omega if self.Omega is not None else default_omega
        return -self.y0 * np.cos(w * t + self.phi)


@dataclass(frozen=True)
class FeedbackConfig:
    """Feedback scheme selector: none, delayed signal, or reference signal."""

    scheme: str = "none"
    k: float = 0.0
    tau: float | None = None
    reference: ReferenceWave | None = None

    @classmethod
    def none(cls) -> "FeedbackConfig":
        return cls(scheme="none")

    @classmethod
    def delayed(cls, k: float, tau: float) -> "FeedbackConfig":
        return cls(scheme="scheme1", k=k, tau=tau)

    @classmethod
    def tracking(cls, k: float, y0: float, Omega: float | None = None, phi: float = 0.0) -> "FeedbackConfig":
        return cls(scheme="scheme2", k=k, reference=ReferenceWave(y0=y0, Omega=Omega, phi=phi))

    @property
    def active(self) -> bool:
        return self.scheme != "none" and self.k != 0.0


_PSD_TOL = 1e-12


@dataclass(frozen=True)
class GaussianState:
    """First and second moments of a (conditional or unconditional) state."""

    mean_x: float
    mean_p: float
    v_x: float
    v_p: float
    c: float = 0.0

    def __post_init__(self):
        if not self.v_x >= 0 or not self.v_p >= 0:
            raise ParameterError(f"variances must be non-negative, got ({self.v_x}, {self.v_p})")
        det = self.v_x * self.v_p - self.c * self.c
        if det < -_PSD_TOL * max(1.0, self.v_x * self.v_p):
            raise ParameterError(f"covariance matrix is not positive semidefinite (det={det:.3e})")

    @property
    def covariance_det(self) -> float:
        return self.v_x * self.v_p - self.c * self.c

    def heisenberg_defect(self, hbar: float) -> float:
        """det(covariance) - hbar^2/4; negative values flag a bound violation.

        The bound is monitored empirically in quantum mode, never asserted as
        an axiom.
        """
        return self.covariance_det - 0.25 * hbar * hbar


@dataclass(frozen=True)
class Violation:
    """One validation failure, machine-readable code plus human message."""

    code: str
    message: str


def _check(violations: list, cond: bool, code: str, message: str) -> None:
    if not cond:
        violations.append(Violation(code, message))


def validate(osc: OscillatorParams, meas: MeasurementParams, fb: FeedbackConfig) -> list[Violation]:
    """Check every cross-parameter invariant; returns an empty list when ok.

    Pure: the same inputs always produce the same report.
    """
    v: list[Violation] = []
    _check(v, osc.omega > 0, "omega-positive", f"omega must be > 0, got {osc.omega}")
    _check(v, osc.kappa >= 0, "kappa-range", f"kappa must be >= 0, got {osc.kappa}")
    _check(v, osc.hbar > 0, "hbar-positive", f"hbar must be > 0, got {osc.hbar}")
    _check(v, osc.beta > 0, "beta-range", f"beta must be > 0 or +inf, got {osc.beta}")
    _check(
        v,
        osc.fixed_point_kind in ("stable", "unstable"),
        "fixed-point-kind",
        f"unknown fixed_point_kind {osc.fixed_point_kind!r}",
    )

    _check(v, meas.mode in ("quantum", "classical"), "mode-unknown", f"unknown mode {meas.mode!r}")
    _check(v, meas.gamma >= 0, "measurement-rate-range", f"gamma must be >= 0, got {meas.gamma}")
    if meas.mode == "quantum":
        _check(v, 0.0 < meas.eta <= 1.0, "efficiency-range", f"eta must lie in (0, 1], got {meas.eta}")
    elif meas.mode == "classical":
        _check(
            v,
            meas.sigma is not None and meas.sigma > 0,
            "error-scale-range",
            f"classical mode requires sigma > 0, got {meas.sigma}",
        )

    _check(
        v,
        fb.scheme in ("none", "scheme1", "scheme2"),
        "scheme-unknown",
        f"unknown scheme {fb.scheme!r}",
    )
    if fb.scheme == "scheme1":
        _check(v, fb.tau is not None and fb.tau > 0, "delay-range", f"scheme1 requires tau > 0, got {fb.tau}")
    if fb.scheme == "scheme2":
        _check(v, fb.reference is not None, "reference-missing", "scheme2 requires a reference waveform")
        if fb.reference is not None and fb.reference.Omega is not None:
            _check(v, fb.reference.Omega > 0, "reference-frequency", "reference Omega must be > 0")

    if fb.active:
        # the feedback term carries 1/(gamma*eta) (1/gamma classically) and
        # diverges for a vanishing measurement rate
        if meas.mode == "quantum":
            no_meas = meas.gamma * meas.eta <= 0
        else:
            no_meas = meas.gamma <= 0
        _check(
            v,
            not no_meas,
            "feedback-requires-measurement",
            "feedback gain k != 0 requires an active measurement (gamma*eta > 0)",
        )
    return v


def ensure_valid(osc: OscillatorParams, meas: MeasurementParams, fb: FeedbackConfig) -> None:
    """Raise ParameterError listing all violations, if any."""
    violations = validate(osc, meas, fb)
    if violations:
        codes = ", ".join(f"{x.code}: {x.message}" for x in violations)
        raise ParameterError(f"invalid parameters ({codes})")
