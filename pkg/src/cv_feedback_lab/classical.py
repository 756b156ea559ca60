"""Classical-limit dynamics: noisy-meter filtering of an overdamped particle.

A classical particle monitored with error scale sigma is described by a
stochastic (nonlinear) probability-flow equation, not a Langevin equation;
the Langevin picture is recovered only in the error-free limit sigma -> 0.
Under the Gaussian closure the overdamped conditional state reduces to a
mean m_c driven by the innovation noise and a deterministic variance V_c
obeying

    dV_c/dt = 4T/kappa - (4a/kappa) V_c - (2 gamma/sigma) V_c^2

whose positive stationary root is the closed form

    V_c -> (a sigma/gamma kappa) (sqrt(1 + 2 T gamma kappa/(a^2 sigma)) - 1).

A small 1-d grid solver for the conditional density is provided as an
independent oracle for the closure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParameterError
from .grid import FpeCoefficients, covariance_steady_from_coefficients, coefficients_for
from .moments import integrate_ode
from .params import FeedbackConfig, MeasurementParams, OscillatorParams
from .sde import _philox

__all__ = [
    "OverdampedParams",
    "ConditionalGaussian1D",
    "classical_free_coefficients",
    "classical_scheme2_coefficients",
    "classical_scheme2_cov_steady",
    "conditional_variance_rhs",
    "steady_conditional_variance",
    "overdamped_conditional_step",
    "langevin_step",
    "simulate_conditional_ensemble",
    "simulate_langevin_ensemble",
    "error_free_equivalence",
    "EquivalenceEntry",
    "EquivalenceReport",
    "overdamped_fpe_step",
    "overdamped_measurement_update",
]


@dataclass(frozen=True)
class OverdampedParams:
    """Overdamped monitored particle in a confining quadratic potential.

    U(x) = a x^2 + b x + c; friction constant kappa/2, temperature T,
    measurement rate gamma and error scale sigma.
    """

    kappa: float
    T: float
    sigma: float
    gamma: float
    a: float
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be > 0, got {self.kappa}")
        if not self.T >= 0:
            raise ParameterError(f"T must be >= 0, got {self.T}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.a > 0:
            raise ParameterError(f"potential must be confining (a > 0), got a={self.a}")

    def potential_gradient(self, x):
        return 2.0 * self.a * x + self.b


@dataclass
class ConditionalGaussian1D:
    """Gaussian conditional state of the overdamped particle."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"conditional variance must be > 0, got {self.variance}")


def classical_free_coefficients(osc: OscillatorParams, beta: float | None = None) -> FpeCoefficients:
    """Classical drift-diffusion table of the free damped oscillator.

    The diffusion operator (kappa/2 beta omega) del.del corresponds to
    D_xx = D_pp = kappa/(beta*omega) in the 1/2 del.D.del convention; it
    vanishes at beta = +inf (zero temperature).
    """
    b = osc.beta if beta is None else beta
    if not b > 0:
        raise ParameterError(f"beta must be positive or +inf, got {b}")
    km = osc.kappa_mean
    d = 0.0 if math.isinf(b) else osc.kappa / (b * osc.omega)
    return FpeCoefficients(-0.5 * km, osc.omega, -osc.omega, -0.5 * km, d, d)


def classical_scheme2_coefficients(
    osc: OscillatorParams, meas: MeasurementParams, fb: FeedbackConfig
) -> FpeCoefficients:
    """Classical reference-feedback table; adds k^2 sigma/(2 gamma) to D_xx."""
    if meas.mode != "classical":
        raise ParameterError("expected classical-mode measurement parameters")
    return coefficients_for(osc, meas, fb)


def classical_scheme2_cov_steady(
    osc: OscillatorParams, meas: MeasurementParams, fb: FeedbackConfig
) -> tuple[float, float, float]:
    """Stationary unconditional (Vx, Vp, C) of the classical tracking scheme."""
    return covariance_steady_from_coefficients(classical_scheme2_coefficients(osc, meas, fb))


# ---------------------------------------------------------------------------
# overdamped conditional filter (Gaussian closure)

def conditional_variance_rhs(v: float, op: OverdampedParams) -> float:
    return 4.0 * op.T / op.kappa - (4.0 * op.a / op.kappa) * v - (2.0 * op.gamma / op.sigma) * v * v


def steady_conditional_variance(op: OverdampedParams) -> float:
    """Positive root of the stationary variance equation (closed form)."""
    return (op.a * op.sigma / (op.gamma * op.kappa)) * (
        math.sqrt(1.0 + 2.0 * op.T * op.gamma * op.kappa / (op.a**2 * op.sigma)) - 1.0
    )


def overdamped_conditional_step(mean, variance: float, dw, op: OverdampedParams, dt: float):
    """Euler-Maruyama update of (m_c, V_c); V_c is deterministic under closure."""
    gain = math.sqrt(2.0 * op.gamma / op.sigma) * variance
    mean_next = mean + (-(2.0 / op.kappa) * (2.0 * op.a * mean + op.b)) * dt + gain * dw
    var_next = variance + conditional_variance_rhs(variance, op) * dt
    return mean_next, var_next


def langevin_step(x, op: OverdampedParams, dw, dt: float):
    """Error-free-limit reference dynamics dx = -(2/kappa) U'(x) dt + sqrt(4T/kappa) dW."""
    return x - (2.0 / op.kappa) * op.potential_gradient(x) * dt + math.sqrt(4.0 * op.T / op.kappa) * dw


# ---------------------------------------------------------------------------
# ensembles (same keyed-stream RNG contract as the sde module)

def _noise_matrix(seed: int, n_traj: int, n_steps: int, dt: float, offset: int = 0) -> np.ndarray:
    rows = np.empty((n_traj, n_steps))
    for j in range(n_traj):
        rows[j] = _philox(seed, offset + j).normal(0.0, math.sqrt(dt), size=n_steps)
    return rows


def simulate_conditional_ensemble(
    op: OverdampedParams,
    n_traj: int,
    t_end: float,
    dt: float,
    seed: int,
    m0: float = 0.0,
    v0: float | None = None,
):
    """Vectorized filter ensemble; returns (times, means (n_traj, n+1), v_series)."""
    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise ConfigurationError("t_end must cover at least one step")
    v = v0 if v0 is not None else steady_conditional_variance(op)
    _, vs = integrate_ode(lambda t, y: np.array([conditional_variance_rhs(y[0], op)]), [v], (0.0, n_steps * dt), dt)
    v_series = vs[:, 0]
    dw = _noise_matrix(seed, n_traj, n_steps, dt)
    amp = math.sqrt(2.0 * op.gamma / op.sigma)
    relax = -4.0 * op.a / op.kappa
    means = np.empty((n_traj, n_steps + 1))
    m = np.full(n_traj, float(m0))
    means[:, 0] = m
    for i in range(n_steps):
        m = m + (relax * m - (2.0 / op.kappa) * op.b) * dt + amp * v_series[i] * dw[:, i]
        means[:, i + 1] = m
    times = dt * np.arange(n_steps + 1)
    return times, means, v_series


def simulate_langevin_ensemble(
    op: OverdampedParams,
    n_traj: int,
    t_end: float,
    dt: float,
    seed: int,
    x0: float = 0.0,
    stream_offset: int = 1_000_000,
):
    """Vectorized Langevin ensemble; returns (times, paths (n_traj, n+1))."""
    n_steps = int(round(t_end / dt))
    dw = _noise_matrix(seed, n_traj, n_steps, dt, offset=stream_offset)
    drift = -4.0 * op.a / op.kappa
    noise = math.sqrt(4.0 * op.T / op.kappa)
    paths = np.empty((n_traj, n_steps + 1))
    x = np.full(n_traj, float(x0))
    paths[:, 0] = x
    for i in range(n_steps):
        x = x + (drift * x - (2.0 / op.kappa) * op.b) * dt + noise * dw[:, i]
        paths[:, i + 1] = x
    times = dt * np.arange(n_steps + 1)
    return times, paths


def _stationary_samples(paths: np.ndarray, times: np.ndarray, t_burn: float, spacing: float) -> np.ndarray:
    """Pool weakly correlated late-time samples from an ensemble."""
    dt = times[1] - times[0]
    stride = max(1, int(round(spacing / dt)))
    start = int(np.searchsorted(times, t_burn))
    return paths[:, start::stride].ravel()


def _lag_autocov(paths: np.ndarray, times: np.ndarray, t_burn: float, lag: float) -> float:
    """Stationary autocovariance E[y(t) y(t+lag)] - E[y]^2 from late-time paths.

    Unnormalized on purpose: the filtered mean is an exact OU process whose
    normalized autocorrelation is sigma-independent, so only the
    amplitude-bearing covariance distinguishes its law from the error-free
    reference.
    """
    dt = times[1] - times[0]
    nlag = max(1, int(round(lag / dt)))
    start = int(np.searchsorted(times, t_burn))
    a = paths[:, start:-nlag].ravel()
    b = paths[:, start + nlag:].ravel()
    return float(np.mean(a * b) - a.mean() * b.mean())


@dataclass(frozen=True)
class EquivalenceEntry:
    sigma: float
    v_steady_formula: float
    v_steady_numeric: float
    var_mean: float
    var_mean_se: float
    total_variance: float
    target_variance: float
    autocov_lag: float
    autocov_conditional: float
    autocov_langevin: float
    autocov_mismatch: float


@dataclass(frozen=True)
class EquivalenceReport:
    entries: tuple[EquivalenceEntry, ...]
    langevin_variance: float
    langevin_variance_se: float

    def as_dict(self) -> dict:
        return {
            "langevin_variance": self.langevin_variance,
            "langevin_variance_se": self.langevin_variance_se,
            "entries": [vars(e) for e in self.entries],
        }


def error_free_equivalence(
    op: OverdampedParams,
    sigmas=(1.0, 0.1, 0.01),
    n_traj: int = 2000,
    t_end: float = 30.0,
    dt: float = 0.005,
    seed: int = 7,
    autocorr_lag: float = 0.5,
) -> EquivalenceReport:
    """Compare the conditional-mean law against the error-free Langevin law.

    For each sigma: stationary V_c (formula and relaxed ODE), the ensemble
    variance of m_c, the law-of-total-variance total against T/(2a), and the
    lag-autocorrelation mismatch against the Langevin reference.
    """
    t_burn = 0.5 * t_end
    lt, lpaths = simulate_langevin_ensemble(op, n_traj, t_end, dt, seed)
    lsamp = _stationary_samples(lpaths, lt, t_burn, spacing=1.0)
    lvar = float(np.var(lsamp, ddof=1))
    n_eff = lpaths.shape[0] * max(1, len(lsamp) // lpaths.shape[0])
    lvar_se = lvar * math.sqrt(2.0 / (n_eff - 1))
    rho_lang = _lag_autocorr(lpaths, lt, t_burn, autocorr_lag)

    entries = []
    for s in sigmas:
        ops = OverdampedParams(op.kappa, op.T, s, op.gamma, op.a, op.b, op.c)
        v_formula = steady_conditional_variance(ops)
        _, vs = integrate_ode(
            lambda t, y: np.array([conditional_variance_rhs(y[0], ops)]),
            [max(op.T / (2.0 * op.a), 1e-3)],
            (0.0, t_end),
            dt,
        )
        v_numeric = float(vs[-1, 0])
        ct, cpaths, _ = simulate_conditional_ensemble(ops, n_traj, t_end, dt, seed, m0=0.0, v0=v_formula)
        final = cpaths[:, -1]
        var_m = float(np.var(final, ddof=1))
        var_se = var_m * math.sqrt(2.0 / (n_traj - 1))
        rho_c = _lag_autocorr(cpaths, ct, t_burn, autocorr_lag)
        entries.append(
            EquivalenceEntry(
                sigma=s,
                v_steady_formula=v_formula,
                v_steady_numeric=v_numeric,
                var_mean=var_m,
                var_mean_se=var_se,
                total_variance=var_m + v_formula,
                target_variance=op.T / (2.0 * op.a),
                autocorr_lag=autocorr_lag,
                rho_conditional=rho_c,
                rho_langevin=rho_lang,
                autocorr_mismatch=abs(rho_c - rho_lang),
            )
        )
    return EquivalenceReport(entries=tuple(entries), langevin_variance=lvar, langevin_variance_se=lvar_se)


# ---------------------------------------------------------------------------
# 1-d grid oracle for the overdamped conditional density

def overdamped_fpe_step(values: np.ndarray, xs: np.ndarray, op: OverdampedParams, dt: float) -> np.ndarray:
    """One conservative step of dP/dt = d/dx[(2U'/kappa) P + (2T/kappa) dP/dx]."""
    h = xs[1] - xs[0]
    x_faces = xs[:-1] + 0.5 * h
    vel = -(2.0 / op.kappa) * op.potential_gradient(x_faces)
    diff = 4.0 * op.T / op.kappa  # 1/2 D d^2/dx^2 with D = 4T/kappa
    if diff > 0:
        pe = vel * (h / (0.5 * diff))
        with np.errstate(over="ignore"):
            bm = np.where(np.abs(pe) < 1e-8, 1.0 - 0.5 * (-pe), -pe / np.expm1(-pe))
            bp = np.where(np.abs(pe) < 1e-8, 1.0 - 0.5 * pe, pe / np.expm1(pe))
        flux = (0.5 * diff / h) * (bm * values[:-1] - bp * values[1:])
    else:
        flux = np.where(vel > 0, vel * values[:-1], vel * values[1:])
    out = values.copy()
    out[:-1] -= dt * flux / h
    out[1:] += dt * flux / h
    total = out.sum() * h
    return out / total


def overdamped_measurement_update(values: np.ndarray, xs: np.ndarray, dw: float, op: OverdampedParams) -> np.ndarray:
    """Conditioning kick, classical positivity enforced, renormalized."""
    h = xs[1] - xs[0]
    mean = float((values @ xs) / values.sum())
    out = values * (1.0 + math.sqrt(2.0 * op.gamma / op.sigma) * dw * (xs - mean))
    out = np.where(out < 0.0, 0.0, out)
    return out / (out.sum() * h)
