"""Deterministic mean and covariance dynamics for both feedback schemes.

Means follow the damped rotation (omega*p - kappa/2*x, -omega*x - kappa/2*p)
plus the scheme-specific feedback force on x.  Conditional covariances obey a
closed Riccati-type system that is independent of the feedback gain, the
delay, and the reference signal; unconditional covariances under the
reference scheme obey a linear system that additionally carries the
feedback-noise diffusion hbar*k^2/(2*gamma*eta).

Integrators are fixed-step and classical 4th order.  The delay equation is
advanced by the method of steps with the same stepper: each step stores its
stage states, and a step reads the delayed stage states recorded exactly
tau/dt steps earlier, so no interpolation is ever performed.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import AnalysisError, ConfigurationError, DivergenceError, ParameterError
from .params import FeedbackConfig, MeasurementParams, OscillatorParams

__all__ = [
    "free_mean_rhs",
    "scheme1_mean_rhs",
    "scheme2_mean_rhs",
    "scheme2_asymptote",
    "conditional_cov_rhs",
    "unconditional_cov_rhs_scheme2",
    "integrate_ode",
    "integrate_dde",
    "aligned_span",
    "default_ode_dt",
    "default_dde_dt",
    "conditional_cov_steady",
    "scheme2_unconditional_cov_steady",
    "path_amplitude",
    "mean_ode_rhs",
    "scheme2_mean_ode_rhs",
    "scheme1_mean_dde_rhs",
    "conditional_cov_ode_rhs",
    "scheme2_unconditional_cov_ode_rhs",
]


# ---------------------------------------------------------------------------
# right-hand sides

def free_mean_rhs(x: float, p: float, osc: OscillatorParams) -> tuple[float, float]:
    """Mean drift of the damped oscillator (sign of kappa per fixed-point kind)."""
    km = osc.kappa_mean
    return (osc.omega * p - 0.5 * km * x, -osc.omega * x - 0.5 * km * p)


def scheme1_mean_rhs(x: float, p: float, x_tau: float, osc: OscillatorParams, k: float) -> tuple[float, float]:
    """Averaged delayed-feedback drift: adds k*(x - x_tau) to the x equation."""
    dx, dp = free_mean_rhs(x, p, osc)
    return (dx + k * (x - x_tau), dp)


def scheme2_mean_rhs(x: float, p: float, t: float, osc: OscillatorParams, fb: FeedbackConfig) -> tuple[float, float]:
    """Averaged reference-tracking drift: adds k*(x - x_ref(t)) to the x equation."""
    if fb.reference is None:
        raise ParameterError("scheme2 drift requires a reference waveform")
    dx, dp = free_mean_rhs(x, p, osc)
    x_ref = fb.reference.value(t, osc.omega)
    return (dx + fb.k * (x - x_ref), dp)


def scheme2_asymptote(t, y0: float, omega: float, kappa: float):
    """Late-time limit cycle of the averaged tracking scheme at gain k = kappa/2."""
    x = y0 * np.cos(omega * t) + (kappa * y0 / (2.0 * omega)) * np.sin(omega * t)
    p = -y0 * np.sin(omega * t)
    return x, p


def conditional_cov_rhs(
    vx: float, vp: float, c: float, osc: OscillatorParams, meas: MeasurementParams
) -> tuple[float, float, float]:
    """Closed conditional covariance dynamics under continuous monitoring.

    Independent of any feedback gain, delay, or reference signal.  The
    quadratic -2*gamma*eta/hbar * Vx^2 term is the measurement-induced
    localization; the +hbar*gamma/2 term on Vp is the back-action.
    """
    if meas.mode != "quantum":
        raise ParameterError("conditional covariance dynamics are quantum-mode only")
    w, kap = osc.omega, osc.kappa
    therm = osc.thermal_diffusion()
    g = 2.0 * meas.gamma * meas.eta / osc.hbar
    dvx = -kap * vx + 2.0 * w * c - g * vx * vx + therm
    dvp = -kap * vp - 2.0 * w * c - g * c * c + therm + 0.5 * osc.hbar * meas.gamma
    dc = w * (vp - vx) - kap * c - g * vx * c
    return dvx, dvp, dc


def unconditional_cov_rhs_scheme2(
    vx: float, vp: float, c: float, osc: OscillatorParams, meas: MeasurementParams, k: float
) -> tuple[float, float, float]:
    """Linear covariance dynamics seen without access to the record (scheme 2)."""
    if meas.mode != "quantum":
        raise ParameterError("use the classical-limit module for classical covariances")
    if k != 0.0 and meas.gamma * meas.eta <= 0:
        raise ParameterError("divergent feedback: k != 0 requires gamma*eta > 0")
    w, kap = osc.omega, osc.kappa
    therm = osc.thermal_diffusion()
    fb_diff = 0.0 if k == 0.0 else osc.hbar * k * k / (2.0 * meas.gamma * meas.eta)
    dvx = (2.0 * k - kap) * vx + 2.0 * w * c + therm + fb_diff
    dvp = -kap * vp - 2.0 * w * c + therm + 0.5 * osc.hbar * meas.gamma
    dc = w * (vp - vx) + (k - kap) * c
    return dvx, dvp, dc


# ---------------------------------------------------------------------------
# rhs adapters for the generic integrators

def mean_ode_rhs(osc: OscillatorParams) -> Callable:
    def rhs(t, y):
        dx, dp = free_mean_rhs(y[0], y[1], osc)
        return np.array((dx, dp))

    return rhs


def scheme2_mean_ode_rhs(osc: OscillatorParams, fb: FeedbackConfig) -> Callable:
    def rhs(t, y):
        dx, dp = scheme2_mean_rhs(y[0], y[1], t, osc, fb)
        return np.array((dx, dp))

    return rhs


def scheme1_mean_dde_rhs(osc: OscillatorParams, k: float) -> Callable:
    def rhs(t, y, y_tau):
        dx, dp = scheme1_mean_rhs(y[0], y[1], y_tau[0], osc, k)
        return np.array((dx, dp))

    return rhs


def conditional_cov_ode_rhs(osc: OscillatorParams, meas: MeasurementParams) -> Callable:
    def rhs(t, y):
        return np.array(conditional_cov_rhs(y[0], y[1], y[2], osc, meas))

    return rhs


def scheme2_unconditional_cov_ode_rhs(osc: OscillatorParams, meas: MeasurementParams, k: float) -> Callable:
    def rhs(t, y):
        return np.array(unconditional_cov_rhs_scheme2(y[0], y[1], y[2], osc, meas, k))

    return rhs


# ---------------------------------------------------------------------------
# integrators

def default_ode_dt(osc: OscillatorParams) -> float:
    return 2.0 * math.pi / (1024.0 * osc.omega)


def default_dde_dt(tau: float) -> float:
    return tau / 256.0


def _step_count(span: float, dt: float) -> int:
    n = int(round(span / dt))
    if n < 1 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ConfigurationError(f"t_span length {span} is not a positive multiple of dt={dt}")
    return n


def aligned_span(t_end: float, dt: float) -> tuple[float, float]:
    """(0, n*dt) with the first grid point at or just beyond t_end."""
    n = max(1, math.ceil(t_end / dt - 1e-9))
    return (0.0, n * dt)


def integrate_ode(rhs: Callable, y0: Sequence[float], t_span: tuple[float, float], dt: float):
    """Classical fixed-step 4th-order integration, sampled at every step."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    t0, t1 = t_span
    n = _step_count(t1 - t0, dt)
    y = np.asarray(y0, dtype=float)
    ys = np.empty((n + 1, y.size))
    ys[0] = y
    half = 0.5 * dt
    for i in range(n):
        t = t0 + i * dt
        k1 = rhs(t, y)
        k2 = rhs(t + half, y + half * k1)
        k3 = rhs(t + half, y + half * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("state became non-finite", t=t + dt, step=i + 1)
        ys[i + 1] = y
    ts = t0 + dt * np.arange(n + 1)
    return ts, ys


def integrate_dde(
    rhs: Callable,
    y0: Sequence[float],
    tau: float,
    t_span: tuple[float, float],
    dt: float | None = None,
):
    """Method-of-steps integration of y' = f(t, y, y(t - tau)).

    The history is the constant y0 for t <= t0.  tau must be an integer
    multiple of dt (no silent rounding): delayed values are then read from the
    stage states stored exactly tau/dt steps earlier, which is equivalent to
    applying the 4th-order stepper to the method-of-steps cascade system.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if dt is None:
        dt = default_dde_dt(tau)
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    ratio = tau / dt
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"tau/dt = {ratio} must be a positive integer (tau={tau}, dt={dt})")

    t0, t1 = t_span
    n = _step_count(t1 - t0, dt)
    y = np.asarray(y0, dtype=float)
    ys = np.empty((n + 1, y.size))
    ys[0] = y
    hist = (y.copy(), y.copy(), y.copy(), y.copy())
    stages: list[tuple] = []
    half = 0.5 * dt
    for i in range(n):
        z1, z2, z3, z4 = stages[i - m] if i >= m else hist
        t = t0 + i * dt
        k1 = rhs(t, y, z1)
        y2 = y + half * k1
        k2 = rhs(t + half, y2, z2)
        y3 = y + half * k2
        k3 = rhs(t + half, y3, z3)
        y4 = y + dt * k3
        k4 = rhs(t + dt, y4, z4)
        stages.append((y, y2, y3, y4))
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("state became non-finite", t=t + dt, step=i + 1)
        ys[i + 1] = y
    ts = t0 + dt * np.arange(n + 1)
    return ts, ys


def path_amplitude(ts: np.ndarray, ys: np.ndarray, window: float) -> float:
    """max of sqrt(x^2 + p^2) over the trailing `window` of the path."""
    t_end = ts[-1]
    mask = ts >= t_end - window
    seg = ys[mask]
    return float(np.max(np.hypot(seg[:, 0], seg[:, 1])))


# ---------------------------------------------------------------------------
# steady states

def _cov_jacobian(vx: float, vp: float, c: float, osc: OscillatorParams, meas: MeasurementParams) -> np.ndarray:
    w, kap = osc.omega, osc.kappa
    g = 2.0 * meas.gamma * meas.eta / osc.hbar
    return np.array(
        [
            [-kap - 2.0 * g * vx, 0.0, 2.0 * w],
            [0.0, -kap, -2.0 * w - 2.0 * g * c],
            [-w - g * c, w, -kap - g * vx],
        ]
    )


def conditional_cov_steady(
    osc: OscillatorParams,
    meas: MeasurementParams,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[float, float, float]:
    """Steady conditional covariances via damped Newton on the algebraic system.

    Starts from the free steady state hbar*(n_B + 1/2); falls back to
    integrating the covariance flow to convergence if Newton stalls.
    """
    free = osc.hbar * (osc.n_bath + 0.5)
    y = np.array([free, free, 0.0])

    def f(v):
        return np.array(conditional_cov_rhs(v[0], v[1], v[2], osc, meas))

    scale = max(1.0, osc.hbar, free)
    for _ in range(max_iter):
        r = f(y)
        if np.max(np.abs(r)) <= tol * scale:
            return float(y[0]), float(y[1]), float(y[2])
        jac = _cov_jacobian(y[0], y[1], y[2], osc, meas)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        lam, r0 = 1.0, np.linalg.norm(r)
        for _ in range(40):
            trial = y + lam * step
            if trial[0] > 0 and trial[1] > 0 and np.linalg.norm(f(trial)) < r0:
                y = trial
                break
            lam *= 0.5
        else:
            break
    else:
        r = f(y)
        if np.max(np.abs(r)) <= tol * scale:
            return float(y[0]), float(y[1]), float(y[2])

    # Newton stalled; relax along the flow, then report if still unconverged
    rhs = conditional_cov_ode_rhs(osc, meas)
    rate = max(osc.kappa, meas.gamma, osc.omega, 1e-3)
    ts, ys = integrate_ode(rhs, y, (0.0, 50.0 / rate), dt=0.01 / rate)
    y = ys[-1]
    if np.max(np.abs(f(y))) > 1e-9 * scale:
        raise AnalysisError("conditional covariance steady state did not converge")
    return float(y[0]), float(y[1]), float(y[2])


def scheme2_unconditional_cov_steady(
    osc: OscillatorParams, meas: MeasurementParams, k: float
) -> tuple[float, float, float]:
    """Steady unconditional covariances (scheme 2) from the 3x3 linear system."""
    if meas.mode != "quantum":
        raise ParameterError("use the classical-limit module for classical covariances")
    if k != 0.0 and meas.gamma * meas.eta <= 0:
        raise ParameterError("divergent feedback: k != 0 requires gamma*eta > 0")
    w, kap = osc.omega, osc.kappa
    a = np.array(
        [
            [2.0 * k - kap, 0.0, 2.0 * w],
            [0.0, -kap, -2.0 * w],
            [-w, w, k - kap],
        ]
    )
    therm = osc.thermal_diffusion()
    fb_diff = 0.0 if k == 0.0 else osc.hbar * k * k / (2.0 * meas.gamma * meas.eta)
    b = np.array([therm + fb_diff, therm + 0.5 * osc.hbar * meas.gamma, 0.0])
    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise AnalysisError("unconditional covariance system is not stable at this gain")
    v = np.linalg.solve(a, -b)
    return float(v[0]), float(v[1]), float(v[2])
