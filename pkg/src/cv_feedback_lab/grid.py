"""Finite-difference evolution of phase-space (quasi-)probability fields.

Fields live on a cell-centered uniform lattice with zero-flux boundaries, so
the conservative flux form preserves mass to rounding; every step
renormalizes against whatever discretization residue remains.  Advection and
diffusion are combined per axis into hybrid face fluxes: central
differencing wherever the cell Peclet number is below 2 (no spurious
variance pumping, so the thermal equilibrium state stays stationary far
below the moment tolerances) and a diffusion floor of |v| h/2 beyond, which
is plain upwinding on the low-mass outskirts and on any axis that carries no
diffusion.  Pure first-order upwinding everywhere was measured to pump the
variances by ~4e-2 per unit time at the default 256^2 resolution, orders of
magnitude above the stationarity targets this module has to meet.

The stochastic measurement and feedback-noise updates act multiplicatively
and through an x-gradient shift respectively; both integrate to zero
analytically and are renormalized after application.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GridIntegrityError, ParameterError, StepSizeError
from .params import FeedbackConfig, MeasurementParams, OscillatorParams

__all__ = [
    "GridField",
    "GridMoments",
    "FpeCoefficients",
    "coefficients_for",
    "fpe_step",
    "measurement_update",
    "feedback_noise_update",
    "FpeStepper",
    "covariance_rhs_from_coefficients",
    "covariance_steady_from_coefficients",
    "evolve_conditional",
    "GridTrace",
    "bounds_for_sigma",
]

log = logging.getLogger(__name__)

_CLAMP_FLOOR = -1e-12


@dataclass(frozen=True)
class GridMoments:
    mean_x: float
    mean_p: float
    v_x: float
    v_p: float
    c: float
    k3_x: float
    k3_xxp: float
    k3_xpp: float
    k3_p: float
    mass: float


class GridField:
    """Discretized W(x, p) on a cell-centered uniform lattice."""

    def __init__(self, values: np.ndarray, bounds: tuple[float, float, float, float]):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ParameterError("grid values must be a 2-d array")
        x_min, x_max, p_min, p_max = bounds
        if not (x_max > x_min and p_max > p_min):
            raise ParameterError(f"degenerate grid bounds {bounds}")
        self.values = values
        self.bounds = (float(x_min), float(x_max), float(p_min), float(p_max))
        nx, np_ = values.shape
        self.hx = (x_max - x_min) / nx
        self.hp = (p_max - p_min) / np_
        self.xs = x_min + (np.arange(nx) + 0.5) * self.hx
        self.ps = p_min + (np.arange(np_) + 0.5) * self.hp

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def cell_area(self) -> float:
        return self.hx * self.hp

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.bounds)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def renormalized(self) -> "GridField":
        m = self.mass()
        if m <= 0:
            raise GridIntegrityError(f"field mass {m:.3e} is not positive")
        return self.with_values(self.values / m)

    def moments(self, mass_tol: float = 1e-3) -> GridMoments:
        """Midpoint-rule moments, with third cumulants for closure validation."""
        m = self.mass()
        if abs(m - 1.0) > mass_tol:
            raise GridIntegrityError(f"field mass {m:.6f} deviates from 1 by more than {mass_tol}")
        w = self.values * self.cell_area / m
        px = w.sum(axis=1)
        pp = w.sum(axis=0)
        mean_x = float(px @ self.xs)
        mean_p = float(pp @ self.ps)
        dx = self.xs - mean_x
        dp = self.ps - mean_p
        v_x = float(px @ dx**2)
        v_p = float(pp @ dp**2)
        c = float(dx @ w @ dp)
        k3_x = float(px @ dx**3)
        k3_p = float(pp @ dp**3)
        k3_xxp = float(dx**2 @ w @ dp)
        k3_xpp = float(dx @ w @ dp**2)
        return GridMoments(mean_x, mean_p, v_x, v_p, c, k3_x, k3_xxp, k3_xpp, k3_p, m)

    @classmethod
    def gaussian(
        cls,
        bounds: tuple[float, float, float, float],
        shape: tuple[int, int],
        mean: tuple[float, float],
        cov: tuple[float, float, float],
    ) -> "GridField":
        """Normalized Gaussian field with covariance (v_x, v_p, c)."""
        v_x, v_p, c = cov
        det = v_x * v_p - c * c
        if det <= 0:
            raise ParameterError("Gaussian field needs a positive-definite covariance")
        field = cls(np.zeros(shape), bounds)
        dx = field.xs[:, None] - mean[0]
        dp = field.ps[None, :] - mean[1]
        q = (v_p * dx**2 - 2.0 * c * dx * dp + v_x * dp**2) / det
        field.values[:] = np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))
        return field.renormalized()


def bounds_for_sigma(
    sigma_max: float, center: tuple[float, float] = (0.0, 0.0), n_sigma: float = 6.0
) -> tuple[float, float, float, float]:
    """Default domain: +-n_sigma standard deviations around the center."""
    r = n_sigma * sigma_max
    return (center[0] - r, center[0] + r, center[1] - r, center[1] + r)


@dataclass(frozen=True)
class FpeCoefficients:
    """Affine drift and constant diffusion of a phase-space equation.

    Drift is d_x = a_xx x + a_xp p + drive_x(t), d_p = a_px x + a_pp p; the
    diffusion matrix is written in the 1/2 * del . D . del convention.
    """

    a_xx: float
    a_xp: float
    a_px: float
    a_pp: float
    d_xx: float
    d_pp: float
    d_xp: float = 0.0
    drive_x: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.d_xx < 0 or self.d_pp < 0 or self.d_xx * self.d_pp - self.d_xp**2 < -1e-12:
            raise ParameterError("diffusion matrix must be positive semidefinite")

    def drive(self, t: float) -> float:
        return 0.0 if self.drive_x is None else float(self.drive_x(t))

    def drift_x(self, x, p, t: float):
        return self.a_xx * x + self.a_xp * p + self.drive(t)

    def drift_p(self, x, p, t: float):
        return self.a_px * x + self.a_pp * p


def coefficients_for(
    osc: OscillatorParams,
    meas: MeasurementParams,
    fb: FeedbackConfig,
    delayed_mean: Callable[[float], float] | None = None,
) -> FpeCoefficients:
    """Drift and diffusion tables for the (conditional) phase-space equation.

    Quantum mode carries the bath diffusion kappa*hbar*(1+2 n_B)/2 on both
    axes plus the measurement back-action hbar*gamma/2 on p; classical mode
    carries kappa/(beta*omega) on both axes and no back-action.  An active
    feedback adds k to the x-drift slope, the reference or delayed-mean drive,
    and its noise diffusion on x: hbar*k^2/(2 gamma eta) for the reference
    scheme and twice that for the delayed scheme (the noise difference
    dW - dW_tau carries double variance).
    """
    km = osc.kappa_mean
    a_xx, a_xp, a_px, a_pp = -0.5 * km, osc.omega, -osc.omega, -0.5 * km

    if meas.mode == "quantum":
        d_xx = d_pp = osc.thermal_diffusion()
        if meas.gamma > 0:
            d_pp += 0.5 * osc.hbar * meas.gamma
    elif meas.mode == "classical":
        d_xx = d_pp = 0.0 if math.isinf(osc.beta) else osc.kappa / (osc.beta * osc.omega)
    else:
        raise ParameterError(f"unknown mode {meas.mode!r}")

    drive = None
    if fb.active:
        if meas.mode == "quantum":
            if meas.gamma * meas.eta <= 0:
                raise ParameterError("divergent coefficient: feedback requires gamma*eta > 0")
            unit = osc.hbar / (meas.gamma * meas.eta)
        else:
            if meas.gamma <= 0 or meas.sigma is None or meas.sigma <= 0:
                raise ParameterError("divergent coefficient: feedback requires gamma > 0 and sigma > 0")
            unit = meas.sigma / meas.gamma
        k = fb.k
        a_xx += k
        if fb.scheme == "scheme1":
            if delayed_mean is None:
                raise ParameterError("scheme1 coefficients need the delayed conditional mean")
            d_xx += k * k * unit
            drive = lambda t: -k * delayed_mean(t)
        elif fb.scheme == "scheme2":
            if fb.reference is None:
                raise ParameterError("scheme2 coefficients need a reference waveform")
            d_xx += 0.5 * k * k * unit
            ref = fb.reference
            drive = lambda t: -k * ref.value(t, osc.omega)

    return FpeCoefficients(a_xx, a_xp, a_px, a_pp, d_xx, d_pp, 0.0, drive)


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """B(z) = z/(exp(z)-1), stable for small and large arguments."""
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    out[small] = 1.0 - 0.5 * z[small]
    zb = z[~small]
    with np.errstate(over="ignore"):
        out[~small] = zb / np.expm1(zb)
    return out


class FpeStepper:
    """Explicit conservative stepper for one drift-diffusion coefficient set.

    Face geometry and the static part of the drift are precomputed once; the
    time-dependent drive only shifts the x-drift uniformly.
    """

    def __init__(self, field: GridField, co: FpeCoefficients):
        self.co = co
        self.hx, self.hp = field.hx, field.hp
        xs, ps = field.xs, field.ps
        x_faces = xs[:-1] + 0.5 * field.hx
        p_faces = ps[:-1] + 0.5 * field.hp
        # drift normal to each interior face, shapes (nx-1, np) and (nx, np-1)
        self._fx_static = co.a_xx * x_faces[:, None] + co.a_xp * ps[None, :]
        self._fp_static = co.a_px * xs[:, None] + co.a_pp * p_faces[None, :]
        x_min, x_max, p_min, p_max = field.bounds
        ex = max(abs(x_min), abs(x_max))
        ep = max(abs(p_min), abs(p_max))
        self._dx_bound_static = abs(co.a_xx) * ex + abs(co.a_xp) * ep
        self._dp_bound = abs(co.a_px) * ex + abs(co.a_pp) * ep
        self._wp = self._flux_weights(self._fp_static, co.d_pp, self.hp)
        self._wx: tuple[np.ndarray, np.ndarray] | None = None
        self._wx_drive = math.nan
        nx, np_ = field.shape
        self._vel = np.empty((nx - 1, np_))
        self._deff = np.empty((nx - 1, np_))
        self._wxl = np.empty((nx - 1, np_))
        self._wxh = np.empty((nx - 1, np_))
        self._fx = np.empty((nx - 1, np_))
        self._fp = np.empty((nx, np_ - 1))
        self._tmp_x = np.empty((nx - 1, np_))
        self._tmp_p = np.empty((nx, np_ - 1))
        self._out = np.empty((nx, np_))

    def cfl_limit(self, t: float) -> float:
        """dt bound 0.4*min(hx/|dx|, hp/|dp|, hx^2/2Dxx, hp^2/2Dpp)."""
        co = self.co
        dx_max = self._dx_bound_static + abs(co.drive(t))
        terms = []
        if dx_max > 0:
            terms.append(self.hx / dx_max)
        if self._dp_bound > 0:
            terms.append(self.hp / self._dp_bound)
        if co.d_xx > 0:
            terms.append(self.hx**2 / (2.0 * co.d_xx))
        if co.d_pp > 0:
            terms.append(self.hp**2 / (2.0 * co.d_pp))
        return 0.4 * min(terms) if terms else math.inf

    @staticmethod
    def _flux_weights(vel: np.ndarray, diff: float, h: float) -> tuple[np.ndarray, np.ndarray]:
        """(w_lo, w_hi) with face flux F = w_lo*W_lo + w_hi*W_hi.

        The flux is F = v W - (D/2) dW/dn in the 1/2 del.D.del convention.
        The diffusive weight is floored at |v| h/2, so faces with cell Peclet
        number below 2 get exact central differencing (no spurious variance
        pumping) while steeper faces degrade to plain upwinding; with D = 0
        the formula is upwinding exactly.
        """
        d_eff = np.maximum(0.5 * diff, 0.5 * np.abs(vel) * h)
        return 0.5 * vel + d_eff / h, 0.5 * vel - d_eff / h

    def _refresh_x_weights(self, drive: float) -> None:
        co = self.co
        if self._wx is not None and drive == self._wx_drive:
            return
        np.add(self._fx_static, drive, out=self._vel)
        np.abs(self._vel, out=self._deff)
        self._deff *= 0.5 * self.hx
        if co.d_xx > 0:
            np.maximum(self._deff, 0.5 * co.d_xx, out=self._deff)
        self._deff /= self.hx
        np.multiply(self._vel, 0.5, out=self._wxl)
        np.subtract(self._wxl, self._deff, out=self._wxh)
        self._wxl += self._deff
        self._wx = (self._wxl, self._wxh)
        self._wx_drive = drive

    def rate(self, w: np.ndarray, t: float) -> np.ndarray:
        """dW/dt from the conservative flux divergence (zero-flux boundaries).

        Returns an internal scratch buffer, overwritten by the next call.
        """
        co = self.co
        self._refresh_x_weights(co.drive(t))
        wxl, wxh = self._wx
        wpl, wph = self._wp
        fx, fp, out = self._fx, self._fp, self._out
        np.multiply(wxl, w[:-1, :], out=fx)
        np.multiply(wxh, w[1:, :], out=self._tmp_x)
        fx += self._tmp_x
        fx /= self.hx
        np.multiply(wpl, w[:, :-1], out=fp)
        np.multiply(wph, w[:, 1:], out=self._tmp_p)
        fp += self._tmp_p
        fp /= self.hp
        out.fill(0.0)
        out[:-1, :] -= fx
        out[1:, :] += fx
        out[:, :-1] -= fp
        out[:, 1:] += fp
        if co.d_xp != 0.0:
            out[1:-1, 1:-1] += (co.d_xp / (4.0 * self.hx * self.hp)) * (
                w[2:, 2:] - w[2:, :-2] - w[:-2, 2:] + w[:-2, :-2]
            )
        return out

    def step_values(self, w: np.ndarray, t: float, dt: float) -> np.ndarray:
        limit = self.cfl_limit(t)
        if dt > limit:
            raise StepSizeError(f"dt={dt:.3e} violates the stability bound {limit:.3e}")
        return w + dt * self.rate(w, t)


def _finalize(field: GridField, values: np.ndarray, mode: str) -> tuple[GridField, int]:
    clamped = 0
    if mode == "classical":
        neg = values < _CLAMP_FLOOR
        clamped = int(np.count_nonzero(neg))
        if clamped:
            values = np.where(neg, 0.0, values)
    return field.with_values(values).renormalized(), clamped


def fpe_step(field: GridField, co: FpeCoefficients, dt: float, t: float = 0.0, mode: str = "quantum") -> GridField:
    """One explicit drift-diffusion step; raises StepSizeError on a CFL violation."""
    stepper = FpeStepper(field, co)
    values = stepper.step_values(field.values, t, dt)
    out, clamped = _finalize(field, values, mode)
    if clamped:
        log.warning("clamped %d negative classical density cells", clamped)
    return out


def measurement_update(field: GridField, dw: float, meas: MeasurementParams, osc: OscillatorParams) -> GridField:
    """Conditioning kick W <- W + dW * amp * (x - <x>) W, then renormalize.

    The update integrates to zero analytically because <x> is computed from
    the current grid, so only discretization rounding is renormalized away.
    """
    amp = meas.conditioning_amp(osc.hbar)
    w = field.values
    tot = w.sum()
    if tot <= 0:
        raise GridIntegrityError("cannot condition a field with non-positive mass")
    mean_x = float((w.sum(axis=1) @ field.xs) / tot)
    values = w * (1.0 + amp * dw * (field.xs[:, None] - mean_x))
    out, clamped = _finalize(field, values, meas.mode)
    if clamped:
        log.warning("clamped %d negative classical density cells after conditioning", clamped)
    return out


def feedback_noise_update(
    field: GridField,
    dw: float,
    k: float,
    meas: MeasurementParams,
    osc: OscillatorParams,
    dw_tau: float = 0.0,
) -> GridField:
    """Feedback noise shift W <- W - k*amp*(dW - dW_tau) dW/dx (centered)."""
    shift = k * meas.record_noise_amp(osc.hbar) * (dw - dw_tau)
    if shift == 0.0:
        return field
    grad = np.gradient(field.values, field.hx, axis=0)
    out, clamped = _finalize(field, field.values - shift * grad, meas.mode)
    if clamped:
        log.warning("clamped %d negative classical density cells after feedback noise", clamped)
    return out


# ---------------------------------------------------------------------------
# moment flows induced by a coefficient table (linear drift, constant D)

def covariance_rhs_from_coefficients(co: FpeCoefficients, vx: float, vp: float, c: float):
    """d/dt of (Vx, Vp, C) under the drift matrix A and diffusion D: AV+VA^T+D."""
    dvx = 2.0 * (co.a_xx * vx + co.a_xp * c) + co.d_xx
    dvp = 2.0 * (co.a_px * c + co.a_pp * vp) + co.d_pp
    dc = co.a_px * vx + co.a_xp * vp + (co.a_xx + co.a_pp) * c + co.d_xp
    return dvx, dvp, dc


def covariance_steady_from_coefficients(co: FpeCoefficients) -> tuple[float, float, float]:
    """Stationary (Vx, Vp, C) of the linear covariance flow; requires stability."""
    a = np.array(
        [
            [2.0 * co.a_xx, 0.0, 2.0 * co.a_xp],
            [0.0, 2.0 * co.a_pp, 2.0 * co.a_px],
            [co.a_px, co.a_xp, co.a_xx + co.a_pp],
        ]
    )
    b = np.array([co.d_xx, co.d_pp, co.d_xp])
    from .errors import AnalysisError

    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise AnalysisError("covariance flow is not stable; no attracting steady state")
    v = np.linalg.solve(a, -b)
    return float(v[0]), float(v[1]), float(v[2])


# ---------------------------------------------------------------------------
# conditional evolution driver

@dataclass(frozen=True)
class GridTrace:
    """Moment series sampled along a conditional grid evolution."""

    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    v_x: np.ndarray
    v_p: np.ndarray
    c: np.ndarray
    k3_x: np.ndarray
    k3_xxp: np.ndarray
    k3_xpp: np.ndarray
    k3_p: np.ndarray
    max_mass_defect: float


def evolve_conditional(
    field: GridField,
    osc: OscillatorParams,
    meas: MeasurementParams,
    fb: FeedbackConfig,
    t_end: float,
    dt: float,
    dw: np.ndarray,
    dw_tau: np.ndarray | None = None,
    sample_every: int = 10,
    mass_tol: float = 1e-6,
) -> tuple[GridTrace, GridField]:
    """Drive the conditional field: deterministic step, conditioning, feedback kick.

    The operator order matches causality (feedback acts after the
    measurement).  Mass is audited before each renormalization; a composite
    step whose raw mass drifts beyond ``mass_tol`` raises GridIntegrityError.
    """
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise StepSizeError(f"t_end={t_end} is not a multiple of dt={dt}")
    if len(dw) < n_steps:
        raise ParameterError(f"noise sequence has {len(dw)} entries, need {n_steps}")

    delayed_mean_box = {"value": 0.0}
    if fb.scheme == "scheme1":
        if dw_tau is None:
            raise ParameterError("scheme1 evolution requires the delayed noise sequence")
        if fb.tau is None:
            raise ParameterError("scheme1 requires tau")
        ratio = fb.tau / dt
        delay_steps = int(round(ratio))
        if delay_steps < 1 or abs(ratio - delay_steps) > 1e-9 * max(1.0, ratio):
            raise StepSizeError(f"tau/dt = {ratio} must be a positive integer")
        m0 = field.moments().mean_x
        mean_hist = [m0] * delay_steps
        delayed_mean_box["value"] = m0
        co = coefficients_for(osc, meas, fb, delayed_mean=lambda t: delayed_mean_box["value"])
    else:
        delay_steps = 0
        mean_hist = []
        co = coefficients_for(osc, meas, fb)

    stepper = FpeStepper(field, co)
    area = field.cell_area
    samples = [0] + [s for s in range(sample_every, n_steps + 1, sample_every)]
    if samples[-1] != n_steps:
        samples.append(n_steps)
    sample_set = set(samples)

    mom0 = field.moments()
    out = {name: [getattr(mom0, name)] for name in
           ("mean_x", "mean_p", "v_x", "v_p", "c", "k3_x", "k3_xxp", "k3_xpp", "k3_p")}
    times = [0.0]
    max_defect = 0.0
    clamp_total = 0

    w = field.values.copy()
    amp = meas.conditioning_amp(osc.hbar)
    fb_amp = fb.k * meas.record_noise_amp(osc.hbar) if fb.active else 0.0
    xs_col = field.xs[:, None]
    col = np.empty_like(xs_col)
    stoch = np.empty_like(w)
    grad = np.empty_like(w) if fb_amp else None
    inv_2hx = 1.0 / (2.0 * field.hx)
    for i in range(n_steps):
        t = i * dt
        if delay_steps:
            # ring slot i % delay holds the grid mean from step i - delay (or
            # the constant pre-history); replace it with the current mean for
            # the read at step i + delay
            slot = i % delay_steps
            delayed_mean_box["value"] = mean_hist[slot]
            px_now = w.sum(axis=1)
            mean_hist[slot] = float((px_now @ field.xs) / px_now.sum())

        dwdt = stepper.rate(w, t)
        dwdt *= dt
        w = w + dwdt
        m = w.sum() * area
        max_defect = max(max_defect, abs(m - 1.0))
        if abs(m - 1.0) > mass_tol:
            raise GridIntegrityError(f"mass defect {m - 1.0:.3e} exceeds {mass_tol} at t={t:.4f}")
        w /= m

        # conditioning and feedback-noise kicks share one Wiener increment
        # and act on the same field: applying them sequentially would lose
        # their quadratic-variation cross term (a spurious +2k Vx dt drift)
        px = w.sum(axis=1)
        mean_x = float((px @ field.xs) / px.sum())
        np.subtract(xs_col, mean_x, out=col)
        np.multiply(w, col, out=stoch)
        stoch *= amp * float(dw[i])
        if fb_amp:
            shift = fb_amp * (float(dw[i]) - (float(dw_tau[i]) if delay_steps else 0.0))
            if shift != 0.0:
                np.subtract(w[2:, :], w[:-2, :], out=grad[1:-1, :])
                grad[1:-1, :] *= inv_2hx
                grad[0, :] = (w[1, :] - w[0, :]) / field.hx
                grad[-1, :] = (w[-1, :] - w[-2, :]) / field.hx
                grad *= shift
                stoch -= grad
        w += stoch
        m = w.sum() * area
        max_defect = max(max_defect, abs(m - 1.0))
        if abs(m - 1.0) > mass_tol:
            raise GridIntegrityError(f"mass defect {m - 1.0:.3e} exceeds {mass_tol} at t={t:.4f}")
        w /= m

        if meas.mode == "classical":
            neg = w < _CLAMP_FLOOR
            n_neg = int(np.count_nonzero(neg))
            if n_neg:
                clamp_total += n_neg
                w = np.where(neg, 0.0, w)
                w /= w.sum() * area

        step = i + 1
        if step in sample_set:
            mom = field.with_values(w).moments()
            times.append(step * dt)
            for name in out:
                out[name].append(getattr(mom, name))

    if clamp_total:
        log.warning("clamped %d negative classical density cells during evolution", clamp_total)

    trace = GridTrace(
        times=np.array(times),
        mean_x=np.array(out["mean_x"]),
        mean_p=np.array(out["mean_p"]),
        v_x=np.array(out["v_x"]),
        v_p=np.array(out["v_p"]),
        c=np.array(out["c"]),
        k3_x=np.array(out["k3_x"]),
        k3_xxp=np.array(out["k3_xxp"]),
        k3_xpp=np.array(out["k3_xpp"]),
        k3_p=np.array(out["k3_p"]),
        max_mass_defect=max_defect,
    )
    return trace, field.with_values(w)
