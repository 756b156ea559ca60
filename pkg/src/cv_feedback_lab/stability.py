"""Linear stability of the averaged delayed-feedback system.

Exponential ansatz on the linear delay system

    x' = omega p - kappa/2 x + k (x - x(t - tau)),
    p' = -omega x - kappa/2 p

gives the transcendental characteristic function

    f(lambda) = (lambda + kappa/2)(lambda + kappa/2 - k(1 - e^{-lambda tau})) + omega^2.

The fixed point is stable iff the rightmost root has negative real part.
Roots are found by multistart complex Newton (the function has infinitely
many roots; only the rightmost matters), and classifications are
cross-checked against direct integration of the delay equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError, ParameterError
from .moments import integrate_dde, path_amplitude, scheme1_mean_dde_rhs
from .params import OscillatorParams

__all__ = [
    "CharacteristicProblem",
    "char_fn",
    "char_fn_deriv",
    "rightmost_root",
    "critical_gain",
    "simulate_classify",
    "stability_chart",
    "ChartCell",
]


@dataclass(frozen=True)
class CharacteristicProblem:
    omega: float
    kappa: float
    k: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")


def char_fn(lam, cp: CharacteristicProblem):
    """Residual of the characteristic equation at lambda (vectorizes)."""
    half = lam + 0.5 * cp.kappa
    return half * (half - cp.k * (1.0 - np.exp(-lam * cp.tau))) + cp.omega**2


def char_fn_deriv(lam, cp: CharacteristicProblem):
    half = lam + 0.5 * cp.kappa
    e = np.exp(-lam * cp.tau)
    g = half - cp.k * (1.0 - e)
    return g + half * (1.0 - cp.k * cp.tau * e)


def rightmost_root(
    cp: CharacteristicProblem,
    n_re: int = 20,
    n_im: int = 20,
    residual_tol: float = 1e-10,
    max_iter: int = 80,
) -> complex:
    """Root with maximal real part among converged Newton multistarts.

    Seeds cover Re in [-2 kappa - k, k + kappa], Im in [0, omega + 2 pi/tau];
    duplicates are merged at distance 1e-6.  Conjugate roots are reported with
    non-negative imaginary part.
    """
    res = np.linspace(-2.0 * cp.kappa - cp.k, cp.k + cp.kappa, n_re)
    ims = np.linspace(0.0, cp.omega + 2.0 * math.pi / cp.tau, n_im)
    lam = (res[:, None] + 1j * ims[None, :]).ravel().astype(complex)

    bound = 10.0 * (abs(cp.omega) + abs(cp.kappa) + abs(cp.k) + 2.0 * math.pi / cp.tau + 1.0)
    for _ in range(max_iter):
        f = char_fn(lam, cp)
        df = char_fn_deriv(lam, cp)
        ok = np.abs(df) > 1e-14
        step = np.zeros_like(lam)
        step[ok] = f[ok] / df[ok]
        lam = lam - step
        lam[np.abs(lam) > bound] = np.nan

    f = char_fn(lam, cp)
    good = np.isfinite(lam) & (np.abs(f) <= residual_tol)
    if not np.any(good):
        raise AnalysisError("no characteristic root converged from any seed")
    roots = lam[good]
    roots = np.where(roots.imag < 0, roots.conj(), roots)  # conjugate-pair symmetry
    keys = {}
    for r in roots:
        keys[(round(r.real, 6), round(r.imag, 6))] = r
    merged = list(keys.values())
    best = max(merged, key=lambda r: r.real)
    return complex(best)


def critical_gain(tau: float, osc: OscillatorParams, k_range: tuple[float, float], tol: float = 1e-8) -> float:
    """Gain at which the rightmost root crosses the imaginary axis (bisection)."""
    k_lo, k_hi = k_range
    if not k_hi > k_lo:
        raise ParameterError("k_range must be increasing")

    def re_root(k: float) -> float:
        return rightmost_root(CharacteristicProblem(osc.omega, osc.kappa, k, tau)).real

    f_lo = re_root(k_lo)
    if abs(f_lo) <= tol:
        return k_lo
    f_hi = re_root(k_hi)
    if abs(f_hi) <= tol:
        return k_hi
    if f_lo * f_hi > 0:
        raise AnalysisError(
            f"Re(rightmost root) has the same sign at both endpoints ({f_lo:.3e}, {f_hi:.3e})"
        )
    lo, hi = k_lo, k_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = re_root(mid)
        if abs(f_mid) <= tol:
            return mid
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def simulate_classify(
    cp: CharacteristicProblem,
    horizon: float = 80.0,
    dt: float | None = None,
    tol: float = 0.02,
) -> str:
    """Classify by integration: amplitude ratio between t=horizon and t=horizon/2.

    Ratio above 1+tol is unstable, below 1-tol stable, otherwise marginal.
    The +-2% band keeps the classification robust to transients.
    """
    osc = OscillatorParams(omega=cp.omega, kappa=cp.kappa)
    if dt is None:
        dt = cp.tau / 128.0
    n_half = int(round((0.5 * horizon) / dt))
    span = (0.0, 2 * n_half * dt)  # even number of steps so the midpoint is on-grid
    rhs = scheme1_mean_dde_rhs(osc, cp.k)
    ts, ys = integrate_dde(rhs, (1.0, 0.0), cp.tau, span, dt)
    mid_mask = ts <= ts[-1] / 2.0
    amp_mid = path_amplitude(ts[mid_mask], ys[mid_mask], cp.tau)
    amp_end = path_amplitude(ts, ys, cp.tau)
    if amp_mid <= 0:
        return "stable"
    ratio = amp_end / amp_mid
    if ratio > 1.0 + tol:
        return "unstable"
    if ratio < 1.0 - tol:
        return "stable"
    return "marginal"


@dataclass(frozen=True)
class ChartCell:
    k: float
    tau: float
    re_lambda: float
    classification: str


def stability_chart(
    osc: OscillatorParams,
    k_values,
    tau_values,
    horizon: float = 80.0,
) -> list[ChartCell]:
    """Root finder and simul-classification over a (k, tau) grid."""
    cells = []
    for tau in tau_values:
        for k in k_values:
            cp = CharacteristicProblem(osc.omega, osc.kappa, k, tau)
            lam = rightmost_root(cp)
            cls = simulate_classify(cp, horizon=horizon)
            cells.append(ChartCell(k=float(k), tau=float(tau), re_lambda=lam.real, classification=cls))
    return cells
