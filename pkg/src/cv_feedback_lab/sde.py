"""Ito simulation of conditional means under continuous position monitoring.

Covariances evolve deterministically under the Gaussian closure, so they are
integrated once per parameter set and shared by every trajectory.  Means are
advanced with Euler-Maruyama on a fixed grid; the diffusion coefficients
depend only on the (deterministic) covariances and on the gain, so the
strong order is effectively 1 here and no Milstein correction is needed.

Randomness comes from a counter-based generator (Philox) keyed by
(seed, stream_id): trajectories are reproducible bit-for-bit and independent
of execution order, which makes parallel ensembles deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DelayError, DivergenceError, ParameterError
from .moments import (
    conditional_cov_ode_rhs,
    default_ode_dt,
    integrate_ode,
)
from .params import FeedbackConfig, GaussianState, MeasurementParams, OscillatorParams, ensure_valid

__all__ = [
    "NoiseStream",
    "TrajectoryRecord",
    "EnsembleResult",
    "EnsembleStats",
    "HeisenbergReport",
    "measurement_increment",
    "step_scheme1",
    "step_scheme2",
    "run_trajectory",
    "run_ensemble",
    "ensemble_stats",
    "simulate_conditional_path",
    "default_sde_dt",
]

_MAX_U64 = 2**64


def _philox(seed: int, stream_id: int) -> np.random.Generator:
    if not (0 <= seed < _MAX_U64) or not (0 <= stream_id < _MAX_U64):
        raise ParameterError("seed and stream_id must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | stream_id))


class NoiseStream:
    """Reproducible Wiener increments for one trajectory.

    (seed, stream_id, step) fully determines every increment.  When
    ``delay_steps`` is set, delayed reads return the increment recorded that
    many steps earlier and 0 before the buffer has filled (the system is
    unobserved before t = 0).
    """

    def __init__(self, seed: int, stream_id: int, dt: float, n_steps: int, delay_steps: int = 0):
        if dt <= 0 or n_steps < 1:
            raise ConfigurationError("NoiseStream requires dt > 0 and n_steps >= 1")
        if delay_steps < 0:
            raise DelayError(f"delay_steps must be >= 0, got {delay_steps}")
        self.seed = seed
        self.stream_id = stream_id
        self.dt = dt
        self.delay_steps = delay_steps
        self.increments = _philox(seed, stream_id).normal(0.0, math.sqrt(dt), size=n_steps)

    def dw(self, step: int) -> float:
        return float(self.increments[step])

    def dw_delayed(self, step: int) -> float:
        if self.delay_steps == 0:
            raise DelayError("stream was created without a delay buffer")
        j = step - self.delay_steps
        return float(self.increments[j]) if j >= 0 else 0.0

    def delayed_increments(self) -> np.ndarray:
        """Whole delayed series, zero history before the buffer fills."""
        if self.delay_steps == 0:
            raise DelayError("stream was created without a delay buffer")
        d = self.delay_steps
        out = np.zeros_like(self.increments)
        if d < len(self.increments):
            out[d:] = self.increments[:-d]
        return out


def measurement_increment(
    xc: float, meas: MeasurementParams, osc: OscillatorParams, dt: float, dw: float
):
    """Detector output increment dI = <x>_c dt + noise_amp * dW."""
    return xc * dt + meas.record_noise_amp(osc.hbar) * dw


def step_scheme1(
    x, p, x_tau, vx: float, c: float,
    osc: OscillatorParams, meas: MeasurementParams, k: float,
    dw, dw_tau, dt: float,
):
    """One Euler-Maruyama update of the conditional means under delayed feedback.

    The feedback injects the difference of present and delayed record noise,
    k*sqrt(hbar/2 gamma eta)*(dW - dW_tau), on top of the innovation updates
    proportional to the conditional covariances.
    """
    amp_rec = meas.record_noise_amp(osc.hbar)
    amp_cond = meas.conditioning_amp(osc.hbar)
    w, km = osc.omega, osc.kappa_mean
    dx = (w * p - 0.5 * km * x + k * (x - x_tau)) * dt + k * amp_rec * (dw - dw_tau) + amp_cond * vx * dw
    dp = (-w * x - 0.5 * km * p) * dt + amp_cond * c * dw
    return x + dx, p + dp


def step_scheme2(
    x, p, vx: float, c: float,
    osc: OscillatorParams, meas: MeasurementParams, fb: FeedbackConfig,
    t: float, dw, dt: float,
):
    """One Euler-Maruyama update of the conditional means under reference feedback."""
    amp_cond = meas.conditioning_amp(osc.hbar)
    w, km = osc.omega, osc.kappa_mean
    drift_x = w * p - 0.5 * km * x
    noise_x = amp_cond * vx
    if fb.k != 0.0:
        if fb.reference is None:
            raise ParameterError("scheme2 stepping requires a reference waveform")
        drift_x = drift_x + fb.k * (x - fb.reference.value(t, osc.omega))
        noise_x = noise_x + fb.k * meas.record_noise_amp(osc.hbar)
    dx = drift_x * dt + noise_x * dw
    dp = (-w * x - 0.5 * km * p) * dt + amp_cond * c * dw
    return x + dx, p + dp


@dataclass(frozen=True)
class HeisenbergReport:
    """Empirical monitor of det(covariance) against hbar^2/4 along a run."""

    min_det: float
    t_at_min: float
    bound: float
    violated: bool


@dataclass(frozen=True)
class TrajectoryRecord:
    times: np.ndarray
    xc: np.ndarray
    pc: np.ndarray
    d_i: np.ndarray
    vx: np.ndarray
    vp: np.ndarray
    c: np.ndarray
    seed: int
    stream_id: int


@dataclass(frozen=True)
class EnsembleResult:
    """Sampled conditional-mean paths for a batch of trajectories.

    The covariance series is common to all trajectories (deterministic under
    the Gaussian closure); rows of xc/pc/d_i are ordered by stream_id.
    """

    times: np.ndarray
    xc: np.ndarray
    pc: np.ndarray
    d_i: np.ndarray
    vx: np.ndarray
    vp: np.ndarray
    c: np.ndarray
    seed: int
    stream_ids: tuple[int, ...]
    dt: float
    monitor: HeisenbergReport

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            times=self.times,
            xc=self.xc[i],
            pc=self.pc[i],
            d_i=self.d_i[i],
            vx=self.vx,
            vp=self.vp,
            c=self.c,
            seed=self.seed,
            stream_id=self.stream_ids[i],
        )

    def records(self) -> list[TrajectoryRecord]:
        return [self.record(i) for i in range(len(self.stream_ids))]


def default_sde_dt(osc: OscillatorParams, fb: FeedbackConfig) -> float:
    """Fixed grid: ~2 pi/(2048 omega), refined so tau/dt is an integer."""
    base = 2.0 * math.pi / (2048.0 * osc.omega)
    if fb.scheme == "scheme1":
        if fb.tau is None or fb.tau <= 0:
            raise ParameterError("scheme1 requires tau > 0")
        m = max(256, math.ceil(fb.tau / base))
        return fb.tau / m
    return base


def _monitor(times: np.ndarray, vx: np.ndarray, vp: np.ndarray, c: np.ndarray, hbar: float) -> HeisenbergReport:
    det = vx * vp - c * c
    i = int(np.argmin(det))
    bound = 0.25 * hbar * hbar
    return HeisenbergReport(
        min_det=float(det[i]),
        t_at_min=float(times[i]),
        bound=bound,
        violated=bool(det[i] < bound * (1.0 - 1e-6)),
    )


def _prepare(osc, meas, fb, mean0, cov0, t_end, dt):
    ensure_valid(osc, meas, fb)
    if not meas.gamma > 0:
        raise ParameterError("trajectory simulation requires an active measurement (gamma > 0)")
    if dt is None:
        dt = default_sde_dt(osc, fb)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    # run to the first grid point at or beyond t_end
    n_steps = max(1, math.ceil(t_end / dt - 1e-9))

    delay_steps = 0
    if fb.scheme == "scheme1":
        ratio = fb.tau / dt
        delay_steps = int(round(ratio))
        if delay_steps < 1 or abs(ratio - delay_steps) > 1e-9 * max(1.0, ratio):
            raise DelayError(f"tau/dt = {ratio} must be a positive integer")

    cov_rhs = conditional_cov_ode_rhs(osc, meas)
    _, covs = integrate_ode(cov_rhs, cov0, (0.0, n_steps * dt), dt)
    return dt, n_steps, delay_steps, covs


def _simulate_block(
    osc, meas, fb, mean0, covs, dt, n_steps, delay_steps, seed, stream_ids, record_idx
):
    """Vectorized Euler-Maruyama over a block of streams; one python loop over time."""
    n = len(stream_ids)
    dw_rows = np.empty((n, n_steps))
    for j, sid in enumerate(stream_ids):
        dw_rows[j] = _philox(seed, sid).normal(0.0, math.sqrt(dt), size=n_steps)

    x = np.full(n, float(mean0[0]))
    p = np.full(n, float(mean0[1]))
    amp_rec = meas.record_noise_amp(osc.hbar)
    amp_cond = meas.conditioning_amp(osc.hbar)
    w, km, k = osc.omega, osc.kappa_mean, fb.k

    ns = len(record_idx)
    out_x = np.empty((n, ns))
    out_p = np.empty((n, ns))
    out_di = np.zeros((n, ns))
    rec_pos = {int(s): j for j, s in enumerate(record_idx)}
    if 0 in rec_pos:
        out_x[:, rec_pos[0]] = x
        out_p[:, rec_pos[0]] = p

    scheme1 = fb.scheme == "scheme1"
    scheme2 = fb.scheme == "scheme2"
    x_hist = np.full((delay_steps, n), float(mean0[0])) if scheme1 else None

    for i in range(n_steps):
        vx, _, c = covs[i]
        dw = dw_rows[:, i]
        t = i * dt
        drift_x = w * p - 0.5 * km * x
        drift_p = -w * x - 0.5 * km * p
        noise_x = amp_cond * vx * dw
        if scheme1:
            # ring slot i % delay_steps holds x from step i - delay_steps,
            # or the constant pre-history while the buffer is filling
            slot = i % delay_steps
            x_tau = x_hist[slot].copy()
            j = i - delay_steps
            dw_tau = dw_rows[:, j] if j >= 0 else 0.0
            drift_x = drift_x + k * (x - x_tau)
            noise_x = noise_x + k * amp_rec * (dw - dw_tau)
            x_hist[slot] = x
        elif scheme2 and k != 0.0:
            drift_x = drift_x + k * (x - fb.reference.value(t, osc.omega))
            noise_x = noise_x + k * amp_rec * dw
        d_i = x * dt + amp_rec * dw
        x = x + drift_x * dt + noise_x
        p = p + drift_p * dt + amp_cond * c * dw
        step = i + 1
        if step in rec_pos:
            jrec = rec_pos[step]
            out_x[:, jrec] = x
            out_p[:, jrec] = p
            out_di[:, jrec] = d_i
        if step % 1024 == 0 or step == n_steps:
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
                raise DivergenceError("conditional means diverged", t=step * dt, step=step)
    return out_x, out_p, out_di


def run_ensemble(
    osc: OscillatorParams,
    meas: MeasurementParams,
    fb: FeedbackConfig,
    mean0: tuple[float, float],
    cov0: tuple[float, float, float],
    t_end: float,
    n_traj: int,
    seed: int,
    dt: float | None = None,
    stream_ids: Sequence[int] | None = None,
    record_every: int = 1,
    chunk: int = 512,
) -> EnsembleResult:
    """Simulate an ensemble of conditional trajectories on a common grid.

    Deterministic given (seed, stream_ids) regardless of chunking; the
    covariance flow is integrated once and shared.
    """
    dt, n_steps, delay_steps, covs = _prepare(osc, meas, fb, mean0, cov0, t_end, dt)
    if stream_ids is None:
        stream_ids = tuple(range(n_traj))
    else:
        stream_ids = tuple(stream_ids)
        if len(stream_ids) != n_traj:
            raise ConfigurationError("stream_ids length must equal n_traj")
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    record_idx = np.arange(0, n_steps + 1, record_every)
    if record_idx[-1] != n_steps:
        record_idx = np.append(record_idx, n_steps)

    ns = len(record_idx)
    xs = np.empty((n_traj, ns))
    ps = np.empty((n_traj, ns))
    dis = np.empty((n_traj, ns))
    for lo in range(0, n_traj, chunk):
        hi = min(lo + chunk, n_traj)
        bx, bp, bdi = _simulate_block(
            osc, meas, fb, mean0, covs, dt, n_steps, delay_steps, seed, stream_ids[lo:hi], record_idx
        )
        xs[lo:hi] = bx
        ps[lo:hi] = bp
        dis[lo:hi] = bdi

    times = record_idx * dt
    vx = covs[record_idx, 0]
    vp = covs[record_idx, 1]
    c = covs[record_idx, 2]
    full_times = dt * np.arange(n_steps + 1)
    monitor = _monitor(full_times, covs[:, 0], covs[:, 1], covs[:, 2], osc.hbar)
    return EnsembleResult(
        times=times, xc=xs, pc=ps, d_i=dis, vx=vx, vp=vp, c=c,
        seed=seed, stream_ids=stream_ids, dt=dt, monitor=monitor,
    )


def run_trajectory(
    osc: OscillatorParams,
    meas: MeasurementParams,
    fb: FeedbackConfig,
    mean0: tuple[float, float],
    cov0: tuple[float, float, float],
    t_end: float,
    seed: int,
    stream_id: int = 0,
    dt: float | None = None,
    record_every: int = 1,
) -> TrajectoryRecord:
    """Single conditional trajectory; bit-identical to the same ensemble row."""
    res = run_ensemble(
        osc, meas, fb, mean0, cov0, t_end,
        n_traj=1, seed=seed, dt=dt, stream_ids=[stream_id], record_every=record_every,
    )
    return res.record(0)


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    mean_x: np.ndarray
    sem_x: np.ndarray
    mean_p: np.ndarray
    sem_p: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray


def _column_stats(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, ns = rows.shape
    mean = np.empty(ns)
    var = np.empty(ns)
    for j in range(ns):  # compensated, fixed reduction order over stream rows
        col = rows[:, j]
        m = math.fsum(col) / n
        var[j] = math.fsum((col - m) ** 2) / (n - 1)
        mean[j] = m
    sem = np.sqrt(var / n)
    return mean, sem, var


def ensemble_stats(records) -> EnsembleStats:
    """Per-time mean, unbiased variance, and standard errors over trajectories.

    Accepts an EnsembleResult or a sequence of TrajectoryRecord on a common
    time grid; reduction order is by stream_id with compensated summation.
    """
    if isinstance(records, EnsembleResult):
        order = np.argsort(records.stream_ids)
        times = records.times
        xs = records.xc[order]
        ps = records.pc[order]
    else:
        recs = sorted(records, key=lambda r: r.stream_id)
        if len(recs) < 2:
            raise ConfigurationError("ensemble statistics require at least 2 records")
        times = recs[0].times
        for r in recs[1:]:
            if r.times.shape != times.shape or not np.array_equal(r.times, times):
                raise ConfigurationError("records do not share a common time grid")
        xs = np.stack([r.xc for r in recs])
        ps = np.stack([r.pc for r in recs])
    if xs.shape[0] < 2:
        raise ConfigurationError("ensemble statistics require at least 2 records")
    mean_x, sem_x, var_x = _column_stats(xs)
    mean_p, sem_p, var_p = _column_stats(ps)
    return EnsembleStats(
        times=times, mean_x=mean_x, sem_x=sem_x, mean_p=mean_p, sem_p=sem_p, var_x=var_x, var_p=var_p
    )


def simulate_conditional_path(
    osc: OscillatorParams,
    meas: MeasurementParams,
    fb: FeedbackConfig,
    mean0: tuple[float, float],
    cov0: tuple[float, float, float],
    t_end: float,
    dt: float,
    dw: np.ndarray,
    dw_tau: np.ndarray | None = None,
):
    """Gaussian-closure path driven by an externally supplied noise sequence.

    Used for shared-noise comparisons against the phase-space grid.  Returns
    (times, x, p, vx, vp, c) sampled at every step.
    """
    dt_, n_steps, delay_steps, covs = _prepare(osc, meas, fb, mean0, cov0, t_end, dt)
    if len(dw) != n_steps:
        raise ConfigurationError(f"noise sequence must have {n_steps} entries, got {len(dw)}")
    if fb.scheme == "scheme1":
        if dw_tau is None:
            raise DelayError("scheme1 path requires the delayed noise sequence")
    x = np.empty(n_steps + 1)
    p = np.empty(n_steps + 1)
    x[0], p[0] = mean0
    x_hist = np.full(delay_steps, float(mean0[0])) if delay_steps else None
    for i in range(n_steps):
        vx, _, c = covs[i]
        t = i * dt
        if fb.scheme == "scheme1":
            x_tau = x_hist[i % delay_steps] if i >= delay_steps else float(mean0[0])
            xn, pn = step_scheme1(
                x[i], p[i], x_tau, vx, c, osc, meas, fb.k, float(dw[i]), float(dw_tau[i]), dt
            )
            x_hist[i % delay_steps] = x[i]
        else:
            xn, pn = step_scheme2(x[i], p[i], vx, c, osc, meas, fb, t, float(dw[i]), dt)
        x[i + 1], p[i + 1] = xn, pn
    times = dt * np.arange(n_steps + 1)
    return times, x, p, covs[:, 0], covs[:, 1], covs[:, 2]
