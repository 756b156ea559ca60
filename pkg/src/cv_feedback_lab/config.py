"""Flat key=value run-configuration files.

One ``key = value`` assignment per line; ``#`` starts a comment.  The key set
is closed: unknown keys abort loading so that typos cannot silently fall back
to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .params import FeedbackConfig, MeasurementParams, OscillatorParams, ReferenceWave

__all__ = ["GridSpec", "RunSettings", "parse_config", "load_config", "build_params", "DEFAULTS"]

_FLOAT_KEYS = {
    "omega", "kappa", "hbar", "beta", "gamma", "eta", "sigma",
    "k", "tau", "y0", "Omega", "phi", "dt", "t_end",
    "grid.x_min", "grid.x_max", "grid.p_min", "grid.p_max",
}
_INT_KEYS = {"seed", "n_traj", "grid.nx", "grid.np"}
_STR_KEYS = {"mode", "scheme"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS

DEFAULTS: dict = {
    "omega": 1.0,
    "kappa": 0.0,
    "hbar": 1.0,
    "beta": math.inf,
    "gamma": 0.0,
    "eta": 1.0,
    "mode": "quantum",
    "scheme": "none",
    "k": 0.0,
    "phi": 0.0,
    "seed": 20250810,
    "t_end": 20.0,
    "n_traj": 500,
    "grid.nx": 256,
    "grid.np": 256,
}


@dataclass(frozen=True)
class GridSpec:
    nx: int = 256
    np_: int = 256
    x_min: float = -6.0
    x_max: float = 6.0
    p_min: float = -6.0
    p_max: float = 6.0

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.p_min, self.p_max)


@dataclass(frozen=True)
class RunSettings:
    """Non-physics knobs extracted from a configuration."""

    seed: int = 20250810
    dt: float | None = None
    t_end: float = 20.0
    n_traj: int = 500
    grid: GridSpec = field(default_factory=GridSpec)


def parse_config(text: str) -> dict:
    """Parse the flat key=value format into a typed dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"line {lineno}: unknown configuration key {key!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)  # accepts 'inf' for beta
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: cannot parse value for {key!r}: {value!r}") from exc
    return out


def load_config(path: str | Path) -> dict:
    return parse_config(Path(path).read_text())


def build_params(cfg: dict) -> tuple[OscillatorParams, MeasurementParams, FeedbackConfig, RunSettings]:
    """Materialize parameter objects with defaults filled in.

    ``cfg`` must have passed :func:`parse_config`; precedence handling (CLI
    over file over defaults) happens in the caller by dict layering.
    """
    merged = dict(DEFAULTS)
    merged.update(cfg)

    osc = OscillatorParams(
        omega=merged["omega"],
        kappa=merged["kappa"],
        hbar=merged["hbar"],
        beta=merged["beta"],
    )
    meas = MeasurementParams(
        gamma=merged["gamma"],
        eta=merged["eta"],
        mode=merged["mode"],
        sigma=merged.get("sigma"),
    )

    scheme = merged["scheme"]
    if scheme == "scheme1":
        if "tau" not in merged:
            raise ConfigurationError("scheme1 requires key 'tau'")
        fb = FeedbackConfig.delayed(k=merged["k"], tau=merged["tau"])
    elif scheme == "scheme2":
        if "y0" not in merged:
            raise ConfigurationError("scheme2 requires key 'y0'")
        fb = FeedbackConfig.tracking(
            k=merged["k"],
            y0=merged["y0"],
            Omega=merged.get("Omega"),
            phi=merged["phi"],
        )
    elif scheme == "none":
        fb = FeedbackConfig.none()
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r}")

    grid = GridSpec(
        nx=merged["grid.nx"],
        np_=merged["grid.np"],
        x_min=merged.get("grid.x_min", GridSpec.x_min),
        x_max=merged.get("grid.x_max", GridSpec.x_max),
        p_min=merged.get("grid.p_min", GridSpec.p_min),
        p_max=merged.get("grid.p_max", GridSpec.p_max),
    )
    run = RunSettings(
        seed=merged["seed"],
        dt=merged.get("dt"),
        t_end=merged["t_end"],
        n_traj=merged["n_traj"],
        grid=grid,
    )
    return osc, meas, fb, run
