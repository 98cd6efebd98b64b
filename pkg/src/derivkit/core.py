"""Shared data model and small numerical primitives.

Signals are dense arrays of 64-bit reals on strictly increasing sample
grids. Uniform spacing is detected at construction time; irregular grids
are first-class and are never silently resampled. All containers are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

#: Relative tolerance used to decide whether a grid is uniformly spaced.
UNIFORM_RTOL = 1e-9


class ValidationError(ValueError):
    """Input data or parameters violate a documented invariant."""


class UnsupportedMethodError(ValidationError):
    """The requested method cannot operate on this input (e.g. irregular grid)."""


class NumericError(RuntimeError):
    """A numerical step failed (singular system, diverged solve, ...)."""


class ConditioningWarning(UserWarning):
    """A linear system was solved despite a very large condition number."""


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid:
    """Sample locations of the independent variable.

    Parameters
    ----------
    points : array_like
        Strictly increasing timestamps (seconds or unitless), length >= 2.

    Attributes
    ----------
    uniform : bool
        True when all steps agree with the mean step to ``UNIFORM_RTOL``.
    dt : float or None
        The common step when uniform, otherwise None.
    """

    points: np.ndarray
    uniform: bool = field(init=False)
    dt: float | None = field(init=False)

    def __post_init__(self):
        pts = _as_float_array(self.points, "grid points")
        _check_grid_points(pts)
        object.__setattr__(self, "points", _freeze(pts))
        steps = np.diff(pts)
        dt = (pts[-1] - pts[0]) / (len(pts) - 1)
        uniform = bool(np.max(np.abs(steps - dt)) <= UNIFORM_RTOL * dt)
        object.__setattr__(self, "uniform", uniform)
        object.__setattr__(self, "dt", float(dt) if uniform else None)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @staticmethod
    def regular(n: int, dt: float, t0: float = 0.0) -> "Grid":
        """Uniform grid of ``n`` points spaced ``dt`` starting at ``t0``."""
        return Grid(t0 + dt * np.arange(n))


@dataclass(frozen=True)
class Signal:
    """A grid plus one real measurement per sample."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _as_float_array(self.values, "signal values")
        _check_signal_values(self.grid, vals)
        object.__setattr__(self, "values", _freeze(vals))

    def __len__(self) -> int:
        return len(self.grid)

    @property
    def t(self) -> np.ndarray:
        return self.grid.points

    @staticmethod
    def from_arrays(t, y) -> "Signal":
        return Signal(Grid(t), y)


@dataclass(frozen=True)
class DerivativeResult:
    """Smoothed signal and derivative estimates with provenance.

    ``flags`` carries solver diagnostics (convergence, conditioning) that
    do not change the shape contract.
    """

    smoothed: np.ndarray
    derivative: np.ndarray
    method: str
    phi: Mapping[str, float] = field(default_factory=dict)
    flags: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        sm = _as_float_array(self.smoothed, "smoothed")
        dv = _as_float_array(self.derivative, "derivative")
        if len(sm) != len(dv):
            raise ValidationError(
                f"smoothed and derivative lengths differ: {len(sm)} vs {len(dv)}"
            )
        for name, arr in (("smoothed", sm), ("derivative", dv)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise ValidationError(f"{name} contains non-finite value at index {bad[0]}")
        object.__setattr__(self, "smoothed", _freeze(sm))
        object.__setattr__(self, "derivative", _freeze(dv))
        object.__setattr__(self, "phi", dict(self.phi))
        object.__setattr__(self, "flags", dict(self.flags))

    def __len__(self) -> int:
        return len(self.smoothed)


_SCALES = ("log", "linear", "integer")


@dataclass(frozen=True)
class MethodConfig:
    """A method identifier plus hyperparameter values, bounds, and scales.

    ``info`` is free-form diagnostic output (tuner loss, evaluation counts)
    and takes no part in validation.
    """

    method: str
    phi: Mapping[str, float]
    bounds: Mapping[str, tuple[float, float]]
    scale: Mapping[str, str]
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "info", dict(self.info))
        object.__setattr__(self, "phi", dict(self.phi))
        object.__setattr__(self, "bounds", {k: (float(a), float(b)) for k, (a, b) in self.bounds.items()})
        object.__setattr__(self, "scale", dict(self.scale))
        for name, value in self.phi.items():
            if name not in self.bounds or name not in self.scale:
                raise ValidationError(f"parameter {name!r} missing bounds or scale")
            sc = self.scale[name]
            if sc not in _SCALES:
                raise ValidationError(f"unknown scale {sc!r} for parameter {name!r}")
            lo, hi = self.bounds[name]
            if not (lo <= value <= hi):
                raise ValidationError(
                    f"parameter {name!r}={value} outside bounds [{lo}, {hi}]"
                )
            if sc == "integer" and float(value) != int(value):
                raise ValidationError(f"integer parameter {name!r} has value {value}")


def _check_grid_points(pts: np.ndarray) -> None:
    if len(pts) < 2:
        raise ValidationError(f"grid needs at least 2 points, got {len(pts)}")
    bad = np.flatnonzero(~np.isfinite(pts))
    if bad.size:
        raise ValidationError(f"grid point non-finite at index {bad[0]}")
    steps = np.diff(pts)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"grid points not strictly increasing at index {i + 1}: "
            f"{pts[i]} -> {pts[i + 1]}"
        )


def _check_signal_values(grid: Grid, vals: np.ndarray) -> None:
    if len(vals) != len(grid.points):
        raise ValidationError(
            f"values length {len(vals)} does not match grid length {len(grid.points)}"
        )
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ValidationError(f"signal value non-finite at index {bad[0]}")


def validate(signal: Signal) -> None:
    """Re-check every Grid/Signal invariant, raising at the first violation."""
    pts = np.asarray(signal.grid.points, dtype=float)
    _check_grid_points(pts)
    if signal.grid.uniform:
        dt = signal.grid.dt
        if dt is None or np.max(np.abs(np.diff(pts) - dt)) > UNIFORM_RTOL * dt:
            raise ValidationError("grid marked uniform but steps disagree with dt")
    _check_signal_values(signal.grid, np.asarray(signal.values, dtype=float))


def _cumtrapz(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of samples ``v`` over locations ``t``; out[0] = 0."""
    out = np.empty_like(v, dtype=float)
    out[0] = 0.0
    np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t), out=out[1:])
    return out


def cumtrapz(signal: Signal) -> np.ndarray:
    """Cumulative trapezoidal integral of a signal, anchored at zero.

    Works on irregular grids: each increment is
    ``0.5 * (v[n] + v[n-1]) * (t[n] - t[n-1])``.
    """
    validate(signal)
    return _cumtrapz(signal.grid.points, signal.values)


def total_variation(v) -> float:
    """Normalized total variation: mean absolute step, ``sum|v[n]-v[n+1]| / N``.

    The divisor is the vector length N, not the number of differences.
    """
    arr = _as_float_array(v, "input")
    if len(arr) < 2:
        raise ValidationError(f"total_variation needs length >= 2, got {len(arr)}")
    return float(np.sum(np.abs(np.diff(arr))) / len(arr))
