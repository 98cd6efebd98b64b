"""Finite-difference differentiation.

Stencil coefficients come from the Vandermonde linear inverse problem: for
a stencil ``[s_0, ..., s_{S-1}]`` and derivative order ``nu``, solve

    sum_j s_j^i * c_j = (nu! / dx^nu) * delta(i, nu),  i = 0..S-1

Centered schemes are used on the interior and one-sided schemes of matching
accuracy at the edges. Irregular grids are handled with per-point solves in
units of the independent variable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    ConditioningWarning,
    DerivativeResult,
    Signal,
    UnsupportedMethodError,
    ValidationError,
    _cumtrapz,
    validate,
)

#: Condition number above which a stencil solve emits a ConditioningWarning.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class Stencil:
    """Sample offsets combined linearly to approximate a derivative.

    ``offsets`` are integer multiples of the step for uniform grids, or raw
    distances in units of the independent variable for irregular ones.
    """

    offsets: tuple
    nu: int

    def __post_init__(self):
        offs = tuple(float(s) for s in self.offsets)
        object.__setattr__(self, "offsets", offs)
        if self.nu < 1:
            raise ValidationError(f"derivative order must be >= 1, got {self.nu}")
        if len(offs) <= self.nu:
            raise ValidationError(
                f"stencil length {len(offs)} must exceed derivative order {self.nu}"
            )
        if len(set(offs)) != len(offs):
            raise ValidationError("stencil offsets must be distinct")


def _vandermonde_solve(locs: np.ndarray, nu: int, rhs_scale: float) -> np.ndarray:
    size = len(locs)
    V = np.vander(locs, size, increasing=True).T
    rhs = np.zeros(size)
    rhs[nu] = math.factorial(nu) * rhs_scale
    cond = np.linalg.cond(V)
    if cond > CONDITION_LIMIT:
        warnings.warn(
            f"stencil system condition number {cond:.2e} exceeds {CONDITION_LIMIT:.0e}; "
            "coefficients may be inaccurate",
            ConditioningWarning,
            stacklevel=3,
        )
    return np.linalg.solve(V, rhs)


def stencil_coefficients(stencil: Stencil, dx: float) -> np.ndarray:
    """Coefficients ``c`` with ``sum_j c_j y(t + s_j dx) ~ y^(nu)(t)``.

    Error is O(dx^(S-nu)), one order better for even ``nu`` on symmetric
    odd-length stencils.
    """
    if dx <= 0:
        raise ValidationError(f"dx must be positive, got {dx}")
    return _vandermonde_solve(np.asarray(stencil.offsets), stencil.nu, dx ** -stencil.nu)


def irregular_coefficients(distances, nu: int) -> np.ndarray:
    """Stencil coefficients for distances given in units of the variable.

    ``distances`` are signed offsets from the evaluation point (zero allowed).
    Reduces exactly to :func:`stencil_coefficients` when the distances are
    integer multiples of a common step.
    """
    d = np.asarray(distances, dtype=float)
    stencil = Stencil(tuple(d), nu)  # validates distinctness and length
    return _vandermonde_solve(np.asarray(stencil.offsets), nu, 1.0)


def _effective_order(size: int, nu: int) -> int:
    """Accuracy order of a centered odd-length stencil of ``size`` points."""
    m = size - nu
    return m if m % 2 == 0 else m + 1


def _centered_halfwidth(nu: int, order: int) -> int:
    h = max((nu + 1) // 2, 1)
    while _effective_order(2 * h + 1, nu) < order:
        h += 1
    return h


def _window_plan(n_points: int, nu: int, order: int):
    """Per-point sample-index windows: centered inside, shrunk/one-sided at edges."""
    h = _centered_halfwidth(nu, order)
    s_edge = nu + 2  # one-sided stencil with second-order accuracy
    if n_points < max(2 * h + 1, s_edge):
        raise ValidationError(
            f"need at least {max(2 * h + 1, s_edge)} samples for nu={nu}, order={order}; "
            f"got {n_points}"
        )
    plan = []
    for n in range(n_points):
        h_avail = min(n, n_points - 1 - n)
        if h_avail >= h:
            lo = n - h
            size = 2 * h + 1
        elif 2 * h_avail + 1 > nu and h_avail >= 1:
            lo = n - h_avail
            size = 2 * h_avail + 1
        else:
            size = s_edge
            lo = min(max(n - size // 2, 0), n_points - size)
        plan.append((lo, size))
    return plan, h


def fd_derivative(signal: Signal, nu: int = 1, order: int = 2) -> DerivativeResult:
    """Pointwise finite-difference derivative; does no smoothing.

    Interior points use centered schemes of the requested accuracy order;
    edge points fall back to one-sided second-order schemes and near-edge
    points shrink the centered stencil rather than grow a one-sided one.
    Irregular grids are routed through per-point irregular solves.
    """
    validate(signal)
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    t = signal.grid.points
    y = signal.values
    n_points = len(y)
    plan, h = _window_plan(n_points, nu, order)

    deriv = np.empty(n_points)
    if signal.grid.uniform:
        dt = signal.grid.dt
        c_center = stencil_coefficients(Stencil(tuple(range(-h, h + 1)), nu), dt)
        deriv[h : n_points - h] = np.convolve(y, c_center[::-1], mode="valid")
        coeff_cache: dict[tuple, np.ndarray] = {}
        for n in list(range(h)) + list(range(n_points - h, n_points)):
            lo, size = plan[n]
            offsets = tuple(range(lo - n, lo - n + size))
            c = coeff_cache.get(offsets)
            if c is None:
                c = stencil_coefficients(Stencil(offsets, nu), dt)
                coeff_cache[offsets] = c
            deriv[n] = c @ y[lo : lo + size]
    else:
        for n, (lo, size) in enumerate(plan):
            c = irregular_coefficients(t[lo : lo + size] - t[n], nu)
            deriv[n] = c @ y[lo : lo + size]

    return DerivativeResult(
        smoothed=y,
        derivative=deriv,
        method="fd",
        phi={"nu": nu, "order": order},
    )


def _safe_first_derivative(y: np.ndarray, dt: float, order: int) -> np.ndarray:
    """First derivative whose coefficients all satisfy ``|c * dt| <= 1``.

    Endpoints use the spaced stencils [0, 2, 4] / [0, -2, -4]; near-edge
    points shrink the centered stencil. Used by the iterated-FD smoothing
    pass, where large one-sided edge coefficients would amplify noise.
    """
    n_points = len(y)
    h = _centered_halfwidth(1, order)
    if n_points < max(2 * h + 1, 5):
        raise ValidationError(f"iterated_fd needs at least {max(2 * h + 1, 5)} samples")
    out = np.empty(n_points)
    c_center = stencil_coefficients(Stencil(tuple(range(-h, h + 1)), 1), dt)
    out[h : n_points - h] = np.convolve(y, c_center[::-1], mode="valid")
    c_spaced = stencil_coefficients(Stencil((0, 2, 4), 1), dt)
    out[0] = c_spaced @ y[(0, 2, 4),]
    out[-1] = -(c_spaced @ y[(-1, -3, -5),])
    for n in range(1, h):
        c = stencil_coefficients(Stencil(tuple(range(-n, n + 1)), 1), dt)
        out[n] = c @ y[: 2 * n + 1]
        out[n_points - 1 - n] = c @ y[n_points - 2 * n - 1 :]
    return out


def iterated_fd(signal: Signal, order: int = 2, iterations: int = 1) -> DerivativeResult:
    """Smooth by repeated differentiate-then-integrate passes, then differentiate.

    Each iteration applies a first-derivative pass (with edge-safe stencils),
    cumulatively integrates with the trapezoid rule, and re-anchors the lost
    integration constant as a mean offset. One round is equivalent to an IIR
    low-pass filter; more iterations sharpen the cutoff. Uniform grids only.
    """
    validate(signal)
    if not signal.grid.uniform:
        raise UnsupportedMethodError("iterated_fd requires a uniform grid")
    if iterations < 0:
        raise ValidationError(f"iterations must be >= 0, got {iterations}")
    t = signal.grid.points
    dt = signal.grid.dt
    z = np.array(signal.values)
    for _ in range(iterations):
        d = _safe_first_derivative(z, dt, order)
        integ = _cumtrapz(t, d)
        z = integ + (np.mean(z) - np.mean(integ))
    final = fd_derivative(Signal(signal.grid, z), nu=1, order=order)
    return DerivativeResult(
        smoothed=z,
        derivative=final.derivative,
        method="iterated_fd",
        phi={"order": order, "iterations": iterations},
    )


def _first_diff_matrix(n_points: int, dt: float) -> sp.csr_matrix:
    """Order-2 first-derivative matrix: centered interior, one-sided edge rows."""
    rows, cols, vals = [], [], []
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-3 / (2 * dt), 4 / (2 * dt), -1 / (2 * dt)]
    idx = np.arange(1, n_points - 1)
    rows += list(np.repeat(idx, 2))
    cols += [c for i in idx for c in (i - 1, i + 1)]
    vals += [v for _ in idx for v in (-1 / (2 * dt), 1 / (2 * dt))]
    rows += [n_points - 1] * 3
    cols += [n_points - 3, n_points - 2, n_points - 1]
    vals += [1 / (2 * dt), -4 / (2 * dt), 3 / (2 * dt)]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_points, n_points))
