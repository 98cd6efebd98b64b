"""Local smoothing-based differentiators.

Each method produces a smoothed signal and its derivative. Convolution-type
methods handle edges by mirror extension; fit-type methods (sliding
polynomials, splines, radial basis functions) evaluate their fits at the
sample locations and work on irregular grids.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline
from scipy.linalg import solve_banded
from scipy.signal import butter, sosfilt, sosfiltfilt
from scipy.sparse.linalg import spsolve

from .core import (
    DerivativeResult,
    NumericError,
    Signal,
    UnsupportedMethodError,
    ValidationError,
    validate,
)
from .fd import fd_derivative

_KERNEL_KINDS = ("mean", "gaussian", "friedrichs", "median")


@dataclass(frozen=True)
class KernelSpec:
    """A sliding-window kernel: its kind, window length, and Gaussian width."""

    kind: str = "gaussian"
    window: int = 11
    sigma: float = 2.0

    def __post_init__(self):
        if self.kind not in _KERNEL_KINDS:
            raise ValidationError(f"kernel kind must be one of {_KERNEL_KINDS}, got {self.kind!r}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError(f"window must be odd and >= 3, got {self.window}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValidationError(f"gaussian sigma must be positive, got {self.sigma}")


def _kernel_weights(kind: str, length: int, sigma: float) -> np.ndarray:
    """Normalized kernel samples of a given length (weights sum to 1)."""
    center = (length - 1) / 2.0
    j = np.arange(length) - center
    if kind == "mean":
        w = np.ones(length)
    elif kind == "gaussian":
        w = np.exp(-0.5 * (j / sigma) ** 2)
    elif kind == "friedrichs":
        u = j / (center + 1.0)
        w = np.exp(-1.0 / (1.0 - u * u))
    else:
        raise ValidationError(f"kernel kind {kind!r} has no weight representation")
    return w / w.sum()


def kernel_smooth(signal: Signal, spec: KernelSpec) -> Signal:
    """Convolve with a normalized kernel (or slide a median) over the signal.

    Edges are handled by mirror extension of half the window length.
    """
    validate(signal)
    if not signal.grid.uniform:
        raise UnsupportedMethodError("kernel_smooth requires a uniform grid")
    n = len(signal)
    if spec.window > n:
        raise ValidationError(f"window {spec.window} exceeds signal length {n}")
    half = spec.window // 2
    padded = np.pad(signal.values, half, mode="reflect")
    if spec.kind == "median":
        windows = np.lib.stride_tricks.sliding_window_view(padded, spec.window)
        out = np.median(windows, axis=1)
    else:
        weights = _kernel_weights(spec.kind, spec.window, spec.sigma)
        out = np.convolve(padded, weights[::-1], mode="valid")
    return Signal(signal.grid, out)


def kerneldiff(signal: Signal, spec: KernelSpec) -> DerivativeResult:
    """Kernel smoothing followed by second-order finite differences."""
    smoothed = kernel_smooth(signal, spec)
    step = fd_derivative(smoothed, nu=1, order=2)
    return DerivativeResult(
        smoothed=smoothed.values,
        derivative=step.derivative,
        method="kerneldiff",
        phi={"kind": spec.kind, "window": spec.window, "sigma": spec.sigma},
    )


def butterdiff(signal: Signal, order: int = 2, cutoff_hz: float = 1.0) -> DerivativeResult:
    """Zero-phase Butterworth smoothing followed by second-order differences.

    The filter is designed as cascaded second-order sections via the bilinear
    transform (with frequency prewarping, so the half-power point lands
    exactly on ``cutoff_hz``) and applied forward then backward.
    """
    validate(signal)
    if not signal.grid.uniform:
        raise UnsupportedMethodError("butterdiff requires a uniform grid")
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    fs = 1.0 / signal.grid.dt
    if not 0 < cutoff_hz < fs / 2:
        raise ValidationError(
            f"cutoff must lie in (0, {fs / 2}) Hz for dt={signal.grid.dt}, got {cutoff_hz}"
        )
    sos = butter(order, cutoff_hz, fs=fs, output="sos")
    # Generous odd-extension padding: initial-condition transients decay over
    # several filter time constants before they can reach the data.
    padlen = int(min(len(signal) - 2, max(24, np.ceil(4 * fs / cutoff_hz))))
    smoothed = sosfiltfilt(sos, signal.values, padlen=padlen)
    step = fd_derivative(Signal(signal.grid, smoothed), nu=1, order=2)
    return DerivativeResult(
        smoothed=smoothed,
        derivative=step.derivative,
        method="butterdiff",
        phi={"order": order, "cutoff_hz": cutoff_hz},
    )


def butter_single_pass(signal: Signal, order: int, cutoff_hz: float) -> np.ndarray:
    """One forward pass of the same Butterworth design (for gain measurements)."""
    fs = 1.0 / signal.grid.dt
    sos = butter(order, cutoff_hz, fs=fs, output="sos")
    return sosfilt(sos, signal.values)


def polydiff(signal: Signal, window: int, stride: int | None = None, degree: int = 3,
             weight_kernel: KernelSpec | None = None) -> DerivativeResult:
    """Sliding-window polynomial fits, combined by (weighted) averaging.

    Fits use the actual timestamps, so irregular grids are fine. Windows
    advance by ``stride``; a final window is anchored to the tail so every
    sample is covered. Overlapping fit evaluations are averaged uniformly
    unless a weight kernel (center-heavy weighting within each window) is
    given.
    """
    validate(signal)
    n = len(signal)
    if window > n:
        raise ValidationError(f"window {window} exceeds signal length {n}")
    if window < degree + 1:
        raise ValidationError(f"window {window} must be at least degree+1 = {degree + 1}")
    stride = window // 2 if stride is None else stride
    if not 1 <= stride <= window:
        raise ValidationError(f"stride must lie in [1, window], got {stride}")
    t = signal.grid.points
    y = signal.values

    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    if weight_kernel is None:
        weights = np.ones(window)
    else:
        weights = _kernel_weights(weight_kernel.kind, window, weight_kernel.sigma)

    acc_s = np.zeros(n)
    acc_d = np.zeros(n)
    acc_w = np.zeros(n)
    for lo in starts:
        sl = slice(lo, lo + window)
        fit = np.polynomial.Polynomial.fit(t[sl], y[sl], degree)
        acc_s[sl] += weights * fit(t[sl])
        acc_d[sl] += weights * fit.deriv()(t[sl])
        acc_w[sl] += weights
    return DerivativeResult(
        smoothed=acc_s / acc_w,
        derivative=acc_d / acc_w,
        method="polydiff",
        phi={"window": window, "stride": stride, "degree": degree},
    )


def savgol_coefficients(window: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows 0 and 1 of the pseudoinverse of the window's Vandermonde matrix.

    Dotting the first row with a window of samples evaluates the least-squares
    polynomial at the window center; the second row gives its slope per
    sample step.
    """
    if window < 3 or window % 2 == 0:
        raise ValidationError(f"window must be odd and >= 3, got {window}")
    if degree >= window:
        raise ValidationError(f"degree {degree} must be less than window {window}")
    if degree < 0:
        raise ValidationError("degree must be >= 0")
    half = window // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    V = np.vander(offsets, degree + 1, increasing=True)
    P = np.linalg.pinv(V)
    row1 = P[1] if degree >= 1 else np.zeros(window)
    return P[0], row1


def savgoldiff(signal: Signal, window: int, degree: int,
               post_smooth_sigma: float | None = None) -> DerivativeResult:
    """Savitzky-Golay smoothing and differentiation by convolution.

    Equivalent to a stride-1 sliding polynomial fit evaluated only at window
    centers, but the coefficients are fixed and found offline. The derivative
    can optionally be Gaussian-smoothed afterwards, since neighboring
    implicit fits are independent and can jitter.
    """
    validate(signal)
    if not signal.grid.uniform:
        raise UnsupportedMethodError("savgoldiff requires a uniform grid")
    n = len(signal)
    if window > n:
        raise ValidationError(f"window {window} exceeds signal length {n}")
    c_value, c_slope = savgol_coefficients(window, degree)
    half = window // 2
    padded = np.pad(signal.values, half, mode="reflect")
    smoothed = np.convolve(padded, c_value[::-1], mode="valid")
    deriv = np.convolve(padded, c_slope[::-1], mode="valid") / signal.grid.dt
    if post_smooth_sigma:
        radius = max(int(np.ceil(4 * post_smooth_sigma)), 1)
        j = np.arange(-radius, radius + 1)
        g = np.exp(-0.5 * (j / post_smooth_sigma) ** 2)
        g /= g.sum()
        deriv = np.convolve(np.pad(deriv, radius, mode="reflect"), g, mode="valid")
    return DerivativeResult(
        smoothed=smoothed,
        derivative=deriv,
        method="savgoldiff",
        phi={"window": window, "degree": degree, "post_smooth_sigma": post_smooth_sigma},
    )


_SPLINE_MODES = ("lambda", "bound")


@dataclass(frozen=True)
class SplineSpec:
    """Smoothing-spline parameters.

    ``lambda`` mode penalizes integrated squared curvature with weight
    ``lam``; ``bound`` mode instead grows the knot set greedily until the
    residual sum of squares drops below ``s``.
    """

    degree: int = 3
    mode: str = "lambda"
    lam: float = 0.0
    s: float = 0.0
    iterations: int = 1

    def __post_init__(self):
        if self.mode not in _SPLINE_MODES:
            raise ValidationError(f"mode must be one of {_SPLINE_MODES}, got {self.mode!r}")
        if self.degree < 1:
            raise ValidationError(f"degree must be >= 1, got {self.degree}")
        if self.lam < 0 or self.s < 0:
            raise ValidationError("lam and s must be >= 0")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.mode == "lambda" and self.s != 0.0:
            raise ValidationError("bound s is unused in lambda mode; leave it at 0")
        if self.mode == "bound" and self.lam != 0.0:
            raise ValidationError("lam is unused in bound mode; leave it at 0")
        if self.mode == "lambda" and self.lam > 0 and self.degree < 2:
            raise ValidationError("curvature penalty needs degree >= 2")


def _full_knots(t: np.ndarray, k: int, interior: np.ndarray) -> np.ndarray:
    return np.concatenate([np.full(k + 1, t[0]), interior, np.full(k + 1, t[-1])])


def _site_interior_knots(t: np.ndarray, k: int) -> np.ndarray:
    """Interior knots making the design matrix square (interpolation capacity)."""
    n = len(t)
    if k % 2 == 1:
        trim = (k + 1) // 2
        return t[trim : n - trim] if n > 2 * trim else t[0:0]
    mids = 0.5 * (t[:-1] + t[1:])
    trim = k // 2
    return mids[trim : len(mids) - trim] if len(mids) > 2 * trim else t[0:0]


def _derivative_transform(knots: np.ndarray, k: int, m: int) -> sp.csr_matrix:
    """Sparse map from spline coefficients to their derivative's coefficients."""
    denom = knots[k + 1 : k + m] - knots[1:m]
    rows = np.repeat(np.arange(m - 1), 2)
    cols = np.ravel(np.column_stack([np.arange(m - 1), np.arange(1, m)]))
    with np.errstate(divide="ignore"):
        scale = np.where(denom > 0, k / denom, 0.0)
    vals = np.ravel(np.column_stack([-scale, scale]))
    return sp.csr_matrix((vals, (rows, cols)), shape=(m - 1, m))


def _curvature_factor(knots: np.ndarray, k: int, m: int) -> sp.csr_matrix:
    """Sparse K with K^T K = the curvature penalty (integral of squared S'').

    Rows are second-derivative basis values at Gauss points scaled by the
    square-rooted quadrature weights. Keeping the penalty in factored form
    lets huge smoothing weights be applied without squaring their scale.
    """
    L1 = _derivative_transform(knots, k, m)
    L2 = _derivative_transform(knots[1:-1], k - 1, m - 1)
    L = (L2 @ L1).tocsr()
    inner = knots[2:-2]
    k2 = k - 2
    spans = np.unique(inner)
    npts = k2 + 1  # integrand is piecewise degree 2*k2; exact for Gauss order k2+1
    nodes, wts = np.polynomial.legendre.leggauss(npts)
    pts, weights = [], []
    for a, b in zip(spans[:-1], spans[1:]):
        half = 0.5 * (b - a)
        pts.append(0.5 * (a + b) + half * nodes)
        weights.append(half * wts)
    pts = np.concatenate(pts)
    weights = np.concatenate(weights)
    Bq = BSpline.design_matrix(pts, inner, k2)
    return (Bq.multiply(np.sqrt(weights)[:, None]) @ L).tocsr()


def _spsolve_checked(M: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
        try:
            out = spsolve(M.tocsc(), rhs)
        except (RuntimeError, sp.linalg.MatrixRankWarning) as exc:
            raise NumericError("singular spline system") from exc
    if not np.all(np.isfinite(out)):
        raise NumericError("singular spline system")
    return out


def _solve_spline(t, y, k, interior, lam):
    knots = _full_knots(t, k, interior)
    m = len(knots) - k - 1
    B = BSpline.design_matrix(t, knots, k)
    rhs = B.T @ y
    if lam > 0:
        # Augmented quasi-definite system: equivalent to the normal equations
        # (B^T B + lam K^T K) alpha = B^T y, but the penalty enters through
        # sqrt(lam) * K, so extreme lam does not wash out the data term.
        K = _curvature_factor(knots, k, m)
        root = np.sqrt(lam)
        M = sp.bmat([[B.T @ B, root * K.T],
                     [root * K, -sp.eye(K.shape[0])]], format="csc")
        full = _spsolve_checked(M, np.concatenate([rhs, np.zeros(K.shape[0])]))
        alpha = full[:m]
    else:
        alpha = _spsolve_checked((B.T @ B).tocsc(), rhs)
    return BSpline(knots, alpha, k)


def splinediff(signal: Signal, spec: SplineSpec) -> DerivativeResult:
    """Smoothing-spline fit with an analytic derivative.

    In ``lambda`` mode knots sit at the data sites and the banded system
    ``(B^T B + lam * R) alpha = B^T y`` is solved directly. In ``bound`` mode
    the fit starts from a global polynomial and inserts knots greedily at the
    worst-residual samples until the residual bound ``s`` is met; if the knot
    budget is exhausted first the best effort is returned with
    ``flags['bound_met'] = False``. The whole fit can be iterated on its own
    output to remove noise more gently.
    """
    validate(signal)
    t = signal.grid.points
    n = len(t)
    k = spec.degree
    if n < k + 2:
        raise ValidationError(f"need at least degree+2 = {k + 2} samples, got {n}")
    y = np.array(signal.values)
    flags: dict[str, object] = {}
    fit = None
    for _ in range(spec.iterations):
        if spec.mode == "lambda":
            fit = _solve_spline(t, y, k, _site_interior_knots(t, k), spec.lam)
        else:
            fit, met = _fit_bound_mode(t, y, k, spec.s)
            flags["bound_met"] = met
        y = fit(t)
    if spec.mode == "bound":
        flags["knots"] = int(len(fit.t) - 2 * (k + 1))
    flags["spline"] = fit
    return DerivativeResult(
        smoothed=fit(t),
        derivative=fit(t, nu=1),
        method="splinediff",
        phi={"degree": spec.degree, "mode": spec.mode, "lam": spec.lam,
             "s": spec.s, "iterations": spec.iterations},
        flags=flags,
    )


def _fit_bound_mode(t, y, k, bound):
    max_interior = len(_site_interior_knots(t, k))
    interior: list[float] = []
    fit = _solve_spline(t, y, k, np.array(interior), 0.0)
    while True:
        resid = y - fit(t)
        if float(resid @ resid) <= bound:
            return fit, True
        if len(interior) >= max_interior:
            return fit, False
        inserted = False
        for idx in np.argsort(-np.abs(resid)):
            cand = t[idx]
            if cand <= t[0] or cand >= t[-1] or cand in interior:
                continue
            trial = sorted(interior + [cand])
            try:
                fit = _solve_spline(t, y, k, np.array(trial), 0.0)
            except NumericError:
                continue
            interior = trial
            inserted = True
            break
        if not inserted:
            return fit, False


def rbfdiff(signal: Signal, sigma: float, rho: float, damping: float = 0.0) -> DerivativeResult:
    """Truncated-Gaussian radial basis fit with eigenvalue damping.

    One basis function sits on every sample; the collocation matrix is banded
    because the kernel is cut off at radius ``rho``. Adding ``damping`` times
    the identity shifts all eigenvalues up from zero, trading a little fit
    fidelity for a dramatically smaller condition number. The derivative
    reuses the coefficients with analytic kernel derivatives.
    """
    validate(signal)
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if rho <= sigma:
        raise ValidationError(f"rho must exceed sigma, got rho={rho}, sigma={sigma}")
    if damping < 0:
        raise ValidationError(f"damping must be >= 0, got {damping}")
    t = signal.grid.points
    y = signal.values
    n = len(t)

    gaps = np.abs(t[:, None] - t[None, :])
    mask = gaps < rho
    half_bw = int(np.max(np.abs(np.nonzero(mask)[0] - np.nonzero(mask)[1])))
    A = np.where(mask, np.exp(-0.5 * (gaps / sigma) ** 2), 0.0)
    Adot = -(t[:, None] - t[None, :]) / sigma**2 * A

    ab = np.zeros((2 * half_bw + 1, n))
    M = A + damping * np.eye(n)
    for off in range(-half_bw, half_bw + 1):
        diag = np.diagonal(M, off)
        if off >= 0:
            ab[half_bw - off, off:] = diag
        else:
            ab[half_bw - off, : n + off] = diag
    try:
        coef = solve_banded((half_bw, half_bw), ab, y)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(
            f"banded radial-basis solve failed (condition estimate {np.linalg.cond(M):.2e})"
        ) from exc
    if not np.all(np.isfinite(coef)):
        raise NumericError(
            f"banded radial-basis solve failed (condition estimate {np.linalg.cond(M):.2e})"
        )
    return DerivativeResult(
        smoothed=A @ coef,
        derivative=Adot @ coef,
        method="rbfdiff",
        phi={"sigma": sigma, "rho": rho, "damping": damping},
    )
