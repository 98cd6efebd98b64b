"""Global spectral differentiation and filtering.

Fourier differentiation multiplies FFT bins by powers of the effective
wavenumber, with the usual special case at the Nyquist bin for even sample
counts. Chebyshev differentiation runs a DCT-I (built from the FFT of an
even extension), a coefficient recurrence, and an inverse transform; it is
intended for noiseless data only, since polynomial fit errors compound from
high modes to low ones during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DerivativeResult,
    Signal,
    UnsupportedMethodError,
    ValidationError,
    validate,
)

#: Absolute tolerance (on the [-1, 1] reference interval) for cosine-spaced layouts.
NODE_TOL = 1e-8


@dataclass(frozen=True)
class SpectralPlan:
    """Validated parameters for a Fourier transform pass."""

    n: int
    domain_length: float
    nu: int
    keep_modes: int | None = None

    def __post_init__(self):
        if self.n < 4:
            raise ValidationError(f"spectral methods need n >= 4, got {self.n}")
        if self.domain_length <= 0:
            raise ValidationError("domain length must be positive")
        if self.nu < 1:
            raise ValidationError(f"derivative order must be >= 1, got {self.nu}")
        if self.keep_modes is not None and not (1 <= self.keep_modes <= self.n / 2):
            raise ValidationError(
                f"keep_modes must lie in [1, {self.n // 2}], got {self.keep_modes}"
            )


def _wavenumbers(n: int) -> np.ndarray:
    """Signed effective wavenumbers in FFT bin order: 0..n/2, -(n/2-1)..-1."""
    return np.fft.fftfreq(n) * n


def _derivative_multiplier(n: int, nu: int) -> np.ndarray:
    """Per-bin factor turning Fourier coefficients into derivative coefficients.

    (ik)^nu below the Nyquist bin, (i(k-n))^nu above it; the Nyquist bin of an
    even-length transform gets (i n/2)^nu for even nu and zero for odd nu.
    """
    k = _wavenumbers(n)
    mult = (1j * k) ** nu
    if n % 2 == 0:
        mult[n // 2] = (1j * n / 2) ** nu if nu % 2 == 0 else 0.0
    return mult


def _lowpass_mask(n: int, keep_modes: int) -> np.ndarray:
    return np.abs(_wavenumbers(n)) < keep_modes


def _require_uniform(signal: Signal, what: str) -> float:
    validate(signal)
    if not signal.grid.uniform:
        raise UnsupportedMethodError(f"{what} requires a uniform grid")
    return signal.grid.dt


def fourier_derivative(signal: Signal, nu: int = 1, keep_modes: int | None = None) -> DerivativeResult:
    """Differentiate a signal assumed periodic on [t0, t0 + N*dt).

    The grid is treated as positions within one period; the result does not
    depend on the absolute phase origin. ``keep_modes`` optionally applies an
    ideal low-pass to both outputs before differentiation.
    """
    dt = _require_uniform(signal, "fourier_derivative")
    n = len(signal)
    plan = SpectralPlan(n=n, domain_length=n * dt, nu=nu, keep_modes=keep_modes)
    coef = np.fft.fft(signal.values)
    if keep_modes is not None:
        coef = np.where(_lowpass_mask(n, keep_modes), coef, 0.0)
        smoothed = np.fft.ifft(coef).real
    else:
        smoothed = signal.values
    scale = (2 * np.pi / plan.domain_length) ** nu
    deriv = np.fft.ifft(coef * _derivative_multiplier(n, nu)).real * scale
    return DerivativeResult(
        smoothed=smoothed,
        derivative=deriv,
        method="fourier",
        phi={"nu": nu, "keep_modes": keep_modes},
    )


def fourier_lowpass(signal: Signal, keep_modes: int) -> Signal:
    """Ideal low-pass: zero every FFT bin with |wavenumber| >= keep_modes."""
    _require_uniform(signal, "fourier_lowpass")
    n = len(signal)
    SpectralPlan(n=n, domain_length=n * signal.grid.dt, nu=1, keep_modes=keep_modes)
    coef = np.fft.fft(signal.values)
    out = np.fft.ifft(np.where(_lowpass_mask(n, keep_modes), coef, 0.0)).real
    return Signal(signal.grid, out)


def power_spectrum(signal: Signal) -> tuple[np.ndarray, np.ndarray]:
    """Power in decibels, ``10*log10|FFT(y)|^2``, at nonnegative frequencies.

    The frequency axis is in Hz and ends at the Nyquist frequency 1/(2*dt).
    Bins with exactly zero power map to ``-inf``.
    """
    dt = _require_uniform(signal, "power_spectrum")
    n = len(signal)
    freqs = np.fft.rfftfreq(n, dt)
    mag = np.abs(np.fft.fft(signal.values)[: len(freqs)])
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return freqs, db


def cheb_nodes(n: int) -> np.ndarray:
    """Chebyshev-Lobatto nodes cos(pi*j/(n-1)), descending from 1 to -1."""
    if n < 2:
        raise ValidationError(f"cheb_nodes needs n >= 2, got {n}")
    return np.cos(np.pi * np.arange(n) / (n - 1))


def _dct1(v: np.ndarray) -> np.ndarray:
    """Unnormalized DCT-I via the FFT of the even extension (length 2N-2)."""
    ext = np.concatenate([v, v[-2:0:-1]])
    return np.fft.fft(ext).real[: len(v)]


def _idct1(coef: np.ndarray) -> np.ndarray:
    return _dct1(coef) / (2 * (len(coef) - 1))


def _chebder_once(coef: np.ndarray) -> np.ndarray:
    """One pass of the Chebyshev derivative recurrence; keeps array length."""
    n = len(coef)
    out = np.zeros(n)
    for k in range(n - 1, 0, -1):
        out[k - 1] = (out[k + 1] if k + 1 < n else 0.0) + 2 * k * coef[k]
    out[0] *= 0.5
    return out


def chebyshev_derivative(values, a: float = -1.0, b: float = 1.0, nu: int = 1,
                         points=None) -> DerivativeResult:
    """Differentiate samples taken at Chebyshev-Lobatto nodes mapped to [a, b].

    ``values[j]`` corresponds to the node ``cos(pi*j/(N-1))`` mapped affinely
    so node 1 lands on ``b`` (descending layout). If ``points`` is supplied it
    is checked against that layout; an ascending layout is accepted and outputs
    are returned in the input's order. Noiseless data only.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) < 2:
        raise ValidationError("values must be a 1-D sequence of length >= 2")
    if not np.all(np.isfinite(v)):
        raise ValidationError("values must be finite")
    if nu < 1:
        raise ValidationError(f"derivative order must be >= 1, got {nu}")
    if not b > a:
        raise ValidationError(f"need b > a, got [{a}, {b}]")
    n = len(v)
    nodes = cheb_nodes(n)
    flipped = False
    if points is not None:
        pts = np.asarray(points, dtype=float)
        if pts.shape != v.shape:
            raise ValidationError("points and values must have the same length")
        ref = (2 * pts - (a + b)) / (b - a)
        if np.max(np.abs(ref - nodes)) <= NODE_TOL:
            pass
        elif np.max(np.abs(ref[::-1] - nodes)) <= NODE_TOL:
            flipped = True
            v = v[::-1]
        else:
            raise ValidationError(
                "sample locations are not Chebyshev-Lobatto nodes on "
                f"[{a}, {b}] (max deviation above {NODE_TOL})"
            )

    coef = _dct1(v) / (n - 1)
    coef[0] *= 0.5
    coef[-1] *= 0.5
    for _ in range(nu):
        coef = _chebder_once(coef)
    back = coef * (n - 1)
    back[0] *= 2.0
    back[-1] *= 2.0
    deriv = _idct1(back) * (2.0 / (b - a)) ** nu
    if flipped:
        v = v[::-1]
        deriv = deriv[::-1]
    return DerivativeResult(
        smoothed=v, derivative=deriv, method="chebyshev", phi={"nu": nu, "a": a, "b": b}
    )


def fourier_extension_derivative(signal: Signal, pad: int = 0, extension: str = "even",
                                 keep_modes: int | None = None, nu: int = 1) -> DerivativeResult:
    """Fourier differentiation made workable for aperiodic (noisy) signals.

    The signal is insulated by ``pad`` repeats of its end values, the padding
    is blended by a moving average of window ceil(pad/4) (original samples are
    restored), and the result is optionally concatenated with its mirror image
    so the transform sees a periodic sequence. High modes are zeroed before
    differentiation and the original index range is sliced back out.
    """
    dt = _require_uniform(signal, "fourier_extension_derivative")
    if pad < 0:
        raise ValidationError(f"pad must be >= 0, got {pad}")
    if extension not in ("none", "even"):
        raise ValidationError(f"extension must be 'none' or 'even', got {extension!r}")
    if nu < 1:
        raise ValidationError(f"derivative order must be >= 1, got {nu}")
    y = signal.values
    n = len(y)

    z = np.concatenate([np.full(pad, y[0]), y, np.full(pad, y[-1])])
    if pad > 0:
        w = int(np.ceil(pad / 4))
        if w > 1:
            zp = np.pad(z, w, mode="reflect")
            z = np.convolve(zp, np.full(w, 1.0 / w), mode="same")[w:-w]
        z[pad : pad + n] = y

    ext = np.concatenate([z, z[-2:0:-1]]) if extension == "even" else z
    m = len(ext)
    plan = SpectralPlan(n=m, domain_length=m * dt, nu=nu, keep_modes=keep_modes)
    coef = np.fft.fft(ext)
    if keep_modes is not None:
        coef = np.where(_lowpass_mask(m, keep_modes), coef, 0.0)
    smoothed = np.fft.ifft(coef).real[pad : pad + n]
    scale = (2 * np.pi / plan.domain_length) ** nu
    deriv = (np.fft.ifft(coef * _derivative_multiplier(m, nu)).real * scale)[pad : pad + n]
    return DerivativeResult(
        smoothed=smoothed,
        derivative=deriv,
        method="fourier_extension",
        phi={"pad": pad, "extension": extension, "keep_modes": keep_modes, "nu": nu},
    )
