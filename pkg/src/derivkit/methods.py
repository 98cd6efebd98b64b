"""Registry of differentiation methods for tuning, benchmarking, and the CLI.

Each entry declares its hyperparameters (name, bounds, scale, default,
whether the tuner should search it), how to canonicalize a raw parameter
set (odd windows, even orders, cross-parameter constraints), and how to run
the method. Bounds may depend on the signal, e.g. on its length or Nyquist
frequency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fd, kalman, smoothers, spectral, tvr
from .core import DerivativeResult, Signal, ValidationError


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lo: float
    hi: float
    scale: str  # log | linear | integer
    default: float
    tunable: bool = True


@dataclass(frozen=True)
class MethodSpec:
    name: str
    description: str
    build_params: Callable[[Signal], tuple[ParamSpec, ...]]
    run: Callable[[Signal, dict, int], DerivativeResult]
    canonical: Callable[[dict], dict] = lambda phi: phi
    supports_nu: bool = False


_REGISTRY: dict[str, MethodSpec] = {}


def register(spec: MethodSpec) -> None:
    _REGISTRY[spec.name] = spec


def method_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def get_method(name: str) -> MethodSpec:
    if name not in _REGISTRY:
        raise ValidationError(
            f"unknown method {name!r}; available: {', '.join(method_names())}"
        )
    return _REGISTRY[name]


def describe(name: str) -> str:
    """One-line parameter schema, used by CLI usage errors."""
    from .core import Grid

    spec = get_method(name)
    ref = Signal(Grid.regular(256, 0.01), np.zeros(256))
    parts = [
        f"{p.name}={p.default:g} ({p.scale} in [{p.lo:g}, {p.hi:g}])"
        for p in spec.build_params(ref)
    ]
    return f"{spec.name}: {spec.description}; parameters: " + ", ".join(parts)


def apply_method(name: str, signal: Signal, phi: dict | None = None, nu: int = 1
                 ) -> DerivativeResult:
    """Run a registered method with defaults filled in for missing parameters."""
    spec = get_method(name)
    params = {p.name: p for p in spec.build_params(signal)}
    merged = {n: p.default for n, p in params.items()}
    for key, value in (phi or {}).items():
        if key not in params:
            raise ValidationError(
                f"unknown parameter {key!r} for method {name!r}; expected one of "
                f"{sorted(params)}"
            )
        merged[key] = float(value)
    for n, p in params.items():
        if p.scale == "integer":
            merged[n] = float(round(merged[n]))
        if not (p.lo <= merged[n] <= p.hi):
            raise ValidationError(
                f"parameter {n}={merged[n]:g} outside bounds [{p.lo:g}, {p.hi:g}]"
            )
    merged = spec.canonical(merged)
    if nu != 1 and not spec.supports_nu:
        raise ValidationError(f"method {name!r} only produces first derivatives")
    return spec.run(signal, merged, nu)


def _odd(value: float, lo: int, hi: int) -> int:
    w = int(round(value))
    if w % 2 == 0:
        w = w + 1 if w + 1 <= hi else w - 1
    return max(lo, min(w, hi))


def _nyquist(signal: Signal) -> float:
    if signal.grid.uniform:
        return 0.5 / signal.grid.dt
    return 0.5 * (len(signal) - 1) / signal.grid.span


# --- adapters -----------------------------------------------------------

def _fd_params(signal: Signal):
    return (ParamSpec("order", 2, 8, "integer", 2),)


def _fd_canonical(phi):
    out = dict(phi)
    out["order"] = int(round(phi["order"] / 2) * 2) or 2
    return out


def _fd_run(signal, phi, nu):
    return fd.fd_derivative(signal, nu=nu, order=int(phi["order"]))


def _ifd_params(signal: Signal):
    return (
        ParamSpec("iterations", 0, 200, "integer", 10),
        ParamSpec("order", 2, 6, "integer", 2, tunable=False),
    )


def _ifd_run(signal, phi, nu):
    return fd.iterated_fd(signal, order=int(phi["order"]), iterations=int(phi["iterations"]))


def _kernel_params(signal: Signal):
    n = len(signal)
    hi = min(n if n % 2 == 1 else n - 1, 101)
    return (
        ParamSpec("window", 5, hi, "integer", min(11, hi)),
        ParamSpec("sigma", 0.5, 50.0, "log", 3.0),
    )


def _kernel_canonical(phi):
    out = dict(phi)
    out["window"] = _odd(phi["window"], 5, 10**9)
    return out


def _kernel_run(signal, phi, nu):
    spec = smoothers.KernelSpec(kind="gaussian", window=int(phi["window"]), sigma=phi["sigma"])
    return smoothers.kerneldiff(signal, spec)


def _butter_params(signal: Signal):
    nyq = _nyquist(signal)
    lo = max(2.0 / max(signal.grid.span, 1e-12), 1e-4 * nyq)
    return (
        ParamSpec("order", 1, 8, "integer", 2, tunable=False),
        ParamSpec("cutoff_hz", lo, 0.95 * nyq, "log", min(3.0, 0.5 * nyq)),
    )


def _butter_run(signal, phi, nu):
    return smoothers.butterdiff(signal, order=int(phi["order"]), cutoff_hz=phi["cutoff_hz"])


def _savgol_params(signal: Signal):
    n = len(signal)
    hi = min(n if n % 2 == 1 else n - 1, 129)
    return (
        ParamSpec("window", 5, hi, "integer", min(21, hi)),
        ParamSpec("degree", 1, 8, "integer", 3),
        ParamSpec("post_smooth_sigma", 0.05, 50.0, "log", 1.0),
    )


def _savgol_canonical(phi):
    out = dict(phi)
    out["window"] = _odd(phi["window"], 5, 10**9)
    out["degree"] = int(min(phi["degree"], out["window"] - 1))
    return out


def _savgol_run(signal, phi, nu):
    return smoothers.savgoldiff(signal, window=int(phi["window"]), degree=int(phi["degree"]),
                                post_smooth_sigma=phi["post_smooth_sigma"])


def _poly_params(signal: Signal):
    n = len(signal)
    return (
        ParamSpec("window", 8, min(n, 160), "integer", min(40, n)),
        ParamSpec("degree", 1, 8, "integer", 3),
    )


def _poly_canonical(phi):
    out = dict(phi)
    out["window"] = int(round(phi["window"]))
    out["degree"] = int(min(phi["degree"], out["window"] - 1))
    return out


def _poly_run(signal, phi, nu):
    window = int(phi["window"])
    return smoothers.polydiff(signal, window=window, stride=max(window // 2, 1),
                              degree=int(phi["degree"]))


def _spline_params(signal: Signal):
    return (
        ParamSpec("lam", 1e-9, 1e9, "log", 1e-3),
        ParamSpec("degree", 2, 5, "integer", 3, tunable=False),
        ParamSpec("iterations", 1, 10, "integer", 1, tunable=False),
    )


def _spline_run(signal, phi, nu):
    spec = smoothers.SplineSpec(degree=int(phi["degree"]), mode="lambda", lam=phi["lam"],
                                iterations=int(phi["iterations"]))
    return smoothers.splinediff(signal, spec)


def _fourier_params(signal: Signal):
    n = len(signal)
    return (
        ParamSpec("keep_modes", 2, max(n // 2 - 1, 3), "integer", min(30, n // 4)),
        ParamSpec("pad", 0, n // 2, "integer", n // 8, tunable=False),
    )


def _fourier_run(signal, phi, nu):
    return spectral.fourier_extension_derivative(
        signal, pad=int(phi["pad"]), extension="even",
        keep_modes=int(phi["keep_modes"]), nu=nu)


#: kernel value at the truncation radius rho = RBF_TRUNCATION_FACTOR * sigma is 1e-4
RBF_TRUNCATION_FACTOR = float(np.sqrt(2.0 * np.log(1e4)))


def _rbf_params(signal: Signal):
    dt = signal.grid.span / (len(signal) - 1)
    return (
        ParamSpec("sigma", 1.5 * dt, signal.grid.span / 8, "log", 8 * dt),
        ParamSpec("damping", 1e-8, 10.0, "log", 0.1),
    )


def _rbf_run(signal, phi, nu):
    sigma = phi["sigma"]
    return smoothers.rbfdiff(signal, sigma=sigma, rho=RBF_TRUNCATION_FACTOR * sigma,
                             damping=phi["damping"])


def _tvr_params(signal: Signal):
    return (
        ParamSpec("gamma", 1e-4, 1e6, "log", 10.0),
        # order of the derivative whose variation is penalized, not the output
        ParamSpec("nu", 1, 3, "integer", 1, tunable=False),
    )


def _tvr_run(signal, phi, nu):
    spec = tvr.TvrSpec(gamma=phi["gamma"], nu=int(phi["nu"]), tol=1e-5, max_iter=6000)
    return tvr.tvrdiff(signal, spec)


def _satvr_params(signal: Signal):
    return (
        ParamSpec("gamma", 1e-4, 1e6, "log", 10.0),
        ParamSpec("soften_sigma", 0.5, 30.0, "log", 4.0),
    )


def _satvr_run(signal, phi, nu):
    spec = tvr.TvrSpec(gamma=phi["gamma"], nu=2, soften_sigma=phi["soften_sigma"],
                       tol=1e-5, max_iter=6000)
    return tvr.smooth_accel_tvr(signal, spec)


def _rts_params(signal: Signal):
    return (
        ParamSpec("q", 1e-10, 1e10, "log", 1e2),
        ParamSpec("r", 1e-6, 1e6, "log", 1.0, tunable=False),
        ParamSpec("nu", 1, 3, "integer", 2, tunable=False),
    )


def _rts_run(signal, phi, nu):
    return kalman.rtsdiff(signal, nu=int(phi["nu"]), q=phi["q"], r=phi["r"])


def _robust_params(signal: Signal):
    return (
        ParamSpec("q", 1e-10, 1e10, "log", 1e2),
        ParamSpec("r", 1e-6, 1e6, "log", 1.0),
        ParamSpec("m", 0.5, 20.0, "log", 2.0, tunable=False),
        ParamSpec("nu", 1, 3, "integer", 2, tunable=False),
    )


def _robust_run(signal, phi, nu):
    spec = kalman.RobustSpec(process_loss="quadratic", measurement_loss="huber",
                             huber_m_measurement=phi["m"], tol=1e-6, max_iter=50)
    return kalman.robustdiff(signal, nu=int(phi["nu"]), q=phi["q"], r=phi["r"], spec=spec)


register(MethodSpec("fd", "finite differences (no smoothing)",
                    _fd_params, _fd_run, _fd_canonical, supports_nu=True))
register(MethodSpec("iterated_fd", "iterated finite differences (IIR smoothing)",
                    _ifd_params, _ifd_run))
register(MethodSpec("kernel", "gaussian kernel smoothing + finite differences",
                    _kernel_params, _kernel_run, _kernel_canonical))
register(MethodSpec("butter", "zero-phase Butterworth smoothing + finite differences",
                    _butter_params, _butter_run))
register(MethodSpec("savgol", "Savitzky-Golay convolution",
                    _savgol_params, _savgol_run, _savgol_canonical))
register(MethodSpec("poly", "sliding-window polynomial fits",
                    _poly_params, _poly_run, _poly_canonical))
register(MethodSpec("spline", "smoothing spline with curvature penalty",
                    _spline_params, _spline_run))
register(MethodSpec("fourier", "low-passed Fourier derivative on an even extension",
                    _fourier_params, _fourier_run, supports_nu=True))
register(MethodSpec("rbf", "damped radial basis function fit",
                    _rbf_params, _rbf_run))
register(MethodSpec("tvr", "total-variation-regularized derivative",
                    _tvr_params, _tvr_run))
register(MethodSpec("smooth_accel_tvr", "second-order TVR with softened corners",
                    _satvr_params, _satvr_run))
register(MethodSpec("rts", "constant-derivative-model RTS smoother",
                    _rts_params, _rts_run))
register(MethodSpec("robust", "constant-derivative model with robust MAP smoothing",
                    _robust_params, _robust_run))
