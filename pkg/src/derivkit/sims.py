"""Ground-truth generators and the benchmark sweep harness.

Six simulations produce clean signals, their true derivatives, and a grid;
noise from three families (plus optional outliers) corrupts them. The sweep
harness varies one axis at a time around a common central point
(normal noise, scale 1, dt = 0.01, no outliers, 3 Hz cutoff), autotunes
each method per cell, and reports mean/std RMSE and error correlation.

All randomness flows from counter-based streams keyed by
(seed, case, method, axis, value, replicate), so results are independent of
execution order and parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Grid, Signal, ValidationError
from .methods import apply_method, get_method
from .tune import TuneSpec, autotune, error_correlation, rmse, seeded_stream, stable_key

CASE_NAMES = ("sine_sum", "triangles", "cruise_control", "lti_second_order",
              "lorenz_x", "logistic_growth")
NOISE_FAMILIES = ("normal", "laplace", "uniform")
SWEEP_AXES = ("outliers", "noise_type", "noise_scale", "dt", "cutoff_f")

#: Environment variable capping benchmark worker processes.
WORKERS_ENV = "DERIVKIT_WORKERS"


@dataclass(frozen=True)
class SimulationCase:
    """One benchmark scenario: which system, its span, and the step size."""

    name: str
    T: float = 4.0
    dt: float = 0.01
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in CASE_NAMES:
            raise ValidationError(f"unknown case {self.name!r}; choose from {CASE_NAMES}")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.T / self.dt < 16:
            raise ValidationError("span must cover at least 16 samples")
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class NoiseSpec:
    family: str = "normal"
    scale: float = 1.0
    outliers: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValidationError(f"unknown noise family {self.family!r}")
        if self.scale < 0:
            raise ValidationError("scale must be >= 0")


def cruise_control_matrices(dt: float, mg: float = 10000.0, fr: float = 0.9,
                            ki: float = 0.05, kp: float = 0.25):
    """Discrete matrices of the proportional-integral cruise controller.

    State is [position, velocity, acceleration, cumulative position error];
    inputs are [hill slope, desired velocity]; position is measured.
    """
    A = np.array([
        [1.0, dt, dt * dt / 2.0, 0.0],
        [0.0, 1.0, dt, 0.0],
        [0.0, -fr - kp / dt, 0.0, ki / dt**2],
        [0.0, -dt, 0.0, 1.0],
    ])
    B = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [-mg, kp / dt],
        [0.0, dt],
    ])
    C = np.array([[1.0, 0.0, 0.0, 0.0]])
    return A, B, C


def hill_profile(t: np.ndarray) -> np.ndarray:
    """Oscillating hill slope driving the cruise-control simulation."""
    return (np.sin(2 * np.pi * t) + 0.3 * np.sin(8 * np.pi * t + 0.5)
            + 1.2 * np.sin(3.4 * np.pi * t + 0.5)) / 100.0


def _rk4(f, x0: np.ndarray, t: np.ndarray, substeps: int = 10) -> np.ndarray:
    """Classic fixed-step RK4, integrating ``substeps`` micro-steps per sample."""
    out = np.empty((len(t), len(x0)))
    out[0] = x0
    x = np.array(x0, dtype=float)
    for n in range(1, len(t)):
        h = (t[n] - t[n - 1]) / substeps
        tau = t[n - 1]
        for _ in range(substeps):
            k1 = f(tau, x)
            k2 = f(tau + h / 2, x + h / 2 * k1)
            k3 = f(tau + h / 2, x + h / 2 * k2)
            k4 = f(tau + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            tau += h
        out[n] = x
    return out


_SIM_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, Grid]] = {}


def simulate(case: SimulationCase) -> tuple[np.ndarray, np.ndarray, Grid]:
    """Return (truth values, truth derivative, grid) for a benchmark case."""
    key = (case.name, case.T, case.dt, tuple(sorted(case.params.items())))
    hit = _SIM_CACHE.get(key)
    if hit is not None:
        x, xdot, grid = hit
        return x.copy(), xdot.copy(), grid
    x, xdot, grid = _simulate_uncached(case)
    if len(_SIM_CACHE) < 64:
        _SIM_CACHE[key] = (x.copy(), xdot.copy(), grid)
    return x, xdot, grid


def _simulate_uncached(case: SimulationCase) -> tuple[np.ndarray, np.ndarray, Grid]:
    n = int(round(case.T / case.dt))
    t = case.dt * np.arange(n)
    grid = Grid(t)
    p = case.params

    if case.name == "sine_sum":
        amps = p.get("amps", (0.5, 0.35, 0.25))
        freqs = p.get("freqs", (1.0, np.sqrt(2.0), np.sqrt(5.0)))
        phases = p.get("phases", (0.0, 0.7, 1.9))
        x = np.zeros(n)
        xdot = np.zeros(n)
        for a, f, ph in zip(amps, freqs, phases):
            w = 2 * np.pi * f
            x += a * np.sin(w * t + ph)
            xdot += a * w * np.cos(w * t + ph)
        return x, xdot, grid

    if case.name == "triangles":
        amp = p.get("amplitude", 0.8)
        period = p.get("period", 2.0)
        phase = (t / period) % 1.0
        rising = phase < 0.5
        x = np.where(rising, amp * (4 * phase - 1), amp * (3 - 4 * phase))
        slope = 4 * amp / period
        xdot = np.where(rising, slope, -slope)
        return x, xdot, grid

    if case.name == "cruise_control":
        A, B, _ = cruise_control_matrices(case.dt, mg=p.get("mg", 10000.0),
                                          fr=p.get("fr", 0.9), ki=p.get("ki", 0.05),
                                          kp=p.get("kp", 0.25))
        vd = p.get("vd", 0.5)
        states = np.zeros((n, 4))
        x = np.zeros(4)
        for i in range(1, n):
            u = np.array([hill_profile(t[i - 1 : i])[0], vd])
            x = A @ x + B @ u
            states[i] = x
        return states[:, 0], states[:, 1], grid

    if case.name == "lti_second_order":
        zeta = p.get("zeta", 0.2)
        omega = p.get("omega_n", 2 * np.pi)

        def f(_, s):
            return np.array([s[1], -2 * zeta * omega * s[1] - omega**2 * (s[0] - 1.0)])

        states = _rk4(f, np.zeros(2), t)
        return states[:, 0], states[:, 1], grid

    if case.name == "lorenz_x":
        sig = p.get("sigma", 10.0)
        rho = p.get("rho", 28.0)
        beta = p.get("beta", 8.0 / 3.0)
        scale = p.get("scale", 1.0 / 20.0)

        def f(_, s):
            return np.array([sig * (s[1] - s[0]),
                             s[0] * (rho - s[2]) - s[1],
                             s[0] * s[1] - beta * s[2]])

        states = _rk4(f, np.array([-8.0, 8.0, 27.0]), t)
        return scale * states[:, 0], scale * sig * (states[:, 1] - states[:, 0]), grid

    # logistic_growth
    rate = p.get("r", 2.0)
    capacity = p.get("K", 1.0)
    x_init = p.get("x0", 0.05)

    def f(_, s):
        return np.array([rate * s[0] * (1.0 - s[0] / capacity)])

    states = _rk4(f, np.array([x_init]), t)
    x = states[:, 0]
    return x, rate * x * (1.0 - x / capacity), grid


def add_noise(clean: Signal, spec: NoiseSpec) -> Signal:
    """Add i.i.d. noise: normal(0, 0.1s), laplace(0, 0.1s), or uniform(+-0.2s)."""
    if spec.scale == 0:
        return clean
    rng = seeded_stream(spec.seed, "noise", spec.family, spec.scale)
    n = len(clean)
    if spec.family == "normal":
        eta = rng.normal(0.0, 0.1 * spec.scale, n)
    elif spec.family == "laplace":
        eta = rng.laplace(0.0, 0.1 * spec.scale, n)
    else:
        eta = rng.uniform(-0.2 * spec.scale, 0.2 * spec.scale, n)
    return Signal(clean.grid, clean.values + eta)


def add_outliers(y: Signal, seed: int = 0) -> Signal:
    """Corrupt a random 1% of samples by +-[50%, 150%] of the series range."""
    n = len(y)
    if n < 100:
        raise ValidationError(f"outlier injection needs at least 100 samples, got {n}")
    rng = seeded_stream(seed, "outliers")
    count = int(round(0.01 * n))
    idx = rng.choice(n, size=count, replace=False)
    signs = rng.choice([-1.0, 1.0], size=count)
    magnitude = rng.uniform(0.5, 1.5, size=count)
    spread = float(np.max(y.values) - np.min(y.values))
    values = np.array(y.values)
    values[idx] = values[idx] + signs * magnitude * spread
    return Signal(y.grid, values)


_CENTRAL = {"noise_type": "normal", "noise_scale": 1.0, "outliers": False}


def _run_cell(task: dict) -> dict:
    """One benchmark cell: simulate, corrupt, tune, differentiate, score."""
    axis, value = task["axis"], task["value"]
    setting = dict(_CENTRAL, dt=task["dt"], cutoff_f=task["cutoff_hz"])
    setting[axis] = value
    case = SimulationCase(task["case"], T=task["T"], dt=setting["dt"])
    row = {"method": task["method"], "case": case.name, "axis": axis,
           "value": value, "seed": task["seed"]}
    try:
        x, xdot, grid = simulate(case)
        cell_seed = stable_key(task["seed"], case.name, task["method"], axis, value)
        noise = NoiseSpec(family=setting["noise_type"], scale=setting["noise_scale"],
                          seed=cell_seed)
        y = add_noise(Signal(grid, x), noise)
        if setting["outliers"]:
            y = add_outliers(y, seed=cell_seed + 1)
        tune_spec = TuneSpec(cutoff_hz=setting["cutoff_f"], outliers=bool(setting["outliers"]),
                             seed=cell_seed, starts=task["starts"],
                             max_evals=task["max_evals"])
        config = autotune(task["method"], y, tune_spec)
        result = apply_method(task["method"], y, config.phi)
        row["rmse"] = rmse(result.derivative, xdot)
        row["error_correlation"] = error_correlation(result.derivative, xdot)
        row["phi"] = config.phi
    except Exception as exc:  # cell failures are recorded, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _worker_count(requested: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    if requested is not None:
        cap = min(cap, requested)
    return max(cap, 1)


def benchmark_sweep(methods, cases, axis: str, values, seeds: int,
                    cutoff_hz: float = 3.0, T: float = 4.0, dt: float = 0.01,
                    starts: int = 3, max_evals: int = 30,
                    workers: int | None = None) -> list[dict]:
    """Sweep one axis of the benchmark space and aggregate per-cell metrics.

    Returns one row per (method, case, value) with mean and sample standard
    deviation of RMSE and error correlation over ``seeds`` replicates, plus
    any per-replicate failures. The tuner budget (``starts``, ``max_evals``)
    is deliberately small: trends, not confidence intervals.
    """
    if axis not in SWEEP_AXES:
        raise ValidationError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    method_list = list(methods)
    for m in method_list:
        get_method(m)
    case_names = [c.name if isinstance(c, SimulationCase) else str(c) for c in cases]
    tasks = []
    for method in method_list:
        for case in case_names:
            for value in values:
                for seed in range(seeds):
                    tasks.append({"method": method, "case": case, "axis": axis,
                                  "value": value, "seed": seed, "T": T, "dt": dt,
                                  "cutoff_hz": cutoff_hz,
                                  "starts": starts, "max_evals": max_evals})

    n_workers = _worker_count(workers)
    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        results = [_run_cell(t) for t in tasks]

    by_cell: dict[tuple, list[dict]] = {}
    for row in results:
        by_cell.setdefault((row["method"], row["case"], row["value"]), []).append(row)

    table = []
    for method in method_list:
        for case in case_names:
            for value in values:
                rows = by_cell.get((method, case, value), [])
                ok = [r for r in rows if "error" not in r]
                errs = [r["error"] for r in rows if "error" in r]
                cell = {"method": method, "case": case, "axis": axis, "value": value,
                        "n_ok": len(ok), "n_fail": len(errs), "failures": errs}
                if ok:
                    rv = np.array([r["rmse"] for r in ok])
                    ev = np.array([r["error_correlation"] for r in ok])
                    cell["rmse_mean"] = float(rv.mean())
                    cell["rmse_std"] = float(rv.std(ddof=1)) if len(rv) > 1 else 0.0
                    cell["ec_mean"] = float(ev.mean())
                    cell["ec_std"] = float(ev.std(ddof=1)) if len(ev) > 1 else 0.0
                table.append(cell)
    return table
