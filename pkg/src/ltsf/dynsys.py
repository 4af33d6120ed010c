"""Synthetic trajectory generators.

Every trajectory ``i`` draws its initial condition from its own splitmix64
stream seeded with ``derive_seed(spec.seed, i)``, so output is identical for
any worker count or chunking.  Frame 0 is always the initial condition; each
later frame is taken after the integrator step(s).

Random draw order per trajectory
--------------------------------
sinewave        phi ~ U[0, 1)
mackey_glass    250 history values ~ U[1.19, 1.21), oldest first
lorenz          three normals (x, y, z offsets)
lotka_volterra  x0 ~ U[50, 150), y0 ~ U[10, 30), then one alpha per step
ks_pde          8 weights ~ U[-1, 1): (sin, cos) for x*pi/32, /16, /8, /4
cahn_hilliard   64*64 cell values ~ U[-0.05, 0.05), row-major
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numkit
from ._backend import kernels

log = logging.getLogger(__name__)

SYSTEMS = ("sinewave", "mackey_glass", "lorenz", "lotka_volterra", "ks_pde", "cahn_hilliard")

# (traj_len, obs_dim, lookbacks) per system
DEFAULTS = {
    "sinewave": (2000, 1, (2, 8, 96)),
    "mackey_glass": (2000, 1, (96, 500, 1000)),
    "lorenz": (2000, 3, (96, 500, 1000)),
    "lotka_volterra": (2000, 2, (96, 500, 1000)),
    "ks_pde": (1000, 100, (96, 250, 500)),
    "cahn_hilliard": (1000, 256, (96, 250, 500)),
}

# constants each generator accepts through ``GeneratorSpec.overrides``
CONSTANTS = {
    "sinewave": {"omega1": 0.2, "omega2": 0.3, "phase_lo": 0.0, "phase_hi": 1.0},
    "mackey_glass": {"tau": 25.0, "dt": 0.1, "beta": 0.2, "gamma": 0.1, "hist_lo": 1.19, "hist_hi": 1.21},
    "lorenz": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0, "dt": 0.01, "x0": 0.0, "y0": -0.01, "z0": 9.0, "ic_std": 0.001},
    "lotka_volterra": {
        "alpha": 1.0, "beta": 0.1, "delta": 0.02, "gamma": 0.5, "dt": 0.01,
        "alpha_noise": 0.002, "x_lo": 50.0, "x_hi": 150.0, "y_lo": 10.0, "y_hi": 30.0,
        "max_attempts": 100,
    },
    "ks_pde": {"length": 200.0, "n_grid": 100, "dt": 0.01, "save_every": 20, "weight_lo": -1.0, "weight_hi": 1.0},
    "cahn_hilliard": {"n_grid": 64, "length": 1.0, "dt": 5e-6, "gamma": 1e-4, "sub": 16, "ic_amp": 0.05},
}


class GenerationError(RuntimeError):
    """A generator produced a non-finite state."""


@dataclass
class TrajectorySet:
    """Observations of shape (trajectories, time, dims) plus optional timestamps."""

    data: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"trajectory data must be 3-D (traj, time, dim), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("trajectory data contains non-finite values")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.shape != (self.data.shape[1],):
                raise ValueError(f"timestamps must have length {self.data.shape[1]}, got {ts.shape}")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")
            self.timestamps = ts

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def n_traj(self) -> int:
        return self.data.shape[0]

    @property
    def traj_len(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def times(self) -> np.ndarray:
        if self.timestamps is not None:
            return self.timestamps
        return np.arange(self.traj_len, dtype=np.float64)

    def subset(self, idx) -> TrajectorySet:
        return TrajectorySet(self.data[idx], self.timestamps)


@dataclass
class GeneratorSpec:
    system: str
    n_train: int = 18000
    n_test: int = 2000
    traj_len: int | None = None
    seed: int = 0
    noise_enabled: bool = True
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; choose from {', '.join(SYSTEMS)}")
        if self.traj_len is None:
            self.traj_len = DEFAULTS[self.system][0]
        if self.traj_len < 2:
            raise ValueError("traj_len must be at least 2")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test < 1:
            raise ValueError("need at least one trajectory")
        unknown = set(self.overrides) - set(CONSTANTS[self.system])
        if unknown:
            raise ValueError(f"unknown {self.system} constants: {', '.join(sorted(unknown))}")

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_test

    def constant(self, name):
        return self.overrides.get(name, CONSTANTS[self.system][name])


def euler_step(f: Callable, x, dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    return x + dt * f(x)


def rk4_step(f: Callable, x, dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------- per-chunk solvers


def _sinewave(spec, idx):
    states = numkit.stream_states(spec.seed, idx)
    phi = numkit.uniform_block(states, 1, spec.constant("phase_lo"), spec.constant("phase_hi"))
    return sinewave_from_phase(phi[:, 0], spec.traj_len, spec.constant("omega1"), spec.constant("omega2"))


def sinewave_from_phase(phi, traj_len, omega1=0.2, omega2=0.3):
    j = np.arange(traj_len, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)[:, None]
    return (np.sin(omega1 * j + phi) + np.sin(omega2 * j + phi))[:, :, None]


def mackey_glass_history_len(spec) -> int:
    return int(round(spec.constant("tau") / spec.constant("dt")))


def _mackey_glass(spec, idx):
    states = numkit.stream_states(spec.seed, idx)
    hist = numkit.uniform_block(states, mackey_glass_history_len(spec), spec.constant("hist_lo"), spec.constant("hist_hi"))
    return mackey_glass_from_history(hist, spec.traj_len, spec.constant("dt"), spec.constant("beta"), spec.constant("gamma"))


def mackey_glass_from_history(history, n_frames, dt=0.1, beta=0.2, gamma=0.1):
    """Integrate from an explicit history block of shape (m, tau/dt)."""
    history = np.ascontiguousarray(np.atleast_2d(history), dtype=np.float64)
    return kernels.mackey_glass(history, int(n_frames), float(dt), float(beta), float(gamma))[:, :, None]


def _lorenz(spec, idx):
    states = numkit.stream_states(spec.seed, idx)
    z = numkit.normal_block(states, 3)
    center = np.array([spec.constant("x0"), spec.constant("y0"), spec.constant("z0")])
    ic = center + spec.constant("ic_std") * z
    return lorenz_from_ic(ic, spec.traj_len, spec.constant("dt"), spec.constant("sigma"), spec.constant("rho"), spec.constant("beta"))


def lorenz_from_ic(ic, n_frames, dt=0.01, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    ic = np.ascontiguousarray(np.atleast_2d(ic), dtype=np.float64)
    return kernels.lorenz(ic, int(n_frames), float(dt), float(sigma), float(rho), float(beta))


def lotka_volterra_from_ic(ic, n_frames, dt=0.01, alpha=1.0, beta=0.1, delta=0.02, gamma=0.5, noise=0.0, states=None):
    """Integrate explicit initial conditions; returns ``(frames, failed_frame_index)``."""
    ic = np.ascontiguousarray(np.atleast_2d(ic), dtype=np.float64)
    if states is None:
        states = np.zeros(ic.shape[0], dtype=np.uint64)
    return kernels.lotka_volterra(ic, states, int(n_frames), float(dt), float(alpha), float(beta), float(delta), float(gamma), float(noise))


def _lotka_volterra(spec, idx):
    c = spec.constant
    noise = c("alpha_noise") if spec.noise_enabled else 0.0
    out = np.empty((len(idx), spec.traj_len, 2))
    pending = np.arange(len(idx))
    attempt = 0
    while pending.size:
        if attempt >= c("max_attempts"):
            raise GenerationError(f"lotka_volterra: trajectories {np.asarray(idx)[pending].tolist()} kept underflowing")
        keys = (attempt,) if attempt else ()
        states = numkit.stream_states(spec.seed, np.asarray(idx)[pending], *keys)
        ic = np.column_stack([
            numkit.uniform_block(states, 1, c("x_lo"), c("x_hi"))[:, 0],
            numkit.uniform_block(states, 1, c("y_lo"), c("y_hi"))[:, 0],
        ])
        frames, failed = lotka_volterra_from_ic(ic, spec.traj_len, c("dt"), c("alpha"), c("beta"), c("delta"), c("gamma"), noise, states)
        ok = failed < 0
        out[pending[ok]] = frames[ok]
        if not ok.all():
            log.warning(
                "lotka_volterra: %d trajectories underflowed (attempt %d); regenerating with the next sub-seed",
                int((~ok).sum()), attempt,
            )
        pending = pending[~ok]
        attempt += 1
    return out


def ks_initial_condition(weights, n_grid=100, length=200.0):
    """u0(x) = sum over y in {x pi/32, x pi/16, x pi/8, x pi/4} of w_sin sin(y) + w_cos cos(y)."""
    weights = np.atleast_2d(weights)
    x = np.arange(n_grid) * (length / n_grid)
    u0 = np.zeros((weights.shape[0], n_grid))
    for m, div in enumerate((32.0, 16.0, 8.0, 4.0)):
        y = x * math.pi / div
        u0 += weights[:, 2 * m, None] * np.sin(y) + weights[:, 2 * m + 1, None] * np.cos(y)
    return u0


def ks_solve(u0, n_frames, dt=0.01, save_every=20, length=200.0, first_index=0):
    """RK4 in Fourier space for u_t = -u_xx - u_xxxx - u_x^2/2 on a periodic grid.

    The quadratic term is dealiased with the 2/3 rule.  Returns (m, n_frames, n_grid).
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    m, n = u0.shape
    k = 2.0 * math.pi * np.fft.rfftfreq(n, d=length / n)
    lin = k**2 - k**4
    ik = 1j * k
    keep = (np.arange(k.size) <= n // 3).astype(np.float64)

    def rhs(uh):
        ux = np.fft.irfft(ik * uh * keep, n=n)
        return lin * uh - 0.5 * keep * np.fft.rfft(ux * ux)

    out = np.empty((m, n_frames, n))
    out[:, 0] = u0
    uh = np.fft.rfft(u0)
    for frame in range(1, n_frames):
        for _ in range(save_every):
            k1 = rhs(uh)
            k2 = rhs(uh + 0.5 * dt * k1)
            k3 = rhs(uh + 0.5 * dt * k2)
            k4 = rhs(uh + dt * k3)
            uh = uh + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u = np.fft.irfft(uh, n=n)
        if not np.all(np.isfinite(u)):
            bad = int(np.where(~np.isfinite(u).all(axis=1))[0][0])
            raise GenerationError(f"ks_pde: non-finite state in trajectory {first_index + bad} at frame {frame}")
        out[:, frame] = u
    return out


def _ks(spec, idx):
    c = spec.constant
    states = numkit.stream_states(spec.seed, idx)
    w = numkit.uniform_block(states, 8, c("weight_lo"), c("weight_hi"))
    u0 = ks_initial_condition(w, int(c("n_grid")), c("length"))
    return ks_solve(u0, spec.traj_len, c("dt"), int(c("save_every")), c("length"), first_index=int(idx[0]))


def cahn_hilliard_solve(c0, n_frames, dt=5e-6, gamma=1e-4, length=1.0, sub=16, full=False, first_index=0):
    """Semi-implicit spectral stepping of c_t = lap(c^3 - c - gamma lap c).

    The fourth-order term is implicit, ``c^3 - c`` explicit.  The state is
    kept in Fourier space so the mean (zero mode) is never modified.
    Returns the ``sub x sub`` subgrid flattened row-major, or the full field
    when ``full=True``.
    """
    c0 = np.asarray(c0, dtype=np.float64)
    if c0.ndim == 2:
        c0 = c0[None]
    m, n, _ = c0.shape
    kx = 2.0 * math.pi * np.fft.fftfreq(n, d=length / n)
    ky = 2.0 * math.pi * np.fft.rfftfreq(n, d=length / n)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2
    denom = 1.0 + dt * gamma * k2 * k2
    stride = n // sub

    def emit(c):
        if full:
            return c.copy()
        return c[:, ::stride, ::stride].reshape(m, -1)

    frames = [emit(c0)]
    ch = np.fft.rfft2(c0)
    c = c0
    for frame in range(1, n_frames):
        nl = np.fft.rfft2(c * c * c - c)
        ch = (ch - dt * k2 * nl) / denom
        c = np.fft.irfft2(ch, s=(n, n))
        if not np.all(np.isfinite(c)):
            bad = int(np.where(~np.isfinite(c).reshape(m, -1).all(axis=1))[0][0])
            raise GenerationError(f"cahn_hilliard: non-finite state in trajectory {first_index + bad} at frame {frame}")
        frames.append(emit(c))
    return np.stack(frames, axis=1)


def _cahn_hilliard(spec, idx):
    c = spec.constant
    n = int(c("n_grid"))
    states = numkit.stream_states(spec.seed, idx)
    amp = c("ic_amp")
    c0 = numkit.uniform_block(states, n * n, -amp, amp).reshape(-1, n, n)
    return cahn_hilliard_solve(c0, spec.traj_len, c("dt"), c("gamma"), c("length"), int(c("sub")), first_index=int(idx[0]))


_SOLVERS = {
    "sinewave": _sinewave,
    "mackey_glass": _mackey_glass,
    "lorenz": _lorenz,
    "lotka_volterra": _lotka_volterra,
    "ks_pde": _ks,
    "cahn_hilliard": _cahn_hilliard,
}


def generate(spec: GeneratorSpec, workers: int = 1, chunk_size: int | None = None) -> TrajectorySet:
    """All ``n_train + n_test`` trajectories of ``spec`` as one set (train first)."""
    solver = _SOLVERS[spec.system]
    total = spec.n_total
    if chunk_size is None:
        chunk_size = max(1, math.ceil(total / max(1, workers)))
    chunks = [np.arange(lo, min(lo + chunk_size, total)) for lo in range(0, total, chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: solver(spec, idx), chunks))
    else:
        parts = [solver(spec, idx) for idx in chunks]
    return TrajectorySet(np.concatenate(parts, axis=0))


def gen_sinewave(spec):
    return generate(_expect(spec, "sinewave"))


def gen_mackey_glass(spec):
    return generate(_expect(spec, "mackey_glass"))


def gen_lorenz(spec):
    return generate(_expect(spec, "lorenz"))


def gen_lotka_volterra(spec):
    return generate(_expect(spec, "lotka_volterra"))


def gen_ks(spec):
    return generate(_expect(spec, "ks_pde"))


def gen_cahn_hilliard(spec):
    return generate(_expect(spec, "cahn_hilliard"))


def _expect(spec, system):
    if spec.system != system:
        raise ValueError(f"spec is for {spec.system!r}, not {system!r}")
    return spec
