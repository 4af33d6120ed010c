"""Pure numpy twin of the compiled kernels in ``_kernels.pyx``.

Loops run over time steps with all trajectories advanced together as numpy
vectors.  Each elementwise operation mirrors the compiled code's operation
order, and the transcendental functions go through ``math`` (the C library),
so outputs are bit-identical to the extension.
"""
import math

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
TWO_PI = 6.283185307179586
INV_2_53 = 1.1102230246251565e-16


def _next(states):
    states += GOLDEN
    z = states.copy()
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _unit(states):
    return (_next(states) >> np.uint64(11)).astype(np.float64) * INV_2_53


def _uniform(states, lo, hi):
    r = lo + (hi - lo) * _unit(states)
    if hi > lo:
        r = np.where(r >= hi, np.nextafter(hi, lo), r)
    return r


def uniform_fill(states, n, lo, hi):
    out = np.empty((states.shape[0], n), dtype=np.float64)
    for j in range(n):
        out[:, j] = _uniform(states, lo, hi)
    return out


def normal_fill(states, n):
    m = states.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    for j in range(n):
        u1 = 1.0 - _unit(states)
        u2 = _unit(states)
        for i in range(m):
            out[i, j] = math.sqrt(-2.0 * math.log(u1[i])) * math.cos(TWO_PI * u2[i])
    return out


def mackey_glass(history, n_frames, dt, beta, gamma):
    history = np.ascontiguousarray(history, dtype=np.float64)
    m, lag = history.shape
    buf = history.copy()
    out = np.empty((m, n_frames), dtype=np.float64)
    y = buf[:, lag - 1].copy()
    for n in range(n_frames):
        out[:, n] = y
        slot = n % lag
        d = buf[:, slot].copy()
        d2 = d * d
        d4 = d2 * d2
        d8 = d4 * d4
        d10 = d8 * d2
        buf[:, slot] = y
        y = y + dt * (beta * d / (1.0 + d10) - gamma * y)
    return out


def lorenz(ic, n_frames, dt, sigma, rho, beta):
    ic = np.asarray(ic, dtype=np.float64)
    m = ic.shape[0]
    out = np.empty((m, n_frames, 3), dtype=np.float64)
    x, y, z = ic[:, 0].copy(), ic[:, 1].copy(), ic[:, 2].copy()
    for n in range(n_frames):
        out[:, n, 0] = x
        out[:, n, 1] = y
        out[:, n, 2] = z
        dx = sigma * (y - x)
        dy = x * (rho - z) - y
        dz = x * y - beta * z
        x = x + dt * dx
        y = y + dt * dy
        z = z + dt * dz
    return out


def lotka_volterra(ic, states, n_frames, dt, alpha, beta, delta, gamma, noise):
    ic = np.asarray(ic, dtype=np.float64)
    m = ic.shape[0]
    out = np.zeros((m, n_frames, 2), dtype=np.float64)
    failed = np.full(m, -1, dtype=np.int64)
    x, y = ic[:, 0].copy(), ic[:, 1].copy()
    alive = np.ones(m, dtype=bool)
    with np.errstate(all="ignore"):
        for n in range(n_frames):
            bad = alive & ((x <= 0.0) | (y <= 0.0))
            failed[bad] = n
            alive &= ~bad
            out[alive, n, 0] = x[alive]
            out[alive, n, 1] = y[alive]
            if n == n_frames - 1 or not alive.any():
                break
            if noise > 0.0:
                # failed rows keep drawing here; they are discarded by the caller
                a = _uniform(states, alpha - noise, alpha + noise)
            else:
                a = alpha
            dx = a * x - beta * x * y
            dy = delta * x * y - gamma * y
            x = x + dt * dx
            y = y + dt * dy
    return out, failed
