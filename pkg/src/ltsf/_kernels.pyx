# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: splitmix64 streams and explicit Euler integrators.

Every routine here has a twin in ``_kernels_py`` that performs the same
floating-point operations in the same order, so both backends produce
identical bits.  Trajectories are independent rows; the loops over rows
release the GIL.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, cos, sqrt, nextafter
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.1102230246251565e-16


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t* state) noexcept nogil:
    return <double>(_next(state) >> 11) * INV_2_53


cdef inline double _uniform(uint64_t* state, double lo, double hi) noexcept nogil:
    cdef double r = lo + (hi - lo) * _unit(state)
    if r >= hi and hi > lo:
        r = nextafter(hi, lo)
    return r


cdef inline double _normal(uint64_t* state) noexcept nogil:
    cdef double u1 = 1.0 - _unit(state)
    cdef double u2 = _unit(state)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


def uniform_fill(cnp.uint64_t[::1] states, Py_ssize_t n, double lo, double hi):
    """Draw ``n`` uniforms per stream; ``states`` is advanced in place."""
    cdef Py_ssize_t m = states.shape[0], i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] = _uniform(&states[i], lo, hi)
    return out


def normal_fill(cnp.uint64_t[::1] states, Py_ssize_t n):
    """Draw ``n`` Box-Muller normals per stream (two uniforms each)."""
    cdef Py_ssize_t m = states.shape[0], i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] = _normal(&states[i])
    return out


def mackey_glass(double[:, ::1] history, Py_ssize_t n_frames, double dt,
                 double beta, double gamma):
    """Euler integration of y' = beta*y(t-tau)/(1+y(t-tau)^10) - gamma*y.

    ``history`` holds y at the tau/dt grid points preceding t=0 (oldest
    first); y(0) is the last history value.
    """
    cdef Py_ssize_t m = history.shape[0], lag = history.shape[1]
    cdef Py_ssize_t i, n, slot
    cdef double y, d, d2, d4, d8, d10
    out = np.empty((m, n_frames), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] buf
    for i in range(m):
        buf = np.array(history[i], dtype=np.float64)
        with nogil:
            y = buf[lag - 1]
            for n in range(n_frames):
                o[i, n] = y
                slot = n % lag
                d = buf[slot]
                d2 = d * d
                d4 = d2 * d2
                d8 = d4 * d4
                d10 = d8 * d2
                buf[slot] = y
                y = y + dt * (beta * d / (1.0 + d10) - gamma * y)
    return out


def lorenz(double[:, ::1] ic, Py_ssize_t n_frames, double dt,
           double sigma, double rho, double beta):
    cdef Py_ssize_t m = ic.shape[0], i, n
    cdef double x, y, z, dx, dy, dz
    out = np.empty((m, n_frames, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(m):
            x = ic[i, 0]
            y = ic[i, 1]
            z = ic[i, 2]
            for n in range(n_frames):
                o[i, n, 0] = x
                o[i, n, 1] = y
                o[i, n, 2] = z
                dx = sigma * (y - x)
                dy = x * (rho - z) - y
                dz = x * y - beta * z
                x = x + dt * dx
                y = y + dt * dy
                z = z + dt * dz
    return out


def lotka_volterra(double[:, ::1] ic, cnp.uint64_t[::1] states, Py_ssize_t n_frames,
                   double dt, double alpha, double beta, double delta, double gamma,
                   double noise):
    """Euler integration of the (optionally alpha-perturbed) predator-prey system.

    When ``noise > 0`` the growth rate is redrawn from U[alpha-noise, alpha+noise]
    before every step.  Returns the frames and, per row, the first frame index
    whose state is non-positive (-1 when the row stayed positive).
    """
    cdef Py_ssize_t m = ic.shape[0], i, n
    cdef double x, y, a, dx, dy
    out = np.zeros((m, n_frames, 2), dtype=np.float64)
    failed = np.full(m, -1, dtype=np.int64)
    cdef double[:, :, ::1] o = out
    cdef int64_t[::1] f = failed
    with nogil:
        for i in range(m):
            x = ic[i, 0]
            y = ic[i, 1]
            for n in range(n_frames):
                if x <= 0.0 or y <= 0.0:
                    f[i] = n
                    break
                o[i, n, 0] = x
                o[i, n, 1] = y
                if n == n_frames - 1:
                    break
                a = alpha
                if noise > 0.0:
                    a = _uniform(&states[i], alpha - noise, alpha + noise)
                dx = a * x - beta * x * y
                dy = delta * x * y - gamma * y
                x = x + dt * dx
                y = y + dt * dy
    return out, failed
