"""Shared numerical substrate: seeded random streams, DFT and ridge solves.

Random streams use splitmix64::

    state <- state + 0x9E3779B97F4A7C15        (mod 2**64)
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (mod 2**64)
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB  (mod 2**64)
    output z ^ (z >> 31)

A uniform on [0, 1) is ``(output >> 11) * 2**-53``.  A standard normal
consumes exactly two uniforms, ``u1 = 1 - U`` then ``u2 = U``, and returns
``sqrt(-2 ln u1) * cos(2 pi u2)``.  Per-trajectory streams are seeded with
:func:`derive_seed`, so trajectory ``i`` never depends on evaluation order.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from ._backend import kernels

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 6.283185307179586
_INV_2_53 = 2.0**-53


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a finite, well-defined result."""


def mix64(z: int) -> int:
    """splitmix64 output finalizer applied to a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Seed of a sub-stream, e.g. ``derive_seed(global_seed, trajectory, attempt)``."""
    s = seed & MASK64
    for k in keys:
        s = mix64(s ^ mix64((k + GOLDEN) & MASK64))
    return s


class Rng:
    """Scalar splitmix64 stream.  Copy it to fork a stream; it holds one integer."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def __repr__(self):
        return f"Rng(state=0x{self.state:016X})"

    def copy(self) -> Rng:
        return Rng(self.state)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        if lo > hi:
            raise ValueError(f"uniform: lo={lo} exceeds hi={hi}")
        r = lo + (hi - lo) * ((self.next_u64() >> 11) * _INV_2_53)
        if r >= hi and hi > lo:
            r = math.nextafter(hi, lo)
        return r

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return box_muller(u1, u2)


def box_muller(u1: float, u2: float) -> float:
    """``sqrt(-2 ln u1) cos(2 pi u2)`` with ``u1`` in (0, 1]."""
    u1 = max(u1, 5e-324)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


def rng_next_u64(rng: Rng) -> int:
    return rng.next_u64()


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def rng_normal(rng: Rng) -> float:
    return rng.normal()


def stream_states(seed: int, indices, *extra: int) -> np.ndarray:
    """uint64 state vector with one independent stream per index."""
    return np.array([derive_seed(seed, int(i), *extra) for i in indices], dtype=np.uint64)


def uniform_block(states: np.ndarray, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """``n`` uniforms from each stream in ``states`` (advanced in place), shape (m, n)."""
    if lo > hi:
        raise ValueError(f"uniform: lo={lo} exceeds hi={hi}")
    return kernels.uniform_fill(states, int(n), float(lo), float(hi))


def normal_block(states: np.ndarray, n: int) -> np.ndarray:
    """``n`` standard normals from each stream in ``states``, shape (m, n)."""
    return kernels.normal_fill(states, int(n))


def _as_complex(x) -> np.ndarray:
    if isinstance(x, tuple):
        re, im = x
        re, im = np.asarray(re, dtype=np.float64), np.asarray(im, dtype=np.float64)
        if re.shape != im.shape:
            raise ValueError("real and imaginary parts differ in length")
        x = re + 1j * im
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("DFT input must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("DFT input has non-finite entries")
    return x


def dft(x) -> np.ndarray:
    """``X_k = sum_j x_j exp(-2 pi i jk/n)``.  Accepts a complex vector or ``(re, im)``."""
    return np.fft.fft(_as_complex(x))


def idft(x) -> np.ndarray:
    """Inverse of :func:`dft`, including the 1/n factor."""
    return np.fft.ifft(_as_complex(x))


def ridge_solve(X, Y, lam: float = 0.0) -> np.ndarray:
    """Minimise ``||X W - Y||_F^2 + lam ||W||_F^2`` through the normal equations.

    Solves ``(X^T X + lam I) W = X^T Y`` with a Cholesky factorisation.

    Raises
    ------
    NumericalError
        If the system is not positive definite (singular design with ``lam == 0``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    vector_target = Y.ndim == 1
    Y = Y.reshape(X.shape[0], -1)
    if X.shape[0] < 1:
        raise ValueError("ridge_solve needs at least one row")
    if lam < 0:
        raise ValueError(f"ridge penalty must be non-negative, got {lam}")
    gram = X.T @ X
    if lam:
        gram[np.diag_indices_from(gram)] += lam
    rhs = X.T @ Y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"ridge_solve: normal matrix ({gram.shape[0]}x{gram.shape[0]}) is singular "
            f"or not positive definite with lambda={lam}; use a positive penalty"
        ) from exc
    diag = np.abs(np.diag(factor[0]))
    if lam == 0 and diag.min() <= 1e-8 * diag.max():
        raise NumericalError(
            "ridge_solve: design matrix is numerically singular (rank deficient) with lambda=0; "
            "use a positive penalty"
        )
    W = scipy.linalg.cho_solve(factor, rhs)
    return W[:, 0] if vector_target else W
