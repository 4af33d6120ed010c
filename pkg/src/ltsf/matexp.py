"""Matrix exponential, its Frechet derivative and the delayed matrix exponential.

Also holds the generator parametrisation used by the latent linear models:
``A = K - K^T + diag(d)`` with ``K`` strictly lower triangular.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# Degree-13 Pade coefficients b_0..b_13 and the 1-norm bound below which
# the unscaled approximant is accurate to double precision.
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
THETA_13 = 5.371920351148152


class MatrixClass(str, enum.Enum):
    FULL = "full"
    SKEW_ONLY = "skew_only"
    DIAG_ONLY = "diag_only"
    SKEW_PLUS_DIAG = "skew_plus_diag"


def _check_square(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def expm(A) -> np.ndarray:
    """exp(A) by scaling and squaring with a degree-13 Pade approximant.

    The scaling power is the smallest ``s`` with ``||A||_1 / 2**s <= 5.37``.
    """
    A = _check_square(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("expm: matrix has non-finite entries")
    n = A.shape[0]
    norm = np.abs(A).sum(axis=0).max() if n else 0.0
    s = 0
    if norm > THETA_13:
        s = max(0, int(math.ceil(math.log2(norm / THETA_13))))
    As = A / (2.0**s) if s else A

    b = _PADE13
    ident = np.eye(n)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    # (V - U)^-1 (V + U) written as I + 2 (V - U)^-1 U: exact when U = 0
    R = ident + 2.0 * np.linalg.solve(V - U, U)
    for _ in range(s):
        R = R @ R
    return R


def expm_frechet(A, E) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(exp(A), L(A, E))`` with ``L`` the Frechet derivative of exp at A.

    Uses exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]].
    """
    A = _check_square(A)
    E = _check_square(E, "E")
    if A.shape != E.shape:
        raise ValueError(f"dimension mismatch: A is {A.shape}, E is {E.shape}")
    n = A.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = A
    block[n:, n:] = A
    block[:n, n:] = E
    big = expm(block)
    return big[:n, :n].copy(), big[:n, n:].copy()


def expm_grad(A, upstream) -> np.ndarray:
    """Gradient of ``<upstream, exp(A)>`` with respect to ``A``.

    The adjoint of ``E -> L(A, E)`` is ``G -> L(A^T, G)``.
    """
    A = _check_square(A)
    return expm_frechet(A.T, upstream)[1]


def _delayed_coefficients(d: float, t: float) -> np.ndarray:
    """Scalar weights c_k = (t - (k-1) d)^k / k! of the active polynomial piece."""
    if d <= 0:
        raise ValueError(f"delay must be positive, got {d}")
    if t < -d:
        raise ValueError(f"delayed exponential undefined for t={t} < -d={-d}")
    if t < 0:
        return np.ones(1)
    n = int(math.floor(t / d)) + 1
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    for k in range(1, n + 1):
        base = t - (k - 1) * d
        coeffs[k] = math.exp(k * math.log(base) - math.lgamma(k + 1)) if base > 0 else 0.0
    return coeffs


def delayed_expm(A, d: float, t: float) -> np.ndarray:
    """Solution operator of ``h'(t) = A h(t - d)`` with constant history on [-d, 0].

    On ``[(n-1) d, n d)`` this is ``sum_{k=0..n} A^k (t - (k-1) d)^k / k!``.
    Evaluated with Horner's rule in A.
    """
    A = _check_square(A)
    c = _delayed_coefficients(d, t)
    n = A.shape[0]
    R = c[-1] * np.eye(n)
    for ck in c[-2::-1]:
        R = A @ R
        R[np.diag_indices(n)] += ck
    return R


def delayed_expm_grad(A, d: float, t: float, upstream) -> np.ndarray:
    """Gradient of ``<upstream, delayed_expm(A, d, t)>`` with respect to ``A``.

    Reverse pass through the Horner recursion ``R_k = c_k I + A R_{k+1}``:
    each step contributes ``G_k R_{k+1}^T`` and passes ``A^T G_k`` on.
    """
    A = _check_square(A)
    G = np.asarray(upstream, dtype=np.float64)
    c = _delayed_coefficients(d, t)
    n = A.shape[0]
    if G.shape != A.shape:
        raise ValueError(f"upstream shape {G.shape} does not match A {A.shape}")
    if len(c) == 1:
        return np.zeros_like(A)
    # forward Horner, keeping R_{k+1} for k = 0..deg-1
    stack = []
    R = c[-1] * np.eye(n)
    for ck in c[-2::-1]:
        stack.append(R)
        R = A @ R
        R[np.diag_indices(n)] += ck
    grad = np.zeros_like(A)
    for R_next in reversed(stack):
        grad += G @ R_next.T
        G = A.T @ G
    return grad


@dataclass
class SkewDiagGenerator:
    """Parameters of the latent generator matrix.

    ``skew`` holds the strictly lower triangular entries of ``K`` in row-major
    order (``np.tril_indices(n, -1)``); ``diag`` the diagonal; ``full`` a dense
    block used only by :attr:`MatrixClass.FULL`.
    """

    latent_dim: int
    matrix_class: MatrixClass = MatrixClass.SKEW_PLUS_DIAG
    skew: np.ndarray | None = None
    diag: np.ndarray | None = None
    full: np.ndarray | None = None

    def __post_init__(self):
        self.matrix_class = MatrixClass(self.matrix_class)
        n = self.latent_dim
        if n < 1:
            raise ValueError("latent_dim must be positive")
        expect = self.param_shapes()
        for name in ("skew", "diag", "full"):
            value = getattr(self, name)
            if name not in expect:
                if value is not None and np.any(np.asarray(value) != 0):
                    raise ValueError(f"{self.matrix_class.value} generator takes no {name} parameters")
                setattr(self, name, None)
                continue
            if value is None:
                value = np.zeros(expect[name])
            value = np.asarray(value, dtype=np.float64)
            if value.shape != expect[name]:
                raise ValueError(f"{name} parameters must have shape {expect[name]}, got {value.shape}")
            setattr(self, name, value)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        n = self.latent_dim
        mc = self.matrix_class
        if mc is MatrixClass.FULL:
            return {"full": (n, n)}
        shapes = {}
        if mc in (MatrixClass.SKEW_ONLY, MatrixClass.SKEW_PLUS_DIAG):
            shapes["skew"] = (n * (n - 1) // 2,)
        if mc in (MatrixClass.DIAG_ONLY, MatrixClass.SKEW_PLUS_DIAG):
            shapes["diag"] = (n,)
        return shapes

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.param_shapes()}

    def materialize(self) -> np.ndarray:
        return materialize(self)

    def project_grad(self, grad_A) -> dict[str, np.ndarray]:
        """Map dL/dA onto the generator's own parameters."""
        G = np.asarray(grad_A, dtype=np.float64)
        out = {}
        if self.matrix_class is MatrixClass.FULL:
            out["full"] = G.copy()
            return out
        if self.skew is not None:
            rows, cols = np.tril_indices(self.latent_dim, -1)
            out["skew"] = G[rows, cols] - G[cols, rows]
        if self.diag is not None:
            out["diag"] = np.diag(G).copy()
        return out


def materialize(g: SkewDiagGenerator) -> np.ndarray:
    """Dense generator matrix ``K - K^T + diag(d)`` (or the full block)."""
    n = g.latent_dim
    if g.matrix_class is MatrixClass.FULL:
        return np.array(g.full, dtype=np.float64)
    A = np.zeros((n, n))
    if g.skew is not None and n > 1:
        rows, cols = np.tril_indices(n, -1)
        A[rows, cols] = g.skew
        A[cols, rows] = -g.skew
    if g.diag is not None:
        A[np.diag_indices(n)] += g.diag
    return A
