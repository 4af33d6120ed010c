"""Solver-free linear latent ODE/DDE forecaster.

The lookback window is encoded to a latent state ``z0``; the latent state
evolves under ``h' = A h`` (or ``h' = A h(t - d)`` in delay mode, with the
history held at ``z0`` on ``[-d, 0]``) and is read out by a decoder.  The ODE
solution is ``exp(A t) z0``, so no time-stepping solver is involved and the
trajectory can be queried at any real ``t >= 0``.

Gradient of the generator (ODE mode, uniform grid)
--------------------------------------------------
With ``M = exp(A dt)`` and ``h_{j+1} = M h_j`` the adjoint recursion is
``lam_j = g_j + M^T lam_{j+1}`` and ``dL/dM = sum_j lam_{j+1} h_j^T``;
one Frechet derivative maps that onto ``A``.  The backward sweep rebuilds
the states from the end with ``exp(-A dt)`` in fixed-size chunks, so memory
does not grow with the horizon.  If the rebuilt ``h_0`` drifts from ``z0``
the sweep is redone with stored states.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import matexp, nn
from .matexp import MatrixClass, SkewDiagGenerator
from .numkit import NumericalError

CHUNK = 32
DRIFT_TOL = 1e-9


@dataclass
class LatentLinearODEModel:
    lookback: int
    obs_dim: int
    latent_dim: int = 50
    matrix_class: MatrixClass = MatrixClass.SKEW_PLUS_DIAG
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = (64,)
    delay: float | None = None
    step_unit: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix_class = MatrixClass(self.matrix_class)
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        if self.delay is not None and not self.delay > 0:
            raise ValueError(f"delay must be positive, got {self.delay}")
        if self.step_unit <= 0:
            raise ValueError("step_unit must be positive")

    @classmethod
    def init(cls, lookback, obs_dim, latent_dim=50, matrix_class=MatrixClass.SKEW_PLUS_DIAG,
             encoder_hidden=(), decoder_hidden=(64,), delay=None, step_unit=1.0, seed=0,
             skew_scale=0.1, diag_init=0.0):
        model = cls(lookback, obs_dim, latent_dim, matrix_class, encoder_hidden, decoder_hidden, delay, step_unit)
        rng = np.random.default_rng(seed)
        params = nn.mlp_init("encoder", nn.mlp_sizes(lookback * obs_dim, model.encoder_hidden, latent_dim), rng)
        gen = SkewDiagGenerator(latent_dim, model.matrix_class)
        for name, shape in gen.param_shapes().items():
            if name == "diag":
                params["generator.diag"] = np.full(shape, float(diag_init))
            else:
                params[f"generator.{name}"] = rng.normal(0.0, skew_scale / math.sqrt(latent_dim), size=shape)
        params.update(nn.mlp_init("decoder", nn.mlp_sizes(latent_dim, model.decoder_hidden, obs_dim), rng))
        model.params = params
        return model

    def copy(self):
        return copy.deepcopy(self)

    @property
    def mode(self) -> str:
        return "dde" if self.delay is not None else "ode"

    def generator(self) -> SkewDiagGenerator:
        return SkewDiagGenerator(
            self.latent_dim,
            self.matrix_class,
            skew=self.params.get("generator.skew"),
            diag=self.params.get("generator.diag"),
            full=self.params.get("generator.full"),
        )

    def generator_matrix(self) -> np.ndarray:
        return self.generator().materialize()

    def count_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # the forecasting interface shared by all models
    def predict(self, X, horizon):
        return forecast(self, X, np.arange(1, horizon + 1) * self.step_unit)

    def loss_and_grad(self, X, Y, batch_index=None, **kw):
        return loss_and_grad(self, X, Y, batch_index=batch_index, **kw)


def _flat_lookback(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (model.lookback, model.obs_dim):
        raise ValueError(f"lookback window must have shape (L={model.lookback}, D={model.obs_dim}), got {X.shape[1:]}")
    return X.reshape(X.shape[0], -1)


def encode(model, X) -> np.ndarray:
    """Latent state for each lookback window; (L, D) gives (D_Z,), (B, L, D) gives (B, D_Z)."""
    single = np.ndim(X) == 2
    z0, _ = nn.mlp_forward(model.params, "encoder", _flat_lookback(model, X))
    return z0[0] if single else z0


def decode(model, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != model.latent_dim:
        raise ValueError(f"latent states must have {model.latent_dim} entries, got {h.shape[-1]}")
    return nn.mlp_forward(model.params, "decoder", h)[0]


def _uniform_step(times: np.ndarray):
    if times.size == 0 or times[0] <= 0:
        return None
    grid = times[0] * np.arange(1, times.size + 1)
    if np.allclose(times, grid, rtol=0.0, atol=1e-12 * max(1.0, abs(times[-1]))):
        return float(times[0])
    return None


def propagate(model, z0, query_times) -> np.ndarray:
    """Latent states at ``query_times`` (measured from the last lookback step).

    Uniform grids ``k * dt`` reuse ``exp(A dt)``; other times use ``exp(A t)``
    directly.  Returns shape (..., len(times), D_Z).
    """
    times = np.atleast_1d(np.asarray(query_times, dtype=np.float64))
    if not np.all(np.isfinite(times)):
        raise ValueError("query times must be finite")
    if np.any(times < 0):
        raise ValueError("query times must be non-negative")
    z0 = np.asarray(z0, dtype=np.float64)
    single = z0.ndim == 1
    Z = z0[None] if single else z0
    A = model.generator_matrix()
    out = np.empty((Z.shape[0], times.size, model.latent_dim))
    if model.delay is not None:
        for j, t in enumerate(times):
            out[:, j] = Z @ matexp.delayed_expm(A, model.delay, t).T
    else:
        dt = _uniform_step(times)
        if dt is not None:
            MT = matexp.expm(A * dt).T
            h = Z
            for j in range(times.size):
                h = h @ MT
                out[:, j] = h
        else:
            for j, t in enumerate(times):
                out[:, j] = Z @ matexp.expm(A * t).T
    return out[0] if single else out


def forecast(model, X, query_times) -> np.ndarray:
    """Decoded observations at ``query_times`` for each lookback window."""
    return decode(model, propagate(model, encode(model, X), query_times))


def loss_and_grad(model, X, Y, batch_index=None, memory="reversible", chunk=CHUNK, stats=None):
    """Mean squared error over (batch, horizon, dims) and its exact gradient.

    ``memory="reversible"`` keeps O(chunk * batch * D_Z) live state whatever the
    horizon; ``memory="store"`` keeps every latent state.  When ``stats`` is a
    dict it receives ``retained_floats`` (peak size of the sweep buffers) and
    ``fallback`` (whether the reversible sweep had to be redone with stored states).

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.params``.
    """
    Xf = _flat_lookback(model, X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 2:
        Y = Y[None]
    B, T, Ds = Y.shape
    if B != Xf.shape[0] or Ds != model.obs_dim:
        raise ValueError(f"target shape {Y.shape} does not match batch {Xf.shape[0]} / obs dim {model.obs_dim}")
    params = model.params
    grads = {}
    z0, enc_cache = nn.mlp_forward(params, "encoder", Xf)
    gen = model.generator()
    A = gen.materialize()
    count = B * T * Ds
    info = {"retained_floats": 0, "fallback": False}

    if model.delay is None:
        loss, g_z0, grad_A = _ode_sweeps(model, A, z0, Y, grads, count, memory, chunk, info)
    else:
        loss, g_z0, grad_A = _dde_sweep(model, A, z0, Y, grads, count, chunk, info)

    if not math.isfinite(loss) or not np.all(np.isfinite(grad_A)):
        where = "" if batch_index is None else f" in batch {batch_index}"
        raise NumericalError(f"non-finite loss{where}")
    for name, g in gen.project_grad(grad_A).items():
        grads[f"generator.{name}"] = g
    nn.mlp_backward(params, "encoder", enc_cache, g_z0, grads)
    if stats is not None:
        stats.update(info)
    return loss, grads


def _decode_chunk(params, states, Ychunk, count, grads):
    """Loss contribution and dL/dh for a (c, B, D_Z) block of latent states."""
    yhat, cache = nn.mlp_forward(params, "decoder", states)
    r = yhat - Ychunk
    g_h = nn.mlp_backward(params, "decoder", cache, (2.0 / count) * r, grads)
    cache_floats = sum(a.size + z.size for a, z in cache)
    return float(np.sum(r * r)), g_h, cache_floats


def _ode_sweeps(model, A, z0, Y, grads, count, memory, chunk, info):
    if memory not in ("reversible", "store"):
        raise ValueError(f"memory must be 'reversible' or 'store', got {memory!r}")
    dt = model.step_unit
    B, T, _ = Y.shape
    D = model.latent_dim
    M = matexp.expm(A * dt)
    MT = M.T
    c_max = min(chunk, T)
    starts = list(range(0, T, c_max))

    # forward: loss only, keep the final state
    buf = np.empty((c_max, B, D))
    stored = np.empty((T + 1, B, D)) if memory == "store" else None
    loss = 0.0
    h = z0
    if stored is not None:
        stored[0] = z0
    for s in starts:
        c = min(c_max, T - s)
        for i in range(c):
            h = h @ MT
            buf[i] = h
        if stored is not None:
            stored[s + 1 : s + c + 1] = buf[:c]
        yhat, _ = nn.mlp_forward(model.params, "decoder", buf[:c])
        r = yhat - Y[:, s : s + c].transpose(1, 0, 2)
        loss += float(np.sum(r * r))
    loss /= count
    if not math.isfinite(loss):
        return loss, None, None

    def backward(stored):
        local = {}
        lbuf = np.empty((c_max, B, D))
        pbuf = np.empty((c_max, B, D))
        MinvT = None if stored is not None else matexp.expm(-A * dt).T
        lam = np.zeros((B, D))
        G_M = np.zeros((D, D))
        peak = 3 * buf.size
        hh = h
        for s in reversed(starts):
            c = min(c_max, T - s)
            if stored is None:
                buf[c - 1] = hh
                for i in range(c - 2, -1, -1):
                    buf[i] = buf[i + 1] @ MinvT
                h_before = buf[0] @ MinvT
            else:
                buf[:c] = stored[s + 1 : s + c + 1]
                h_before = stored[s]
            _, g_h, cache_floats = _decode_chunk(model.params, buf[:c], Y[:, s : s + c].transpose(1, 0, 2), count, local)
            peak = max(peak, 3 * buf.size + cache_floats + g_h.size)
            for i in range(c - 1, -1, -1):
                lam = lam + g_h[i]
                lbuf[i] = lam
                lam = lam @ M
            pbuf[0] = h_before
            pbuf[1:c] = buf[: c - 1]
            G_M += np.tensordot(lbuf[:c], pbuf[:c], axes=([0, 1], [0, 1]))
            hh = h_before
        return local, lam, G_M, hh, peak

    local, g_z0, G_M, h0, peak = backward(stored)
    if stored is None:
        scale = max(1.0, float(np.max(np.abs(z0))))
        if float(np.max(np.abs(h0 - z0))) > DRIFT_TOL * scale:
            # rebuilt states drifted: redo the sweep from stored states
            info["fallback"] = True
            stored = np.empty((T + 1, B, D))
            stored[0] = z0
            hs = z0
            for j in range(T):
                hs = hs @ MT
                stored[j + 1] = hs
            local, g_z0, G_M, h0, peak = backward(stored)
    if stored is not None:
        peak += stored.size
    info["retained_floats"] = peak
    grads.update(local)
    if not np.all(np.isfinite(G_M)):
        return loss, g_z0, G_M
    grad_A = dt * matexp.expm_grad(A * dt, G_M)
    return loss, g_z0, grad_A


def _dde_sweep(model, A, z0, Y, grads, count, chunk, info):
    dt = model.step_unit
    d = model.delay
    B, T, _ = Y.shape
    D = model.latent_dim
    c_max = min(chunk, T)
    buf = np.empty((c_max, B, D))
    phis = np.empty((c_max, D, D))
    loss = 0.0
    g_z0 = np.zeros((B, D))
    grad_A = np.zeros((D, D))
    peak = buf.size + phis.size
    for s in range(0, T, c_max):
        c = min(c_max, T - s)
        for i in range(c):
            phis[i] = matexp.delayed_expm(A, d, (s + i + 1) * dt)
            buf[i] = z0 @ phis[i].T
        part, g_h, cache_floats = _decode_chunk(model.params, buf[:c], Y[:, s : s + c].transpose(1, 0, 2), count, grads)
        peak = max(peak, buf.size + phis.size + cache_floats + g_h.size)
        loss += part
        for i in range(c):
            g_z0 += g_h[i] @ phis[i]
            grad_A += matexp.delayed_expm_grad(A, d, (s + i + 1) * dt, g_h[i].T @ z0)
    info["retained_floats"] = peak
    return loss / count, g_z0, grad_A


def train(model, container, task, cfg=None, normalized=False):
    """Adam training with the curriculum schedule; see :func:`ltsf.nn.train_adam`."""
    return nn.train_adam(model, container, task, cfg or nn.TrainConfig(), normalized=normalized)
