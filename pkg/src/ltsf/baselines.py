"""Linear baselines: NLinear (two variants), latent NLinear and persistence."""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np

from . import dataio, nn
from .numkit import NumericalError, ridge_solve
from .tasks import ForecastTask


class Variant(str, enum.Enum):
    A = "A"  # subtract the last observation, map, add it back
    B = "B"  # map the raw lookback, add the last observation


def _window(X, L, D):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != (L, D):
        raise ValueError(f"lookback window must have shape ({L}, {D}), got {X.shape[1:]}")
    return X, single


@dataclass
class NLinearModel:
    """Channel-mixing linear map from the flattened lookback to the flattened horizon.

    ``W`` has shape ``(L*D, T*D)`` and ``b`` length ``T*D``; flattening is
    time-major (all dims of step 0, then step 1, ...).
    """

    lookback: int
    horizon: int
    obs_dim: int
    variant: Variant = Variant.A
    W: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        L, T, D = self.lookback, self.horizon, self.obs_dim
        if self.W is None:
            self.W = np.zeros((L * D, T * D))
        if self.b is None:
            self.b = np.zeros(T * D)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.shape != (L * D, T * D) or self.b.shape != (T * D,):
            raise ValueError(f"NLinear parameters must be W {(L * D, T * D)} and b {(T * D,)}")

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def count_params(self) -> int:
        return self.W.size + self.b.size

    def predict(self, X, horizon=None):
        return nlinear_predict(self, X, horizon)


def nlinear_predict(model: NLinearModel, X, horizon=None):
    L, T, D = model.lookback, model.horizon, model.obs_dim
    horizon = T if horizon is None else horizon
    if horizon > T:
        raise ValueError(f"model was fitted for horizon {T}, asked for {horizon}")
    X, single = _window(X, L, D)
    last = X[:, -1:, :]
    feats = X - last if model.variant is Variant.A else X
    out = feats.reshape(len(X), -1) @ model.W[:, : horizon * D] + model.b[: horizon * D]
    out = out.reshape(len(X), horizon, D) + last
    return out[0] if single else out


def _design(data, L, T, variant, stride=None):
    """Stacked features and residual targets from one or more windows per trajectory."""
    n, N, D = data.shape
    if L + T > N:
        raise ValueError(f"L + T = {L + T} exceeds trajectory length {N}")
    offsets = [0] if stride is None else list(range(0, N - (L + T) + 1, stride))
    feats, targets = [], []
    for o in offsets:
        X = data[:, o : o + L]
        Y = data[:, o + L : o + L + T]
        last = X[:, -1:, :]
        feats.append((X - last if variant is Variant.A else X).reshape(n, -1))
        targets.append((Y - last).reshape(n, -1))
    return np.concatenate(feats), np.concatenate(targets)


def nlinear_fit(container, L, T=None, variant=Variant.A, lam=0.0, stride=None, normalized=False):
    """Closed-form direct multi-step fit; bias unpenalised (centred ridge).

    One (X, Y) split per training trajectory; ``stride`` adds windows at
    offsets ``0, stride, 2*stride, ...`` for long imported series.
    """
    variant = Variant(variant)
    if not normalized:
        container, _ = dataio.normalize(container)
    data = container.train.data
    T = data.shape[1] - L if T is None else T
    D = data.shape[2]
    F, R = _design(data, L, T, variant, stride)
    # variant A: the last lookback state minus itself is identically zero; its rows stay 0
    keep = slice(0, (L - 1) * D) if variant is Variant.A else slice(None)
    F = F[:, keep]
    fmean = F.mean(axis=0)
    rmean = R.mean(axis=0)
    W = np.zeros((L * D, T * D))
    if F.shape[1]:
        W[keep] = ridge_solve(F - fmean, R - rmean, lam)
    b = rmean - fmean @ W[keep]
    return NLinearModel(L, T, D, variant, W, b)


def ridge_objective(model: NLinearModel, container, lam, normalized=False):
    """Training objective minimised by :func:`nlinear_fit` (for optimality checks)."""
    if not normalized:
        container, _ = dataio.normalize(container)
    F, R = _design(container.train.data, model.lookback, model.horizon, model.variant)
    res = F @ model.W + model.b - R
    return float(np.sum(res * res) + lam * np.sum(model.W * model.W))


@dataclass
class PersistenceModel:
    """Repeats the last lookback state over the whole horizon."""

    params: dict = field(default_factory=dict)

    def predict(self, X, horizon):
        return persistence_predict(X, horizon)

    def count_params(self) -> int:
        return 0

    def copy(self):
        return PersistenceModel()


def persistence_predict(X, T):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2] < 1:
        raise ValueError("lookback must contain at least one state")
    last = X[..., -1:, :]
    reps = [1] * X.ndim
    reps[-2] = T
    return np.tile(last, reps)


@dataclass
class LatentNLinearModel:
    """NLinear acting on per-state latent codes.

    Each lookback state is encoded to ``latent_dim`` numbers, the flattened
    latent lookback is mapped by ``map.weight`` / ``map.bias`` (variant-B
    style, plus the last latent code), and each horizon code is decoded.
    """

    lookback: int
    horizon: int
    obs_dim: int
    latent_dim: int
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = ()
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, lookback, horizon, obs_dim, latent_dim, encoder_hidden=(), decoder_hidden=(), seed=0):
        model = cls(lookback, horizon, obs_dim, latent_dim, tuple(encoder_hidden), tuple(decoder_hidden))
        rng = np.random.default_rng(seed)
        p = nn.mlp_init("encoder", nn.mlp_sizes(obs_dim, model.encoder_hidden, latent_dim), rng)
        p["map.weight"] = np.zeros((lookback * latent_dim, horizon * latent_dim))
        p["map.bias"] = np.zeros(horizon * latent_dim)
        p.update(nn.mlp_init("decoder", nn.mlp_sizes(latent_dim, model.decoder_hidden, obs_dim), rng))
        model.params = p
        return model

    @classmethod
    def identity(cls, nl: NLinearModel):
        """Identity encoder/decoder around an NLinear map (variant B semantics)."""
        D = nl.obs_dim
        model = cls(nl.lookback, nl.horizon, D, D)
        model.params = {
            "encoder.0.weight": np.eye(D), "encoder.0.bias": np.zeros(D),
            "map.weight": nl.W.copy(), "map.bias": nl.b.copy(),
            "decoder.0.weight": np.eye(D), "decoder.0.bias": np.zeros(D),
        }
        return model

    def copy(self):
        return copy.deepcopy(self)

    def count_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def predict(self, X, horizon=None):
        return latent_nlinear_predict(self, X, horizon)

    def loss_and_grad(self, X, Y, batch_index=None):
        return latent_nlinear_loss_and_grad(self, X, Y, batch_index)

    def _forward(self, X, horizon):
        p = self.params
        B = len(X)
        dl = self.latent_dim
        Z, enc_cache = nn.mlp_forward(p, "encoder", X)  # (B, L, dl)
        flat = Z.reshape(B, -1)
        out = flat @ p["map.weight"][:, : horizon * dl] + p["map.bias"][: horizon * dl]
        H = out.reshape(B, horizon, dl) + Z[:, -1:, :]
        Yhat, dec_cache = nn.mlp_forward(p, "decoder", H)
        return Yhat, (Z, flat, enc_cache, dec_cache)


def latent_nlinear_predict(model: LatentNLinearModel, X, horizon=None):
    horizon = model.horizon if horizon is None else horizon
    if horizon > model.horizon:
        raise ValueError(f"model was built for horizon {model.horizon}, asked for {horizon}")
    X, single = _window(X, model.lookback, model.obs_dim)
    out = model._forward(X, horizon)[0]
    return out[0] if single else out


def latent_nlinear_loss_and_grad(model: LatentNLinearModel, X, Y, batch_index=None):
    X, _ = _window(X, model.lookback, model.obs_dim)
    Y = np.asarray(Y, dtype=np.float64)
    B, h, D = Y.shape
    dl = model.latent_dim
    p = model.params
    Yhat, (Z, flat, enc_cache, dec_cache) = model._forward(X, h)
    r = Yhat - Y
    loss = float(np.mean(r * r))
    if not np.isfinite(loss):
        where = "" if batch_index is None else f" in batch {batch_index}"
        raise NumericalError(f"non-finite loss{where}")
    grads = {}
    gH = nn.mlp_backward(p, "decoder", dec_cache, (2.0 / r.size) * r, grads)
    g_out = gH.reshape(B, -1)
    gW = np.zeros_like(p["map.weight"])
    gW[:, : h * dl] = flat.T @ g_out
    gb = np.zeros_like(p["map.bias"])
    gb[: h * dl] = g_out.sum(axis=0)
    grads["map.weight"] = gW
    grads["map.bias"] = gb
    gZ = (g_out @ p["map.weight"][:, : h * dl].T).reshape(Z.shape)
    gZ[:, -1, :] += gH.sum(axis=1)
    nn.mlp_backward(p, "encoder", enc_cache, gZ, grads)
    return loss, grads


def latent_nlinear_fit(container, task: ForecastTask, latent_dim, cfg=None, encoder_hidden=(), decoder_hidden=(), seed=0, normalized=False):
    """Build and train a latent NLinear model with the shared Adam trainer."""
    D = container.train.dim
    model = LatentNLinearModel.init(task.lookback, task.horizon, D, latent_dim, encoder_hidden, decoder_hidden, seed)
    return nn.train_adam(model, container, task, cfg or nn.TrainConfig(seed=seed), normalized=normalized)


def count_params(model) -> int:
    """Exact number of trainable scalars, biases included."""
    return int(model.count_params())


def nlinear_param_count(L, T, D) -> int:
    return (L * D) * (T * D) + T * D
