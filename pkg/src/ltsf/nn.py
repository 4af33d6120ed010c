"""Small hand-differentiated building blocks: ELU MLPs, Adam and the trainer.

Parameters live in flat ``dict[str, ndarray]`` maps with names such as
``"decoder.0.weight"`` (shape ``(out, in)``) and ``"decoder.0.bias"``.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .numkit import NumericalError
from .tasks import ForecastTask, metrics_batched

log = logging.getLogger(__name__)


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def mlp_sizes(n_in: int, hidden, n_out: int) -> list[int]:
    return [n_in, *hidden, n_out]


def mlp_init(prefix: str, sizes, rng: np.random.Generator, gain: float = 1.0) -> dict[str, np.ndarray]:
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.{i}.weight"] = rng.normal(0.0, gain / math.sqrt(a), size=(b, a))
        params[f"{prefix}.{i}.bias"] = np.zeros(b)
    return params


def mlp_layers(params, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.weight" in params:
        n += 1
    return n


def mlp_forward(params, prefix: str, x: np.ndarray):
    """Apply the MLP to the last axis of ``x``; ELU between layers, none at the end."""
    n = mlp_layers(params, prefix)
    cache = []
    a = x
    for i in range(n):
        z = a @ params[f"{prefix}.{i}.weight"].T + params[f"{prefix}.{i}.bias"]
        cache.append((a, z))
        a = elu(z) if i < n - 1 else z
    return a, cache


def mlp_backward(params, prefix: str, cache, grad_out: np.ndarray, grads: dict) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return the input gradient."""
    g = grad_out
    n = len(cache)
    for i in range(n - 1, -1, -1):
        a, z = cache[i]
        if i < n - 1:
            g = g * np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
        W = params[f"{prefix}.{i}.weight"]
        g2 = g.reshape(-1, g.shape[-1])
        a2 = a.reshape(-1, a.shape[-1])
        _acc(grads, f"{prefix}.{i}.weight", g2.T @ a2)
        _acc(grads, f"{prefix}.{i}.bias", g2.sum(axis=0))
        g = g @ W
    return g


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


DEFAULT_CURRICULUM = ((1 / 8, 0.1), (1 / 4, 0.2), (1 / 2, 0.3), (1.0, 1.0))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    eval_every: int = 1
    curriculum: tuple = DEFAULT_CURRICULUM
    seed: int = 0

    def __post_init__(self):
        cur = tuple((float(h), float(e)) for h, e in self.curriculum)
        if not cur:
            cur = ((1.0, 1.0),)
        hs = [h for h, _ in cur]
        es = [e for _, e in cur]
        if any(b < a for a, b in zip(hs, hs[1:])) or any(b < a for a, b in zip(es, es[1:])):
            raise ValueError("curriculum fractions must be nondecreasing")
        if hs[-1] != 1.0:
            raise ValueError("the last curriculum stage must use the full horizon")
        if self.batch_size < 1 or self.eval_every < 1 or self.epochs < 0:
            raise ValueError("batch_size and eval_every must be >= 1, epochs >= 0")
        self.curriculum = cur

    def horizon(self, epoch: int, full: int) -> int:
        """Training horizon for ``epoch`` under the curriculum schedule."""
        if self.epochs == 0:
            return full
        frac = epoch / self.epochs
        for h, e in self.curriculum:
            if frac < e:
                return max(1, min(full, math.ceil(h * full - 1e-9)))
        return full


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    diverged: bool = False
    best_epoch: int | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def best_test_mse(self) -> float:
        return min((r["test_mse"] for r in self.records), default=math.nan)


def train_adam(model, container, task: ForecastTask, cfg: TrainConfig, normalized: bool = False):
    """Minimise the model's MSE with Adam, following the curriculum schedule.

    The model must expose ``params``, ``loss_and_grad(X, Y)``, ``predict(X, T)``
    and ``copy()``.  Data are standardised with training statistics unless
    ``normalized`` is set.  Test metrics are computed every ``eval_every``
    epochs and the returned model is the checkpoint with the lowest test MSE.
    """
    history = TrainHistory()
    if cfg.epochs == 0:
        return model.copy(), history
    if not normalized:
        container, _ = dataio.normalize(container)
    Xtr, Ytr = task.split(container.train.data)
    Xte, Yte = task.split(container.test.data)
    rng = np.random.default_rng(cfg.seed)
    work = model.copy()
    opt = Adam(work.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best = None
    best_mse = math.inf
    n = len(Xtr)
    for epoch in range(cfg.epochs):
        h = cfg.horizon(epoch, task.horizon)
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        try:
            for b, lo in enumerate(range(0, n, cfg.batch_size)):
                idx = np.sort(order[lo : lo + cfg.batch_size])
                loss, grads = work.loss_and_grad(Xtr[idx], Ytr[idx, :h], batch_index=b)
                opt.step(work.params, grads)
                total += loss
                batches += 1
            if not all(np.all(np.isfinite(v)) for v in work.params.values()):
                raise NumericalError(f"parameters became non-finite in epoch {epoch}")
        except NumericalError as exc:
            log.warning("training diverged in epoch %d: %s; keeping the last finite checkpoint", epoch, exc)
            history.diverged = True
            break
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            test_mse, test_mae = metrics_batched(work, Xte, Yte)
            history.records.append(
                {"epoch": epoch, "horizon": h, "train_loss": total / max(batches, 1),
                 "test_mse": test_mse, "test_mae": test_mae}
            )
            log.info("epoch %d horizon %d train %.6g test mse %.6g mae %.6g", epoch, h, total / max(batches, 1), test_mse, test_mae)
            if math.isfinite(test_mse) and test_mse < best_mse:
                best_mse = test_mse
                best = copy.deepcopy(work.params)
                history.best_epoch = epoch
    out = model.copy()
    if best is not None:
        out.params = best
    return out, history
