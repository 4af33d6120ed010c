"""Forecasting task split and error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForecastTask:
    """Split trajectories of length ``L + T`` into lookback X and horizon Y."""

    lookback: int
    horizon: int
    dataset: str = ""

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError(f"lookback and horizon must be >= 1 (got L={self.lookback}, T={self.horizon})")

    @classmethod
    def for_length(cls, traj_len: int, lookback: int, dataset: str = "") -> ForecastTask:
        return cls(lookback, traj_len - lookback, dataset)

    @property
    def traj_len(self) -> int:
        return self.lookback + self.horizon

    def split(self, data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` views of a (traj, time, dim) array."""
        if data.shape[1] < self.traj_len:
            raise ValueError(
                f"trajectories of length {data.shape[1]} are shorter than L+T={self.traj_len}"
            )
        return data[:, : self.lookback], data[:, self.lookback : self.traj_len]


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def predict_batched(model, X: np.ndarray, horizon: int, batch_size: int = 256) -> np.ndarray:
    parts = [model.predict(X[i : i + batch_size], horizon) for i in range(0, len(X), batch_size)]
    return np.concatenate(parts, axis=0)


def metrics_batched(model, X, Y, batch_size: int = 256) -> tuple[float, float]:
    """MSE and MAE over all trajectories, accumulated batch by batch."""
    sq = ab = 0.0
    count = 0
    for i in range(0, len(X), batch_size):
        pred = model.predict(X[i : i + batch_size], Y.shape[1])
        err = pred - Y[i : i + batch_size]
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        count += err.size
    return sq / count, ab / count
