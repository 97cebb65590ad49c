"""Memory model: regresses view-relation weights straight from image features.

At encode time it stands in for the stability evaluation, so encoding needs
neither labels, pairs, nor noisy evaluation batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mvhash.errors import DataError
from mvhash.nn import MLP, MomentumSGD


@dataclass
class MemoryModel:
    net: MLP
    mse_history: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, in_dim: int, n_views: int, seed: int) -> MemoryModel:
        rng = np.random.default_rng(seed)
        net = MLP([in_dim, n_views], "sigmoid", rng)
        net.params[0] *= 0.01
        return cls(net)

    @property
    def n_views(self) -> int:
        return self.net.out_dim

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.net(np.asarray(features, dtype=np.float64))

    def fit(self, features: np.ndarray, target: np.ndarray, epochs: int, lr: float, seed: int,
            batch_size: int = 128, momentum: float = 0.9) -> float:
        """Seeded SGD on the squared error ``(predicted E_n - target E_n)^2``; returns final MSE."""
        features = np.asarray(features, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if features.shape[1] != self.net.in_dim:
            raise DataError(f"memory model expects {self.net.in_dim} features, got {features.shape[1]}")
        if target.shape != (len(features), self.n_views):
            raise DataError(f"target must be {len(features)} x {self.n_views}")
        rng = np.random.default_rng(seed)
        opt = MomentumSGD(self.net.params, lr, momentum)
        for _ in range(epochs):
            order = rng.permutation(len(features))
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                pred, acts = self.net.forward(features[idx], cache=True)
                grads, _ = self.net.backward(acts, 2.0 * (pred - target[idx]) / len(idx))
                opt.step(grads)
        mse = float(np.mean((self.predict(features) - target) ** 2)) if len(features) else 0.0
        self.mse_history.append(mse)
        return mse


def train_memory(features: np.ndarray, target: np.ndarray, epochs: int, lr: float, seed: int) -> MemoryModel:
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if len(target) == 1 and len(features) != 1:
        target = np.broadcast_to(target, (len(features), target.shape[1]))
    model = MemoryModel.init(np.asarray(features).shape[1], target.shape[1], seed)
    if epochs:
        model.fit(features, target, epochs, lr, seed)
    return model


def predict_E(model: MemoryModel, features: np.ndarray) -> np.ndarray:
    """Per-image relation weights in [0, 1], shaped ``N x M``."""
    return model.predict(features)
