"""Minimal dense networks with hand-written backprop and momentum SGD."""

from __future__ import annotations

from typing import Sequence

import numpy as np

ACTIVATIONS = ("linear", "tanh", "sigmoid")


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(out: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the activation output
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


class MLP:
    """Affine layers with ReLU between them and a configurable output squashing.

    ``sizes = [in, hidden..., out]``; parameters live in ``self.params`` as
    ``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes: Sequence[int], out_act: str = "linear", rng: np.random.Generator | None = None,
                 zero: bool = False):
        if out_act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {out_act!r}")
        self.sizes = [int(s) for s in sizes]
        self.out_act = out_act
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if zero or rng is None:
                W = np.zeros((fan_in, fan_out))
            else:
                W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray, cache: bool = False):
        acts = [x]
        h = x
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ W + b
            if k < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            else:
                h = _act(z, self.out_act)
            acts.append(h)
        return (h, acts) if cache else h

    __call__ = forward

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Return (parameter gradients, gradient w.r.t. the input)."""
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = grad_out * _act_grad(acts[-1], self.out_act)
        for k in reversed(range(self.n_layers)):
            W = self.params[2 * k]
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W.T
            if k > 0:
                g = g * (acts[k] > 0)
        return grads, g

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{i}": p for i, p in enumerate(self.params)}

    @classmethod
    def from_state(cls, arrays: dict[str, np.ndarray], prefix: str, out_act: str) -> MLP:
        params = []
        i = 0
        while f"{prefix}.{i}" in arrays:
            params.append(np.array(arrays[f"{prefix}.{i}"], dtype=np.float64))
            i += 1
        if not params:
            raise KeyError(prefix)
        sizes = [params[0].shape[0]] + [params[k].shape[1] for k in range(0, len(params), 2)]
        net = cls(sizes, out_act, zero=True)
        net.params = params
        return net


def make_head(in_dim: int, out_dim: int, hidden_layers: int, hidden_width: int, out_act: str,
              rng: np.random.Generator) -> MLP:
    return MLP([in_dim] + [hidden_width] * hidden_layers + [out_dim], out_act, rng)


class MomentumSGD:
    """``v = mu * v + g; p -= lr * v`` applied in place."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


def softmax_xent(scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``-log softmax(x)[i]`` and its gradient w.r.t. the scores."""
    z = scores - scores.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(targets))
    loss = logsum - z[rows, targets]
    p = np.exp(z - logsum[:, None])
    p[rows, targets] -= 1.0
    return loss, p
