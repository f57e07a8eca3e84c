"""Plaintext reference trainer.

Dense numpy version of the same network (dense layers, square activation,
MSE loss, mini-batch SGD). It shares only the initial parameters and the
shuffle order with the encrypted trainer, so it serves as the oracle the
packed pipeline is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    cum_mults: int = 0
    cum_rotations: int = 0
    min_level: int = 0


@dataclass
class TrainingMetrics:
    epochs: list = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]


def init_params(dims, init_std: float, seed: int) -> list:
    """Gaussian weights and biases as ``[(A, b), ...]`` with ``A`` shaped out x in."""
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    params = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        A = rng.normal(0.0, init_std, (n_out, n_in))
        b = rng.normal(0.0, init_std, n_out)
        params.append((A, b))
    return params


def epoch_order(train_idx, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(np.asarray(train_idx))


def batches(order, batch_size: int):
    return [order[s:s + batch_size] for s in range(0, len(order), batch_size)]


def forward(params, x):
    us, acts = [], [np.asarray(x, dtype=np.float64)]
    for A, b in params:
        u = A @ acts[-1] + b
        us.append(u)
        acts.append(u * u)
    return us, acts


def predict(params, X) -> np.ndarray:
    return np.array([forward(params, x)[1][-1] for x in X])


def loss_and_accuracy(params, X, Y) -> tuple[float, float]:
    if len(X) == 0:
        return float("nan"), float("nan")
    P = predict(params, X)
    loss = float(np.mean(np.mean((P - Y) ** 2, axis=1)))
    acc = float(np.mean(P.argmax(axis=1) == Y.argmax(axis=1)))
    return loss, acc


def gradients(params, x, y):
    """Per-sample gradients with dL/d(pred) = pred - y (factor 2/out folded into lr)."""
    us, acts = forward(params, x)
    delta = acts[-1] - y
    grads = [None] * len(params)
    for l in range(len(params) - 1, -1, -1):
        g = delta * 2.0 * us[l]
        grads[l] = (np.outer(g, acts[l]), g)
        delta = params[l][0].T @ g
    return grads


def batch_step(params, X, Y, lr: float):
    acc = None
    for x, y in zip(X, Y):
        g = gradients(params, x, y)
        acc = g if acc is None else [(a + ga, b + gb) for (a, b), (ga, gb) in zip(acc, g)]
    n = len(X)
    return [(A - lr * gA / n, b - lr * gb / n) for (A, b), (gA, gb) in zip(params, acc)]


def train_plain(params, dataset, *, epochs: int, batch_size: int, lr: float, seed: int,
                on_batch=None) -> tuple[list, TrainingMetrics]:
    Xtr, Ytr = dataset.subset(dataset.train_idx)
    Xte, Yte = dataset.subset(dataset.test_idx)
    metrics = TrainingMetrics()
    for epoch in range(epochs):
        for b, idx in enumerate(batches(epoch_order(dataset.train_idx, seed, epoch), batch_size)):
            X, Y = dataset.subset(idx)
            params = batch_step(params, X, Y, lr)
            if on_batch is not None:
                on_batch(epoch, b, params)
        tr = loss_and_accuracy(params, Xtr, Ytr)
        te = loss_and_accuracy(params, Xte, Yte)
        metrics.epochs.append(EpochRecord(epoch + 1, tr[0], te[0], tr[1], te[1]))
    return params, metrics
