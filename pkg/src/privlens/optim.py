"""Optimisers over parameter dicts and a generic minibatch fitting loop."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite."""


def check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value in {name}")


class SGD:
    """Plain stochastic gradient descent, no momentum."""

    def step(self, params: dict, grads: dict, lr: float) -> None:
        if lr == 0:
            return
        for k, g in grads.items():
            if g is not None:
                params[k] -= lr * g


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            if g is None:
                continue
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def tensor_grads(tensors: dict) -> dict:
    return {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in tensors.items()}


def fit(net, batch_loss, n: int, epochs: int, lr, batch_size: int, rng, optimizer=None, name="network"):
    """Minibatch training of ``net.params`` in place; returns per-epoch mean losses.

    ``batch_loss(net, tensors, idx)`` builds the scalar loss for sample
    indices ``idx`` using the parameter Tensors ``tensors``. ``lr`` is a
    float or a function of the epoch index.
    """
    opt = Adam() if optimizer is None else optimizer
    rate = lr if callable(lr) else (lambda _e: lr)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for i in range(0, n, batch_size):
            idx = perm[i : i + batch_size]
            p = net.tensors()
            loss = batch_loss(net, p, idx)
            check_finite(f"{name} loss", loss.value)
            ad.backward(loss)
            opt.step(net.params, tensor_grads(p), rate(epoch))
            total += float(loss.value) * len(idx)
        history.append(total / n)
    return history


def late_drop(lr: float, epochs: int, frac: float = 0.75, factor: float = 0.1):
    """``lr`` until ``frac`` of the epochs, then ``lr * factor``."""
    cut = int(round(frac * epochs))
    return lambda e: lr if e < cut else lr * factor
