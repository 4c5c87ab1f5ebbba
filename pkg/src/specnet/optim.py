"""Parameter update rules for mini-batch training."""

import numpy as np


class Adam:
    """Adaptive-moment gradient descent (Kingma-Ba form, bias-corrected).

    Updates run fully in place through a per-parameter scratch buffer, so a
    step allocates nothing.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]
        self._scratch = [np.empty_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v, s in zip(self.params, self._m, self._v, self._scratch):
            m *= self.b1
            np.multiply(p.grad, 1.0 - self.b1, out=s)
            m += s
            v *= self.b2
            np.multiply(p.grad, p.grad, out=s)
            s *= 1.0 - self.b2
            v += s
            np.divide(v, c2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(m, s, out=s)
            s *= self.lr / c1
            p.value -= s


class SGD:
    """Plain stochastic gradient descent."""

    def __init__(self, params, lr=1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            p.value -= self.lr * p.grad


def make_optimizer(kind, params, lr):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer kind {kind!r} (expected 'adam' or 'sgd')")
