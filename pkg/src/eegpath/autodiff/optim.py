"""Rectified Adam."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class NonFiniteGradient(FloatingPointError):
    pass


def rho(t: int, beta2: float = 0.999) -> float:
    """Length of the approximated simple moving average at step t."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


class RAdam:
    """Adam with variance rectification.

    While the SMA length rho_t <= 4 the adaptive term is not yet
    trustworthy and the update is bias-corrected momentum SGD.
    State (step, m, v) is kept on each Parameter.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0
        for p in self.params:
            if p.state is None:
                p.state = (0, np.zeros_like(p.data), np.zeros_like(p.data))

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {p.name or 'parameter'}")
        for p in self.params:
            radam_update(p, p.grad, self.lr, self.beta1, self.beta2, self.eps)


def radam_update(p: Parameter, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One RAdam step for a single parameter (in place)."""
    t, m, v = p.state if p.state is not None else (0, np.zeros_like(p.data), np.zeros_like(p.data))
    g = np.zeros_like(p.data) if grad is None else grad
    t += 1
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    rho_t = rho(t, beta2)
    if rho_t > 4.0:
        rho_inf = 2.0 / (1.0 - beta2) - 1.0
        r = np.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
        v_hat = np.sqrt(v / (1.0 - beta2 ** t))
        p.data = p.data - lr * r * m_hat / (v_hat + eps)
    else:
        p.data = p.data - lr * m_hat
    p.state = (t, m, v)
