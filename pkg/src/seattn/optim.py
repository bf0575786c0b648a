"""Adam with bias correction, operating in place on Parameters."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .errors import ConfigurationError, NumericError


def adam_step(theta: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, beta1: float, beta2: float, eps: float, name: str = "param"):
    """One in-place Adam update of ``theta``, ``m`` and ``v``; ``t`` is the 1-based step."""
    if not np.isfinite(g).all():
        raise NumericError(f"non-finite gradient for parameter {name}")
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(theta.dtype)


class Adam:
    def __init__(self, named_params, lr: float, betas=(0.0, 0.9), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= betas[0] < 1.0 or not 0.0 < betas[1] < 1.0:
            raise ConfigurationError(f"betas {betas} outside [0,1) x (0,1)")
        self.params = OrderedDict(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, betas[0], betas[1], eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        # check everything first so a bad gradient leaves every parameter untouched
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad.data).all():
                raise NumericError(f"non-finite gradient for parameter {name}")
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p.data, p.grad.data, self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps, name)

    def state(self, prefix: str):
        out = OrderedDict()
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
        for k in self.params:
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state(self, prefix: str, tensors: dict, t: int):
        for k in self.params:
            self.m[k] = np.array(tensors[f"{prefix}.m.{k}"], copy=True)
            self.v[k] = np.array(tensors[f"{prefix}.v.{k}"], copy=True)
        self.t = int(t)
