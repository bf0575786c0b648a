"""Parameter containers and the small set of layers the models are built from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ContractError, DimensionError
from .tensor import Tensor, concat, matmul, stack


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class. Parameters and submodules are discovered from attributes,
    in assignment order, so parameter names follow the module hierarchy."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(val, Parameter):
                yield name, val
            else:
                yield from val.named_parameters(name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}.{key}" if prefix else key)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool = True):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def to(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def _uniform(rng, fan_in, shape, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """y = x W + b with W stored as (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        self.n_in, self.n_out = n_in, n_out
        if zero:
            self.weight = Parameter(np.zeros((n_in, n_out), np.float32))
        else:
            self.weight = Parameter(_uniform(rng, n_in, (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"Linear expects last dim {self.n_in}, got {x.shape}")
        y = matmul(x, self.weight) if x.ndim > 1 else matmul(x.reshape(1, -1), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, bias: bool = True):
        self.c_in, self.c_out, self.k = c_in, c_out, k
        fan_in = c_in * k * k
        self.weight = Parameter(_uniform(rng, fan_in, (c_out, c_in, k, k)))
        self.bias = Parameter(np.zeros(c_out, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=1, padding=self.k // 2)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.weight = Parameter(rng.normal(0.0, 1.0, size=(n, dim)).astype(np.float32))

    def forward(self, ids) -> Tensor:
        return F.embedding(self.weight, ids)


class LSTMDirection(Module):
    """Single-direction LSTM over a padded batch.

    Masked (PAD) steps carry the previous state through unchanged, so a PAD
    embedding can never leak into the hidden states.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_ih = Parameter(_uniform(rng, hidden, (n_in, 4 * hidden)))
        self.w_hh = Parameter(_uniform(rng, hidden, (hidden, 4 * hidden)))
        b = np.zeros(4 * hidden, np.float32)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.bias = Parameter(b)

    def forward(self, x: Tensor, mask: np.ndarray, reverse: bool = False):
        n, length, _ = x.shape
        hid = self.hidden
        xp = matmul(x, self.w_ih) + self.bias  # (N, L, 4H)
        h = Tensor(np.zeros((n, hid), x.dtype))
        c = Tensor(np.zeros((n, hid), x.dtype))
        steps = range(length - 1, -1, -1) if reverse else range(length)
        outs: list[Tensor] = [None] * length
        for t in steps:
            gates = xp[:, t] + matmul(h, self.w_hh)
            i = gates[:, :hid].sigmoid()
            f = gates[:, hid : 2 * hid].sigmoid()
            g = gates[:, 2 * hid : 3 * hid].tanh()
            o = gates[:, 3 * hid :].sigmoid()
            c_new = f * c + i * g
            h_new = o * c_new.tanh()
            m = mask[:, t : t + 1].astype(x.dtype)
            if m.all():
                h, c = h_new, c_new
            else:
                keep = Tensor(m)
                hold = Tensor(1.0 - m)
                h = h_new * keep + h * hold
                c = c_new * keep + c * hold
            outs[t] = h
        return stack(outs, axis=1), h


class BiLSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.fwd = LSTMDirection(n_in, hidden, rng)
        self.bwd = LSTMDirection(n_in, hidden, rng)

    def forward(self, x: Tensor, mask: np.ndarray):
        hf, last_f = self.fwd(x, mask)
        hb, last_b = self.bwd(x, mask, reverse=True)
        return concat([hf, hb], axis=-1), concat([last_f, last_b], axis=-1)
