"""Spatial and lookup ops built on the tape: convolution, resampling, embedding.

Convolution is split into three mutually-adjoint primitives (forward, input
gradient, weight gradient). Each one's backward is expressed with the other
two, so the set is closed under differentiation and second derivatives flow
through discriminator convolutions for the gradient penalty.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Function, Tensor


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv extent {n} with kernel {k}, stride {stride}, padding {pad} is not integral"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = _out_extent(h, k, stride, pad), _out_extent(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = _out_extent(h, k, stride, pad), _out_extent(w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j].transpose(
                1, 0, 2, 3
            )
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def _check_conv(x_shape, w_shape):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x_shape}, weight {w_shape}")
    if w_shape[2] != w_shape[3] or w_shape[2] % 2 == 0:
        raise ConfigurationError(f"conv2d needs an odd square kernel, got {w_shape[2:]}")


def _to_rows(g: np.ndarray) -> np.ndarray:
    # (N, O, Ho, Wo) -> (O, N*Ho*Wo)
    return g.transpose(1, 0, 2, 3).reshape(g.shape[1], -1)


class Conv2d(Function):
    def forward(self, x, w, stride, padding):
        _check_conv(x.shape, w.shape)
        self.stride, self.padding = stride, padding
        k = w.shape[2]
        n, _, h, wd = x.shape
        ho, wo = _out_extent(h, k, stride, padding), _out_extent(wd, k, stride, padding)
        self.cols = _im2col(x, k, stride, padding)
        out = w.reshape(w.shape[0], -1) @ self.cols
        return np.ascontiguousarray(out.reshape(w.shape[0], n, ho, wo).transpose(1, 0, 2, 3))

    def backward(self, g):
        x, w = self.inputs
        gx = conv2d_grad_input(g, w, x.shape, self.stride, self.padding) if self.needs[0] else None
        gw = (
            Conv2dGradWeight.apply(x, g, w_shape=w.shape, stride=self.stride, padding=self.padding, cols=self.cols)
            if self.needs[1]
            else None
        )
        return gx, gw


class Conv2dGradInput(Function):
    """Transposed convolution: the adjoint of conv2d in its input."""

    def forward(self, g, w, x_shape, stride, padding):
        self.x_shape, self.stride, self.padding = tuple(x_shape), stride, padding
        cols = w.reshape(w.shape[0], -1).T @ _to_rows(g)
        return _col2im(cols, self.x_shape, w.shape[2], stride, padding)

    def backward(self, u):
        g, w = self.inputs
        dg = conv2d(u, w, stride=self.stride, padding=self.padding) if self.needs[0] else None
        dw = (
            Conv2dGradWeight.apply(u, g, w_shape=w.shape, stride=self.stride, padding=self.padding)
            if self.needs[1]
            else None
        )
        return dg, dw


class Conv2dGradWeight(Function):
    """Correlation of the input with the output gradient: adjoint of conv2d in its weight."""

    def forward(self, x, g, w_shape, stride, padding, cols=None):
        self.w_shape, self.stride, self.padding = tuple(w_shape), stride, padding
        if cols is None:
            cols = _im2col(x, w_shape[2], stride, padding)
        return (_to_rows(g) @ cols.T).reshape(self.w_shape)

    def backward(self, u):
        x, g = self.inputs
        dx = conv2d_grad_input(g, u, x.shape, self.stride, self.padding) if self.needs[0] else None
        dg = conv2d(x, u, stride=self.stride, padding=self.padding) if self.needs[1] else None
        return dx, dg


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``w`` (O,C,k,k), plus optional bias (O,)."""
    out = Conv2d.apply(x, w, stride=stride, padding=padding)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out


def conv2d_grad_input(g: Tensor, w: Tensor, x_shape, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2dGradInput.apply(g, w, x_shape=x_shape, stride=stride, padding=padding)


class Upsample2x(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"upsample expects N×C×H×W, got {x.shape}")
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, g):
        # sum over each 2×2 block == 4 × block mean
        return (downsample_avg2x(g) * 4.0,)


class Downsample2x(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"downsample expects N×C×H×W, got {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigurationError(f"downsample needs even spatial extents, got {h}×{w}")
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, g):
        return (upsample_nearest2x(g) * 0.25,)


def upsample_nearest2x(x: Tensor) -> Tensor:
    return Upsample2x.apply(x)


def downsample_avg2x(x: Tensor) -> Tensor:
    return Downsample2x.apply(x)


class EmbeddingLookup(Function):
    # the scatter-add backward is numpy-only: first order
    higher_order = False

    def forward(self, weight, ids):
        if ids.min() < 0 or ids.max() >= weight.shape[0]:
            raise ContractError(f"token id out of range for a {weight.shape[0]}-row embedding")
        self.ids = ids
        self.rows = weight.shape
        return weight[ids]

    def backward(self, g):
        out = np.zeros(self.rows, dtype=g.dtype)
        np.add.at(out, self.ids, g.data)
        return (Tensor(out),)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    return EmbeddingLookup.apply(weight, ids=np.asarray(ids, dtype=np.int64))
