"""Small CNN image encoder: region features for the word-level loss and a
global vector for the Fréchet/Inception-style metrics."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .functional import downsample_avg2x
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, leaky_relu


class RegionFeatures(NamedTuple):
    regions: Tensor  # (N, n, D_r), n = H_tap * W_tap
    glob: Tensor  # (N, D_r)


class ImageEncoder(Module):
    """Four conv stages (32, 64, 128, 256 channels) separated by 2× average pooling.

    Regions are tapped after the third stage (8×8 for 32×32 input) and
    projected by a 1×1 conv; the global vector is the spatially averaged
    fourth stage through a linear layer.
    """

    def __init__(self, rng: np.random.Generator, image_size: int = 32, channels=(32, 64, 128, 256),
                 out_dim: int = 256):
        if image_size % 8:
            raise ContractError(f"image size must be a multiple of 8, got {image_size}")
        self.image_size = image_size
        self.out_dim = out_dim
        chans = (3,) + tuple(channels)
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng) for i in range(4)]
        self.region_proj = Conv2d(chans[3], out_dim, 1, rng)
        self.global_proj = Linear(chans[4], out_dim, rng)

    def forward(self, img: Tensor) -> RegionFeatures:
        if img.ndim == 3:
            img = img.reshape((1,) + img.shape)
        if img.ndim != 4 or img.shape[1] != 3:
            raise ContractError(f"image encoder expects N×3×H×W, got {img.shape}")
        if img.shape[2] != self.image_size or img.shape[3] != self.image_size:
            raise ContractError(f"image encoder configured for {self.image_size}px, got {img.shape[2:]}")
        h = img
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = downsample_avg2x(h)
            h = leaky_relu(conv(h))
            if i == 2:
                r = self.region_proj(h)
                n, d = r.shape[0], r.shape[1]
                regions = r.reshape(n, d, -1).transpose(0, 2, 1)
        glob = self.global_proj(h.mean(axis=(2, 3)))
        return RegionFeatures(regions, glob)
