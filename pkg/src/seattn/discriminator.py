"""Sentence-conditioned discriminator with an unbounded scalar output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .functional import downsample_avg2x
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, concat, leaky_relu


@dataclass
class DiscConfig:
    image_size: int = 32
    channels: tuple = (32, 64, 128, 256)  # stem width, then one entry per DownBlock
    sent_dim: int = 256
    joint_channels: int = 64

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.image_size != 4 * 2 ** (len(self.channels) - 1):
            raise ConfigurationError(
                f"image size {self.image_size} needs {int(np.log2(self.image_size // 4))} DownBlocks, "
                f"schedule {self.channels} gives {len(self.channels) - 1}"
            )


class DownBlock(Module):
    """2× average pool, then a residual 3×3 conv pair with a 1×1 skip on width change."""

    def __init__(self, c_in: int, c_out: int, rng):
        self.c_in, self.c_out = c_in, c_out
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.skip = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def forward(self, h: Tensor) -> Tensor:
        d = downsample_avg2x(h)
        r = self.conv2(leaky_relu(self.conv1(leaky_relu(d))))
        s = self.skip(d) if self.skip is not None else d
        return s + r


class Discriminator(Module):
    def __init__(self, cfg: DiscConfig, rng: np.random.Generator):
        self.cfg = cfg
        ch = cfg.channels
        self.stem = Conv2d(3, ch[0], 3, rng)
        self.downs = [DownBlock(ch[i], ch[i + 1], rng) for i in range(len(ch) - 1)]
        self.joint = Conv2d(ch[-1] + cfg.sent_dim, cfg.joint_channels, 3, rng)
        # a "valid" 4×4 conv over a 4×4 map is a linear layer on the flattened map
        self.out = Linear(cfg.joint_channels * 16, 1, rng)

    def features(self, img: Tensor) -> Tensor:
        if img.ndim != 4 or img.shape[1] != 3 or img.shape[2] != self.cfg.image_size or img.shape[3] != self.cfg.image_size:
            raise ContractError(f"discriminator expects N×3×{self.cfg.image_size}×{self.cfg.image_size}, got {img.shape}")
        h = self.stem(img)
        for down in self.downs:
            h = down(h)
        return h

    def score(self, h: Tensor, e: Tensor) -> Tensor:
        n = h.shape[0]
        if e.shape != (n, self.cfg.sent_dim):
            raise ContractError(f"sentence batch must be {n}×{self.cfg.sent_dim}, got {e.shape}")
        tiled = e.reshape(n, -1, 1, 1).broadcast_to((n, e.shape[1], 4, 4))
        j = leaky_relu(self.joint(concat([leaky_relu(h), tiled], axis=1)))
        return self.out(j.reshape(n, -1)).reshape(n)

    def forward(self, img: Tensor, e: Tensor) -> Tensor:
        """Per-sample real/matching score, shape (N,)."""
        return self.score(self.features(img), e)
