"""Three-stage stacked attentional baseline used only for cost comparison.

Each stage refines the previous feature map with word attention and two
residual blocks, upsamples, and emits its own image; one discriminator per
output resolution. Built from the same layers as the single-stage model at
the same final output size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminator import DiscConfig, Discriminator
from .functional import upsample_nearest2x
from .generator import CondAugment, AttentionLayer
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, concat, leaky_relu


@dataclass
class ReferenceConfig:
    z_dim: int = 100
    sent_dim: int = 256
    word_dim: int = 256
    ca_dim: int = 128
    stem_channels: int = 1024
    stage_channels: tuple = (512, 256, 128)  # feature width at 8, 16, 32 px
    disc_channels: tuple = ((256, 512), (128, 256, 512), (64, 128, 256, 512))
    res_blocks: int = 2


class ResBlock(Module):
    def __init__(self, c: int, rng):
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)

    def forward(self, h):
        return h + self.conv2(leaky_relu(self.conv1(leaky_relu(h))))


class UpConv(Module):
    def __init__(self, c_in: int, c_out: int, rng):
        self.conv = Conv2d(c_in, c_out, 3, rng)

    def forward(self, h):
        return leaky_relu(self.conv(upsample_nearest2x(h)))


class RefineStage(Module):
    """Word attention, residual refinement, 2× upsampling, and an image head."""

    def __init__(self, c_in: int, c_out: int, word_dim: int, n_res: int, rng):
        self.attn = AttentionLayer(c_in, word_dim, rng)
        self.res = [ResBlock(c_in, rng) for _ in range(n_res)]
        self.up = UpConv(c_in, c_out, rng)
        self.to_rgb = Conv2d(c_out, 3, 3, rng)

    def forward(self, h, words, mask):
        h, _ = self.attn(h, words, mask)
        for block in self.res:
            h = block(h)
        h = self.up(h)
        return h, self.to_rgb(h).tanh()


class ReferenceGenerator(Module):
    def __init__(self, cfg: ReferenceConfig, rng):
        self.cfg = cfg
        ch = cfg.stage_channels
        self.ca = CondAugment(cfg.sent_dim, cfg.ca_dim, rng)
        self.stem = Linear(cfg.z_dim + cfg.ca_dim, cfg.stem_channels * 16, rng)
        self.init_up = UpConv(cfg.stem_channels, ch[0], rng)
        self.init_rgb = Conv2d(ch[0], 3, 3, rng)
        self.stages = [RefineStage(ch[i], ch[i + 1], cfg.word_dim, cfg.res_blocks, rng) for i in range(len(ch) - 1)]

    def forward(self, z, sentence: Tensor, words: Tensor, mask, eps=None, rng=None):
        """Images at every resolution, coarsest first."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=sentence.dtype))
        ca = self.ca(sentence, eps=eps, rng=rng)
        h = self.stem(concat([z, ca.sample], axis=1)).reshape(z.shape[0], self.cfg.stem_channels, 4, 4)
        h = self.init_up(h)
        images = [self.init_rgb(h).tanh()]
        for stage in self.stages:
            h, img = stage(h, words, mask)
            images.append(img)
        return images


class ReferenceModel(Module):
    """Generator plus one discriminator per output resolution."""

    def __init__(self, cfg: ReferenceConfig | None = None, rng=None):
        cfg = cfg or ReferenceConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.G = ReferenceGenerator(cfg, rng)
        self.Ds = [Discriminator(DiscConfig(image_size=4 * 2 ** (len(c) - 1), channels=c, sent_dim=cfg.sent_dim), rng)
                   for c in cfg.disc_channels]
