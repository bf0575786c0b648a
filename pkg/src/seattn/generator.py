"""Single-stage attentional generator: conditioning augmentation, FC stem,
UpBlocks with deep-fusion (DF) text conditioning, one word-attention stage,
and a tanh image head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ContractError
from .functional import upsample_nearest2x
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, concat, leaky_relu, matmul, relu, softmax


@dataclass
class GenConfig:
    z_dim: int = 100
    sent_dim: int = 256
    word_dim: int = 256
    ca_dim: int = 128
    channels: tuple = (256, 128, 64, 32)
    attn_stage: int | None = None  # index of the UpBlock followed by attention; None -> penultimate
    df_hidden: int = 64

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 2:
            raise ConfigurationError("need a stem width and at least one UpBlock width")
        if self.attn_stage is None:
            self.attn_stage = max(self.n_up - 2, 0)
        if not 0 <= self.attn_stage < self.n_up:
            raise ConfigurationError(f"attention stage {self.attn_stage} outside 0..{self.n_up - 1}")

    @property
    def n_up(self) -> int:
        return len(self.channels) - 1

    @property
    def image_size(self) -> int:
        return 4 * 2**self.n_up


class CAOutput(NamedTuple):
    mu: Tensor
    logvar: Tensor
    sample: Tensor
    eps: np.ndarray


class CondAugment(Module):
    def __init__(self, sent_dim: int, ca_dim: int, rng):
        self.ca_dim = ca_dim
        self.mu = Linear(sent_dim, ca_dim, rng)
        self.logvar = Linear(sent_dim, ca_dim, rng)

    def forward(self, e: Tensor, eps: np.ndarray | None = None, rng=None) -> CAOutput:
        mu, logvar = self.mu(e), self.logvar(e)
        if eps is None:
            if rng is None:
                raise ContractError("conditioning augmentation needs eps or an rng")
            eps = rng.standard_normal(mu.shape).astype(mu.dtype)
        eps = np.asarray(eps, dtype=mu.dtype)
        sample = mu + (logvar * 0.5).exp() * Tensor(eps)
        return CAOutput(mu, logvar, sample, eps)


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over dims, averaged over the batch."""
    per = (mu * mu + logvar.exp() - 1.0 - logvar).sum(axis=-1) * 0.5
    return per.mean()


class DFBlock(Module):
    """Sentence -> per-channel scale and shift through two small ReLU MLPs.

    Output layers start at zero, so a fresh block is the identity on ``h``.
    """

    def __init__(self, channels: int, sent_dim: int, hidden: int, rng):
        self.gamma1 = Linear(sent_dim, hidden, rng)
        self.gamma2 = Linear(hidden, channels, rng, zero=True)
        self.beta1 = Linear(sent_dim, hidden, rng)
        self.beta2 = Linear(hidden, channels, rng, zero=True)

    def affine(self, e: Tensor):
        gamma = self.gamma2(relu(self.gamma1(e)))
        beta = self.beta2(relu(self.beta1(e)))
        return gamma, beta

    def forward(self, h: Tensor, e: Tensor) -> Tensor:
        gamma, beta = self.affine(e)
        n, c = gamma.shape
        return h * (gamma.reshape(n, c, 1, 1) + 1.0) + beta.reshape(n, c, 1, 1)


class UpBlock(Module):
    """2× nearest upsample, residual 3×3 conv pair (1×1 skip on width change), DF fusion."""

    def __init__(self, c_in: int, c_out: int, sent_dim: int, df_hidden: int, rng):
        self.c_in, self.c_out = c_in, c_out
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.skip = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None
        self.df = DFBlock(c_out, sent_dim, df_hidden, rng)

    def forward(self, h: Tensor, e: Tensor) -> Tensor:
        if h.shape[1] != self.c_in:
            raise ConfigurationError(f"UpBlock expects {self.c_in} channels, got {h.shape[1]}")
        u = upsample_nearest2x(h)
        r = self.conv2(leaky_relu(self.conv1(leaky_relu(u))))
        s = self.skip(u) if self.skip is not None else u
        return self.df(s + r, e)


class AttentionLayer(Module):
    """Word-context attention over image regions with a residual 1×1 fusion.

    For region j, beta_j = softmax over unmasked words of (U t_i)·h_j and the
    word context is sum_i beta_ji (U t_i).
    """

    def __init__(self, channels: int, word_dim: int, rng):
        self.proj = Linear(word_dim, channels, rng, bias=False)
        self.fuse = Conv2d(2 * channels, channels, 1, rng)

    def weights(self, h: Tensor, words: Tensor, mask: np.ndarray):
        n, c, hh, ww = h.shape
        regions = h.reshape(n, c, hh * ww).transpose(0, 2, 1)  # (N, n_reg, C)
        t_hat = matmul(words, self.proj.weight)  # (N, L, C)
        logits = matmul(regions, t_hat.transpose(0, 2, 1))  # (N, n_reg, L)
        beta = softmax(logits, axis=-1, mask=np.asarray(mask, bool)[:, None, :])
        return beta, t_hat

    def forward(self, h: Tensor, words: Tensor, mask: np.ndarray):
        n, c, hh, ww = h.shape
        beta, t_hat = self.weights(h, words, mask)
        context = matmul(beta, t_hat).transpose(0, 2, 1).reshape(n, c, hh, ww)
        return h + self.fuse(concat([h, context], axis=1)), beta


class GenOutput(NamedTuple):
    image: Tensor
    kl: Tensor
    attn: Tensor
    ca: CAOutput


class Generator(Module):
    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        self.cfg = cfg
        ch = cfg.channels
        self.ca = CondAugment(cfg.sent_dim, cfg.ca_dim, rng)
        self.stem = Linear(cfg.z_dim + cfg.ca_dim, ch[0] * 16, rng)
        self.ups = [UpBlock(ch[i], ch[i + 1], cfg.sent_dim, cfg.df_hidden, rng) for i in range(cfg.n_up)]
        self.attn = AttentionLayer(ch[cfg.attn_stage + 1], cfg.word_dim, rng)
        self.to_rgb = Conv2d(ch[-1], 3, 3, rng)

    def stem_map(self, z: Tensor, ca: CAOutput) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.z_dim:
            raise ContractError(f"noise must be N×{self.cfg.z_dim}, got {z.shape}")
        h = self.stem(concat([z, ca.sample], axis=1))
        return h.reshape(z.shape[0], self.cfg.channels[0], 4, 4)

    def to_image(self, h: Tensor) -> Tensor:
        return self.to_rgb(h).tanh()

    def forward(self, z, sentence: Tensor, words: Tensor, mask: np.ndarray, eps=None, rng=None) -> GenOutput:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=sentence.dtype))
        ca = self.ca(sentence, eps=eps, rng=rng)
        kl = kl_standard_normal(ca.mu, ca.logvar)
        h = self.stem_map(z, ca)
        attn = None
        for i, up in enumerate(self.ups):
            try:
                h = up(h, sentence)
            except (ConfigurationError, ContractError) as exc:
                raise type(exc)(f"upblock {i}: {exc}") from exc
            if i == self.cfg.attn_stage:
                h, attn = self.attn(h, words, mask)
        return GenOutput(self.to_image(h), kl, attn, ca)


def generate(text_encoder, generator: Generator, z, tokens, eps=None, rng=None) -> GenOutput:
    """Tokens and noise to images: encode text, then run the generator."""
    feats = text_encoder(tokens)
    return generator(z, feats.sentence, feats.words, feats.mask, eps=eps, rng=rng)
