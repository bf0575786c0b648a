"""Adversarial hinge terms, the matching-aware gradient penalty, the
word-level contrastive loss, and their assembly into step objectives."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor, grad, is_grad_enabled, log_softmax, matmul, norm, set_grad_enabled, softmax

GAMMA = 5.0
LAMBDA = 0.2
MU = 5.0
MU1 = 10.0
GP_K = 2.0
GP_P = 6.0
COSINE_EPS = 1e-8


def hinge_d_terms(d_real: Tensor, d_fake: Tensor, d_mis: Tensor) -> Tensor:
    """-E[min(0, -1+D_real)] - ½E[min(0, -1-D_fake)] - ½E[min(0, -1-D_mis)]."""
    return (1.0 - d_real).relu().mean() + ((d_fake + 1.0).relu().mean() + (d_mis + 1.0).relu().mean()) * 0.5


def ma_gradient_penalty(
    D: Callable[[Tensor, Tensor], Tensor], x: np.ndarray | Tensor, t: np.ndarray | Tensor,
    k: float = GP_K, p: float = GP_P,
):
    """k · mean over samples of (||∇_x D(x,t)|| + ||∇_t D(x,t)||)^p at real matching pairs.

    Returns ``(penalty, scores)`` so the caller can reuse D(x, t) for the hinge term.
    The penalty stays on the tape and is differentiable w.r.t. D's parameters.
    """
    outer = is_grad_enabled()
    x = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    t = Tensor(t.data if isinstance(t, Tensor) else t, requires_grad=True)
    # the input gradient is part of the value, so it is taped even under no_grad
    with set_grad_enabled(True):
        scores = D(x, t)
        gx, gt = grad(scores.sum(), [x, t], create_graph=outer)
    n = x.shape[0]
    gx = gx if gx is not None else Tensor(np.zeros(x.shape, x.dtype))
    gt = gt if gt is not None else Tensor(np.zeros(t.shape, t.dtype))
    total = norm(gx.reshape(n, -1), axis=1) + norm(gt.reshape(n, -1), axis=1)
    return (total**p).mean() * k, scores


def g_adv_loss(d_fake: Tensor) -> Tensor:
    return -d_fake.mean()


def region_context(words: Tensor, regions: Tensor, mu1: float = MU1):
    """Per-word region context c_i = sum_j alpha_ij x_j, alpha = softmax_j(mu1 · t_i·x_j).

    ``words`` (N, L, D), ``regions`` (N, n, D) -> contexts (N, L, D), alpha (N, L, n).
    """
    if words.shape[-1] != regions.shape[-1]:
        raise ContractError(f"word dim {words.shape[-1]} != region dim {regions.shape[-1]}")
    s = matmul(words, regions.swapaxes(-1, -2))
    alpha = softmax(s * mu1, axis=-1)
    return matmul(alpha, regions), alpha


def pool_contexts(contexts: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of per-word contexts over unmasked words: (N, L, D) -> (N, D)."""
    m = np.asarray(mask, dtype=contexts.dtype)
    count = m.sum(axis=1, keepdims=True)
    if (count == 0).any():
        raise ContractError("every caption needs at least one unmasked word")
    return (contexts * Tensor(m[..., None])).sum(axis=1) * Tensor(1.0 / count)


def _unit_rows(v: Tensor) -> Tensor:
    n = (v * v).sum(axis=-1, keepdims=True).sqrt()
    if (n.data < COSINE_EPS).any():
        raise NumericError(f"cosine similarity of a vector with norm below {COSINE_EPS}")
    return v / n


def word_loss(c: Tensor, t: Tensor, mu: float = MU) -> Tensor:
    """-sum_i log softmax_j(mu · cos(c_i, t_j))[i]: each image context should pick its own sentence."""
    if c.shape != t.shape or c.ndim != 2:
        raise ContractError(f"contexts {c.shape} and sentences {t.shape} must both be M×D")
    sim = matmul(_unit_rows(c), _unit_rows(t).T)
    logp = log_softmax(sim * mu, axis=1)
    eye = Tensor(np.eye(c.shape[0], dtype=c.dtype))
    return -(logp * eye).sum()


def word_level_loss(words: Tensor, mask: np.ndarray, regions: Tensor, sentence: Tensor,
                    mu: float = MU, mu1: float = MU1) -> Tensor:
    contexts, _ = region_context(words, regions, mu1)
    return word_loss(pool_contexts(contexts, mask), sentence, mu)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (1.0 / len(labels))


@dataclass
class LossTerms:
    l_total: float
    l_g: float
    l_d: float
    l_s: float
    l_w: float
    gp: float
    kl: float
    gamma: float = GAMMA
    lam: float = LAMBDA

    def check(self, tol: float = 1e-6):
        """Raise if the objective identities or finiteness are violated."""
        for name, val in asdict(self).items():
            if not math.isfinite(val):
                raise NumericError(f"loss term {name} is not finite")
        if abs(self.l_d - (self.lam * self.l_s + (1 - self.lam) * self.l_w)) > tol * max(1.0, abs(self.l_d)):
            raise NumericError("l_d != lam*l_s + (1-lam)*l_w")
        if abs(self.l_total - (self.l_g + self.gamma * self.l_d)) > tol * max(1.0, abs(self.l_total)):
            raise NumericError("l_total != l_g + gamma*l_d")
        return self

    def log_line(self, step: int) -> str:
        vals = (self.l_total, self.l_g, self.l_d, self.l_s, self.l_w, self.gp, self.kl)
        keys = ("l_total", "l_g", "l_d", "l_s", "l_w", "gp", "kl")
        return f"step={step} " + " ".join(f"{k}={v!r}" for k, v in zip(keys, vals))


def assemble(l_g, l_s, l_w, gp=0.0, kl=0.0, gamma: float = GAMMA, lam: float = LAMBDA) -> LossTerms:
    """Combine component values: L_D = lam L^s + (1-lam) L^w, L = L_G + gamma L_D."""
    l_g, l_s, l_w, gp, kl = (float(v.item() if isinstance(v, Tensor) else v) for v in (l_g, l_s, l_w, gp, kl))
    l_d = lam * l_s + (1.0 - lam) * l_w
    return LossTerms(l_g + gamma * l_d, l_g, l_d, l_s, l_w, gp, kl, gamma, lam).check()


def d_objective(l_s: Tensor, gamma: float = GAMMA, lam: float = LAMBDA) -> Tensor:
    """What the discriminator minimises: its share gamma·lam·L^s of the total."""
    return l_s * (gamma * lam)


def g_objective(l_g: Tensor, l_w: Tensor | None, kl: Tensor, gamma: float = GAMMA, lam: float = LAMBDA,
                kl_weight: float = 1.0) -> Tensor:
    """What generator and encoders minimise: L_G + gamma·(1-lam)·L^w + kl_weight·KL."""
    out = l_g + kl * kl_weight
    if l_w is not None and lam < 1.0:
        out = out + l_w * (gamma * (1.0 - lam))
    return out
