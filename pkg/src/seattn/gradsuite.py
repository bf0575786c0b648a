"""Registry of finite-difference gradient checks, run by ``seattn grad-check``
and the test suite. Everything runs in 64-bit on small random instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .discriminator import DiscConfig, Discriminator
from .functional import conv2d, downsample_avg2x, embedding, upsample_nearest2x
from .generator import AttentionLayer, DFBlock, GenConfig, Generator
from .gradcheck import GradCheckReport, grad_check, param_grad_check
from .image_encoder import ImageEncoder
from .losses import hinge_d_terms, ma_gradient_penalty, word_level_loss, word_loss
from .nn import BiLSTM, Parameter
from .tensor import (
    Tensor, concat, grad, leaky_relu, log_softmax, matmul, norm, relu, set_grad_enabled, sigmoid, softmax, stack,
    tanh,
)
from .text_encoder import TextEncoder

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3
SECOND_ORDER_TOL = 1e-3

REGISTRY: dict[str, Callable[[], GradCheckReport]] = {}


def register(name: str):
    def wrap(fn):
        REGISTRY[name] = fn
        return fn
    return wrap


def _rng(name: str):
    return np.random.default_rng([sum(name.encode()), len(name)])


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _op(name: str, shape, f, x=None, positive=False, kink=False):
    """Register ``x -> sum(f(x) * w)`` with a fixed random weighting ``w``."""

    def run():
        rng = _rng(name)
        if x is not None:
            x0 = x(rng)
        elif positive:
            x0 = rng.uniform(0.5, 2.0, shape)
        elif kink:
            x0 = _away_from_zero(rng, shape)
        else:
            x0 = rng.standard_normal(shape)
        out_shape = f(Tensor(x0)).shape
        w = Tensor(rng.standard_normal(out_shape))
        return grad_check(lambda t: (f(t) * w).sum(), x0, tol=OP_TOL, name=f"op/{name}")

    REGISTRY[f"op/{name}"] = run


# -- elementwise and shape ops ----------------------------------------------
_op("add_broadcast", (3, 4), lambda t: t + Tensor(np.linspace(0, 1, 4)))
_op("mul", (3, 4), lambda t: t * t[::-1])
_op("div", (3, 4), lambda t: Tensor(np.ones((3, 4))) / t, positive=True)
_op("pow", (3, 4), lambda t: t**3.0, positive=True)
_op("exp", (3, 4), lambda t: t.exp())
_op("log", (3, 4), lambda t: t.log(), positive=True)
_op("sqrt", (3, 4), lambda t: t.sqrt(), positive=True)
_op("tanh", (3, 4), tanh)
_op("sigmoid", (3, 4), sigmoid)
_op("relu", (3, 4), relu, kink=True)
_op("leaky_relu", (3, 4), leaky_relu, kink=True)
_op("sum_axis", (3, 4, 2), lambda t: t.sum(axis=1, keepdims=True))
_op("mean", (3, 4, 2), lambda t: t.mean(axis=(0, 2)))
_op("reshape_transpose", (2, 3, 4), lambda t: t.reshape(6, 4).T)
_op("getitem", (5, 4), lambda t: t[1:4, ::2])
_op("concat_stack", (2, 3), lambda t: stack([concat([t, t * 2.0], axis=1), concat([t.exp(), t], axis=1)]))
_op("broadcast_to", (3, 1), lambda t: t.broadcast_to((3, 5)))
_op("matmul_batched", (2, 3, 4), lambda t: matmul(t, Tensor(np.arange(20.0).reshape(4, 5) / 20)))
_op("softmax", (3, 5), lambda t: softmax(t, axis=1))
_op("softmax_masked", (3, 5), lambda t: softmax(t, axis=1, mask=np.tril(np.ones((3, 5), bool))))
_op("log_softmax", (3, 5), lambda t: log_softmax(t, axis=1))
_op("norm_rows", (3, 5), lambda t: norm(t, axis=1))
_op("norm_all", (3, 5), lambda t: norm(t))

# -- spatial ops --------------------------------------------------------------
_W3 = np.random.default_rng(7).standard_normal((4, 3, 3, 3)) * 0.3
_op("conv2d_input", (2, 3, 6, 6), lambda t: conv2d(t, Tensor(_W3), padding=1))
_op("conv2d_stride2", (2, 3, 7, 7), lambda t: conv2d(t, Tensor(_W3), stride=2, padding=1))
_op("conv2d_weight", (4, 3, 3, 3),
    lambda w: conv2d(Tensor(np.random.default_rng(8).standard_normal((2, 3, 5, 5))), w, padding=1))
_op("conv2d_bias", (4,),
    lambda b: conv2d(Tensor(np.random.default_rng(9).standard_normal((2, 3, 5, 5))), Tensor(_W3), b, padding=1))
_op("upsample2x", (2, 3, 3, 3), upsample_nearest2x)
_op("downsample2x", (2, 3, 4, 6), downsample_avg2x)


@register("op/embedding")
def _embedding():
    rng = _rng("embedding")
    weight = Parameter(rng.standard_normal((7, 4)), dtype=np.float64)
    ids = np.array([[1, 3, 3], [0, 6, 1]])
    w = Tensor(rng.standard_normal((2, 3, 4)))
    return param_grad_check(lambda: (embedding(weight, ids) * w).sum(), weight, tol=OP_TOL, n_coords=None,
                            name="op/embedding")


# -- composite blocks -------------------------------------------------------------
def _all_params(name, module, loss_fn, n_coords=4, tol=COMPOSITE_TOL):
    """Worst report across every parameter tensor of ``module``."""
    worst = None
    total = 0
    for pname, p in module.named_parameters():
        rep = param_grad_check(loss_fn, p, tol=tol, n_coords=n_coords, seed=total, name=name)
        total += rep.n_checked
        if worst is None or rep.max_rel_err > worst.max_rel_err:
            worst = rep
    worst.n_checked = total
    return worst


def _tokens(rng, n, length, vocab):
    toks = np.zeros((n, length), np.int64)
    for i in range(n):
        k = int(rng.integers(3, length + 1))
        toks[i, 0], toks[i, k - 1] = 2, 3
        toks[i, 1 : k - 1] = rng.integers(4, vocab, size=k - 2)
    return toks


@register("block/bilstm")
def _bilstm():
    rng = _rng("bilstm")
    lstm = BiLSTM(3, 4, rng).to(np.float64)
    x = rng.standard_normal((2, 5, 3))
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], bool)
    w = Tensor(rng.standard_normal((2, 5, 8)))
    f = lambda t: (lstm(t, mask)[0] * w).sum() + lstm(t, mask)[1].sum()
    return grad_check(f, x, tol=COMPOSITE_TOL, name="block/bilstm")


@register("block/text_encoder")
def _text_encoder():
    rng = _rng("text_encoder")
    enc = TextEncoder(12, rng, emb_dim=6, hidden=5, max_len=7).to(np.float64)
    toks = _tokens(rng, 3, 7, 12)
    w = Tensor(rng.standard_normal((3, 7, 10)))

    def loss():
        tf = enc(toks)
        return (tf.words * w).sum() + (tf.sentence * tf.sentence).sum()

    return _all_params("block/text_encoder", enc, loss)


@register("block/image_encoder")
def _image_encoder():
    rng = _rng("image_encoder")
    enc = ImageEncoder(rng, image_size=8, channels=(3, 4, 5, 6), out_dim=5).to(np.float64)
    x = rng.standard_normal((2, 3, 8, 8))
    wr = Tensor(rng.standard_normal((2, 4, 5)))

    def f(t):
        r = enc(t)
        return (r.regions * wr).sum() + r.glob.tanh().sum()

    return grad_check(f, x, tol=COMPOSITE_TOL, name="block/image_encoder")


@register("block/dfblock")
def _dfblock():
    rng = _rng("dfblock")
    blk = DFBlock(4, 6, 5, rng).to(np.float64)
    # zero-initialised output layers would hide the hidden-layer gradients
    for p in blk.parameters():
        p.data = rng.standard_normal(p.shape) * 0.5
    h = rng.standard_normal((2, 4, 3, 3))
    e = Tensor(rng.standard_normal((2, 6)))
    w = Tensor(rng.standard_normal((2, 4, 3, 3)))
    return grad_check(lambda t: (blk(t, e) * w).sum(), h, tol=COMPOSITE_TOL, name="block/dfblock")


@register("block/dfblock_sentence")
def _dfblock_sentence():
    rng = _rng("dfblock_sentence")
    blk = DFBlock(4, 6, 5, rng).to(np.float64)
    for p in blk.parameters():
        p.data = rng.standard_normal(p.shape) * 0.5
    h = Tensor(rng.standard_normal((2, 4, 3, 3)))
    w = Tensor(rng.standard_normal((2, 4, 3, 3)))
    return grad_check(lambda e: (blk(h, e) * w).sum(), rng.standard_normal((2, 6)), tol=COMPOSITE_TOL,
                      name="block/dfblock_sentence")


@register("block/attention")
def _attention():
    rng = _rng("attention")
    layer = AttentionLayer(4, 6, rng).to(np.float64)
    words = Tensor(rng.standard_normal((2, 5, 6)))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)
    w = Tensor(rng.standard_normal((2, 4, 3, 3)))
    return grad_check(lambda t: (layer(t, words, mask)[0] * w).sum(), rng.standard_normal((2, 4, 3, 3)),
                      tol=COMPOSITE_TOL, name="block/attention")


def _tiny_generator(rng):
    cfg = GenConfig(z_dim=5, sent_dim=6, word_dim=6, ca_dim=4, channels=(6, 5, 4), df_hidden=3)
    g = Generator(cfg, rng).to(np.float64)
    for name, p in g.named_parameters():
        if np.all(p.data == 0):  # give the zero-initialised fusion layers a nonzero path
            p.data = rng.standard_normal(p.shape) * 0.3
    return g


@register("model/generator")
def _generator():
    rng = _rng("generator")
    g = _tiny_generator(rng)
    z = rng.standard_normal((2, 5))
    sent = Tensor(rng.standard_normal((2, 6)))
    words = Tensor(rng.standard_normal((2, 4, 6)))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], bool)
    eps = rng.standard_normal((2, 4))
    w = Tensor(rng.standard_normal((2, 3, 16, 16)))

    def loss():
        out = g(z, sent, words, mask, eps=eps)
        return (out.image * w).sum() + out.kl

    return _all_params("model/generator", g, loss, n_coords=3)


@register("model/generator_input")
def _generator_input():
    rng = _rng("generator_input")
    g = _tiny_generator(rng)
    z = rng.standard_normal((2, 5))
    words = Tensor(rng.standard_normal((2, 4, 6)))
    mask = np.ones((2, 4), bool)
    eps = rng.standard_normal((2, 4))
    w = Tensor(rng.standard_normal((2, 3, 16, 16)))
    f = lambda s: (g(z, s, words, mask, eps=eps).image * w).sum()
    return grad_check(f, rng.standard_normal((2, 6)), tol=COMPOSITE_TOL, name="model/generator_input")


def _tiny_discriminator(rng):
    return Discriminator(DiscConfig(image_size=8, channels=(4, 5), sent_dim=6, joint_channels=3), rng).to(np.float64)


@register("model/discriminator")
def _discriminator():
    rng = _rng("discriminator")
    d = _tiny_discriminator(rng)
    x = Tensor(rng.standard_normal((3, 3, 8, 8)))
    e = Tensor(rng.standard_normal((3, 6)))
    return _all_params("model/discriminator", d, lambda: d(x, e).tanh().sum(), n_coords=3)


@register("model/discriminator_input")
def _discriminator_input():
    rng = _rng("discriminator_input")
    d = _tiny_discriminator(rng)
    e = Tensor(rng.standard_normal((3, 6)))
    return grad_check(lambda x: d(x, e).tanh().sum(), rng.standard_normal((3, 3, 8, 8)), tol=COMPOSITE_TOL,
                      name="model/discriminator_input")


# -- losses ------------------------------------------------------------------
@register("loss/hinge")
def _hinge():
    rng = _rng("hinge")
    x = rng.uniform(-2, 2, 12)
    x = np.where(np.abs(np.abs(x) - 1) < 0.1, x * 1.3, x)  # keep off the hinge corners
    return grad_check(lambda t: hinge_d_terms(t[:4], t[4:8], t[8:]), x, tol=OP_TOL, name="loss/hinge")


@register("loss/word_loss")
def _word_loss():
    rng = _rng("word_loss")
    t = Tensor(rng.standard_normal((4, 5)))
    return grad_check(lambda c: word_loss(c, t), rng.standard_normal((4, 5)), tol=OP_TOL, name="loss/word_loss")


@register("loss/word_level_regions")
def _word_level():
    rng = _rng("word_level")
    words = Tensor(rng.standard_normal((3, 4, 5)) * 0.3)
    sent = Tensor(rng.standard_normal((3, 5)))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]], bool)
    f = lambda r: word_level_loss(words, mask, r, sent)
    return grad_check(f, rng.standard_normal((3, 6, 5)) * 0.3, tol=COMPOSITE_TOL, name="loss/word_level_regions")


# -- second order -----------------------------------------------------------------
@register("second/gp_params")
def _gp_params():
    """Penalty gradient w.r.t. discriminator weights flows through the input gradient."""
    rng = _rng("gp_params")
    d = _tiny_discriminator(rng)
    x = rng.standard_normal((3, 3, 8, 8))
    e = rng.standard_normal((3, 6))
    loss = lambda: ma_gradient_penalty(d, x, e, k=2.0, p=2.0)[0]
    return _all_params("second/gp_params", d, loss, n_coords=3, tol=SECOND_ORDER_TOL)


@register("second/gp_params_p6")
def _gp_params_p6():
    rng = _rng("gp_params_p6")
    d = _tiny_discriminator(rng)
    x = rng.standard_normal((3, 3, 8, 8))
    e = rng.standard_normal((3, 6))
    loss = lambda: ma_gradient_penalty(d, x, e)[0]
    return _all_params("second/gp_params_p6", d, loss, n_coords=2, tol=SECOND_ORDER_TOL)


def _hvp(name, shape, f):
    """x -> <grad f(x), v>: checks the derivative of a tape-built gradient."""

    def run():
        rng = _rng(name)
        v = Tensor(rng.standard_normal(shape))

        def dir_grad(t):
            with set_grad_enabled(True):
                (g,) = grad(f(t), [t], create_graph=True)
                return (g * v).sum()

        return grad_check(lambda t: dir_grad(_leaf(t)), _away_from_zero(rng, shape), tol=SECOND_ORDER_TOL,
                          name=f"second/{name}")

    REGISTRY[f"second/{name}"] = run


def _leaf(t: Tensor) -> Tensor:
    # grad() needs a tensor that requires grad even inside the no-grad difference loop
    return t if t.requires_grad else Tensor(t.data, requires_grad=True)


_W2 = np.random.default_rng(11).standard_normal((3, 2, 3, 3)) * 0.4
_hvp("conv_chain", (2, 2, 5, 5), lambda t: (conv2d(t, Tensor(_W2), padding=1).tanh() ** 2.0).sum())
_hvp("softmax_norm", (3, 4), lambda t: (softmax(t, axis=1) * Tensor(np.arange(12.0).reshape(3, 4))).sum()
     + norm(t, axis=1).sum())
_hvp("updown", (1, 2, 4, 4), lambda t: (downsample_avg2x(upsample_nearest2x(t).tanh() ** 2.0) * t).sum())
_hvp("matmul_sigmoid", (3, 3), lambda t: sigmoid(matmul(t, t)).sum())


def run_all(names=None, log=None) -> list[GradCheckReport]:
    reports = []
    for name in names or list(REGISTRY):
        rep = REGISTRY[name]()
        rep.name = name
        reports.append(rep)
        if log is not None:
            log(rep.line())
    return reports
