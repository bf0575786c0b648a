"""Alternating D/G training with encoder warmup, logging, checkpoints and
final evaluation."""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import N_CLASSES, class_id, DatasetManifest, SynthDataset, batches, batches_per_epoch
from .discriminator import DiscConfig, Discriminator
from .errors import ContractError, NumericError
from .generator import GenConfig, Generator
from .image_encoder import ImageEncoder
from .losses import (
    assemble, cross_entropy, d_objective, g_adv_loss, g_objective, hinge_d_terms, ma_gradient_penalty,
    word_level_loss,
)
from .metrics import count_params, frechet_distance, gaussian_stats, inception_score, semantic_probe, shuffled_baseline
from .nn import Linear, Module
from .optim import Adam
from .tensor import Tensor, backward, no_grad, softmax
from .text_encoder import TextEncoder

EVAL_CHUNK = 50


def class_ids(labels: np.ndarray) -> np.ndarray:
    return np.array([class_id(row) for row in labels], dtype=np.int64)


class Models(Module):
    """Every network of a run, in one namespace so checkpoints can name them."""

    def __init__(self, cfg: TrainConfig, vocab_size: int):
        rng = np.random.default_rng([cfg.seed, 0])
        self.text_enc = TextEncoder(vocab_size, rng)
        self.img_enc = ImageEncoder(rng, image_size=cfg.image_size)
        self.head = Linear(self.img_enc.out_dim, N_CLASSES, rng)
        self.G = Generator(GenConfig(z_dim=cfg.z_dim, ca_dim=cfg.ca_dim, channels=cfg.gen_channels,
                                     df_hidden=cfg.df_hidden), rng)
        self.D = Discriminator(DiscConfig(image_size=cfg.image_size, channels=cfg.disc_channels), rng)
        # frozen copy of the warmed-up image encoder + classifier, used only for metrics
        self.eval_enc = ImageEncoder(rng, image_size=cfg.image_size)
        self.eval_head = Linear(self.eval_enc.out_dim, N_CLASSES, rng)
        self.eval_enc.requires_grad_(False)
        self.eval_head.requires_grad_(False)

    def freeze_evaluator(self):
        self.eval_enc.load_state_dict(self.img_enc.state_dict())
        self.eval_head.load_state_dict(self.head.state_dict())


def _prefixed(*pairs):
    out = []
    for prefix, module in pairs:
        out.extend(module.named_parameters(prefix))
    return out


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: SynthDataset | None = None):
        self.cfg = cfg
        if dataset is None:
            dataset = SynthDataset.generate(DatasetManifest(
                seed=cfg.data_seed, count=cfg.data_count, image_size=cfg.image_size, train_count=cfg.train_count))
        m = dataset.manifest
        if (m.seed, m.count, m.image_size, m.train_count) != (
                cfg.data_seed, cfg.data_count, cfg.image_size, cfg.train_count):
            raise ContractError("dataset manifest does not match the training config")
        self.dataset = dataset
        self.train_set = dataset.split("train")
        self.models = Models(cfg, len(dataset.vocab))
        mm = self.models
        betas = (cfg.beta1, cfg.beta2)
        self.opt_pre = Adam(_prefixed(("text_enc", mm.text_enc), ("img_enc", mm.img_enc), ("head", mm.head)),
                            cfg.lr_pretrain, betas, cfg.adam_eps)
        self.opt_g = Adam(_prefixed(("G", mm.G), ("text_enc", mm.text_enc), ("img_enc", mm.img_enc)),
                          cfg.lr_g, betas, cfg.adam_eps)
        self.opt_d = Adam(_prefixed(("D", mm.D),), cfg.lr_d, betas, cfg.adam_eps)
        self.noise_rng = np.random.default_rng([cfg.seed, 2])
        self.step = 0
        self.bpe = batches_per_epoch(len(self.train_set), cfg.batch_size)
        self._epoch_cache = (None, None)
        if cfg.pretrain_epochs == 0:
            mm.freeze_evaluator()

    # -- schedule --------------------------------------------------------
    @property
    def pretrain_steps(self) -> int:
        return self.cfg.pretrain_epochs * self.bpe

    @property
    def total_steps(self) -> int:
        return (self.cfg.pretrain_epochs + self.cfg.epochs) * self.bpe

    def _batch(self, step: int):
        epoch, b = divmod(step, self.bpe)
        if self._epoch_cache[0] != epoch:
            self._epoch_cache = (epoch, list(batches(self.train_set, self.cfg.batch_size, self.cfg.seed, epoch,
                                                     self.cfg.z_dim)))
        return self._epoch_cache[1][b]

    # -- steps -------------------------------------------------------------
    def pretrain_step(self, batch) -> str:
        mm, cfg = self.models, self.cfg
        self.opt_pre.zero_grad()
        tf = mm.text_enc(batch.tokens)
        reg = mm.img_enc(Tensor(batch.images))
        l_w = word_level_loss(tf.words, tf.mask, reg.regions, tf.sentence, cfg.mu, cfg.mu1)
        ce = cross_entropy(mm.head(reg.glob), class_ids(batch.labels))
        backward(l_w + ce)
        self.opt_pre.step()
        return f"# pretrain step={self.step} l_w={l_w.item()!r} ce={ce.item()!r}"

    def gan_step(self, batch) -> str:
        mm, cfg = self.models, self.cfg
        n = len(batch.index)
        real = batch.images
        eps = self.noise_rng.standard_normal((n, cfg.ca_dim)).astype(np.float32)

        # discriminator update: generator output and sentence vectors are constants here
        with no_grad():
            tf = mm.text_enc(batch.tokens)
            fake = mm.G(batch.z, tf.sentence, tf.words, tf.mask, eps=eps).image.data
        e = tf.sentence.data
        self.opt_d.zero_grad()
        gp, d_real = ma_gradient_penalty(mm.D, real, e, cfg.gp_k, cfg.gp_p)
        d_rest = mm.D(Tensor(np.concatenate([fake, real])), Tensor(np.concatenate([e, e[batch.mismatch]])))
        l_s = hinge_d_terms(d_real, d_rest[:n], d_rest[n:]) + gp
        backward(d_objective(l_s, cfg.gamma, cfg.lam))
        self.opt_d.step()

        # generator + encoder update with the discriminator frozen
        mm.D.requires_grad_(False)
        try:
            self.opt_g.zero_grad()
            tf = mm.text_enc(batch.tokens)
            out = mm.G(batch.z, tf.sentence, tf.words, tf.mask, eps=eps)
            l_g = g_adv_loss(mm.D(out.image, Tensor(tf.sentence.data)))
            use_w = cfg.lam < 1.0
            if use_w:
                reg = mm.img_enc(out.image)
                l_w = word_level_loss(tf.words, tf.mask, reg.regions, tf.sentence, cfg.mu, cfg.mu1)
            else:
                with no_grad():  # still logged, never optimized
                    reg = mm.img_enc(Tensor(out.image.data))
                    l_w = word_level_loss(Tensor(tf.words.data), tf.mask, reg.regions, Tensor(tf.sentence.data),
                                          cfg.mu, cfg.mu1)
            backward(g_objective(l_g, l_w if use_w else None, out.kl, cfg.gamma, cfg.lam, cfg.kl_weight))
            self.opt_g.step()
        finally:
            mm.D.requires_grad_(True)
        terms = assemble(l_g, l_s, l_w, gp, out.kl, cfg.gamma, cfg.lam)
        return terms.log_line(self.step)

    def train_step(self) -> str:
        batch = self._batch(self.step)
        line = self.pretrain_step(batch) if self.step < self.pretrain_steps else self.gan_step(batch)
        self.step += 1
        if self.step == self.pretrain_steps:
            self.models.freeze_evaluator()
        return line

    def run(self, out_dir=None, max_steps: int | None = None, log=None) -> list[str]:
        """Train to the end of the schedule (or ``max_steps`` more steps).

        With ``out_dir``, log lines go to ``train.log`` and checkpoints to
        ``ckpt_<step>.bin`` on cadence plus ``last.bin`` at the end. A numeric
        failure propagates; checkpoints already written are left intact.
        """
        end = self.total_steps if max_steps is None else min(self.total_steps, self.step + max_steps)
        out = Path(out_dir) if out_dir is not None else None
        fh = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            fh = open(out / "train.log", "a", encoding="utf-8")
        lines = []
        try:
            while self.step < end:
                try:
                    line = self.train_step()
                except NumericError as exc:
                    raise NumericError(f"step {self.step}: {exc}") from exc
                lines.append(line)
                if fh is not None:
                    fh.write(line + "\n")
                    fh.flush()
                if log is not None:
                    log(line)
                every = self.cfg.checkpoint_every
                if out is not None and every and self.step % every == 0:
                    self.save(out / f"ckpt_{self.step:06d}.bin")
            if out is not None:
                self.save(out / "last.bin")
        finally:
            if fh is not None:
                fh.close()
        return lines

    # -- persistence ------------------------------------------------------
    def to_checkpoint(self) -> ckpt.Checkpoint:
        tensors = OrderedDict((k, p.data) for k, p in self.models.named_parameters())
        for prefix, opt in (("adam_pre", self.opt_pre), ("adam_g", self.opt_g), ("adam_d", self.opt_d)):
            tensors.update(opt.state(prefix))
        # snapshot: parameters and moments are updated in place by later steps
        tensors = OrderedDict((k, v.copy()) for k, v in tensors.items())
        records = OrderedDict()
        records["rng.noise"] = ckpt.json_record(self.noise_rng.bit_generator.state)
        records["adam.t"] = ckpt.json_record({"pre": self.opt_pre.t, "g": self.opt_g.t, "d": self.opt_d.t})
        return ckpt.Checkpoint(self.step, self.cfg.to_text(), tensors, records)

    def save(self, path):
        ckpt.save(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, source, dataset: SynthDataset | None = None) -> "Trainer":
        ck = source if isinstance(source, ckpt.Checkpoint) else ckpt.load(source)
        tr = cls(TrainConfig.from_text(ck.config_text), dataset)
        names = [k for k, _ in tr.models.named_parameters()]
        tr.models.load_state_dict(OrderedDict((k, ck.tensors[k]) for k in names if k in ck.tensors))
        t = ck.record_json("adam.t")
        tr.opt_pre.load_state("adam_pre", ck.tensors, t["pre"])
        tr.opt_g.load_state("adam_g", ck.tensors, t["g"])
        tr.opt_d.load_state("adam_d", ck.tensors, t["d"])
        tr.noise_rng.bit_generator.state = ck.record_json("rng.noise")
        tr.step = ck.step
        return tr


def generate_images(models: Models, tokens: np.ndarray, seed: int, z_dim: int, ca_dim: int) -> np.ndarray:
    """Deterministic generation: noise and CA samples from ``seed`` in fixed chunks."""
    rng = np.random.default_rng([seed, 3])
    out = []
    with no_grad():
        for i in range(0, len(tokens), EVAL_CHUNK):
            tok = tokens[i : i + EVAL_CHUNK]
            z = rng.standard_normal((len(tok), z_dim)).astype(np.float32)
            eps = rng.standard_normal((len(tok), ca_dim)).astype(np.float32)
            tf = models.text_enc(tok)
            out.append(models.G(z, tf.sentence, tf.words, tf.mask, eps=eps).image.data)
    return np.concatenate(out)


def _eval_features(models: Models, images: np.ndarray):
    feats, probs = [], []
    with no_grad():
        for i in range(0, len(images), EVAL_CHUNK):
            g = models.eval_enc(Tensor(images[i : i + EVAL_CHUNK])).glob
            feats.append(g.data.astype(np.float64))
            probs.append(softmax(models.eval_head(g), axis=1).data.astype(np.float64))
    return np.concatenate(feats), np.concatenate(probs)


def discriminator_gap(models: Models, ds: SynthDataset) -> float:
    """mean D(real, matching) - mean D(real, mismatching); mismatch is a cyclic shift over the split."""
    scores_m, scores_x = [], []
    with no_grad():
        e = np.concatenate([models.text_enc(ds.tokens[i : i + EVAL_CHUNK]).sentence.data
                            for i in range(0, len(ds), EVAL_CHUNK)])
        e_mis = np.roll(e, -1, axis=0)
        for i in range(0, len(ds), EVAL_CHUNK):
            img = Tensor(ds.images[i : i + EVAL_CHUNK])
            h = models.D.features(img)
            scores_m.append(models.D.score(h, Tensor(e[i : i + EVAL_CHUNK])).data)
            scores_x.append(models.D.score(h, Tensor(e_mis[i : i + EVAL_CHUNK])).data)
    return float(np.concatenate(scores_m).mean() - np.concatenate(scores_x).mean())


def evaluate(trainer: Trainer) -> "OrderedDict[str, float | int]":
    """Final metrics; a deterministic function of the model state (no timings)."""
    cfg, mm = trainer.cfg, trainer.models
    train, val = trainer.train_set, trainer.dataset.split("val")
    n_gen = min(cfg.eval_count, len(train))
    fake_train = generate_images(mm, train.tokens[:n_gen], cfg.seed, cfg.z_dim, cfg.ca_dim)
    fake_val = generate_images(mm, val.tokens, cfg.seed + 1, cfg.z_dim, cfg.ca_dim)
    real_feats, real_probs = _eval_features(mm, train.images)
    fake_feats, fake_probs = _eval_features(mm, fake_train)
    rep = OrderedDict()
    rep["step"] = trainer.step
    rep["proxy_fid"] = frechet_distance(gaussian_stats(real_feats), gaussian_stats(fake_feats))
    rep["proxy_is"], rep["proxy_is_std"] = inception_score(fake_probs, splits=10)
    rep["proxy_is_real"], _ = inception_score(real_probs, splits=10)
    rep["d_gap_val"] = discriminator_gap(mm, val)
    rep["probe_generated_val"] = semantic_probe(fake_val, val.captions)
    rep["probe_shuffled_val"] = shuffled_baseline(val.images, val.captions, seed=cfg.seed)
    rep["probe_real_val"] = semantic_probe(val.images, val.captions)
    rep["params_generator"] = count_params(mm.G)
    rep["params_text_encoder"] = count_params(mm.text_enc)
    rep["params_discriminator"] = count_params(mm.D)
    rep["finite"] = int(all(np.isfinite(p.data).all() for p in mm.parameters()))
    return rep


def report_json(rep) -> str:
    return json.dumps(rep, indent=2) + "\n"
