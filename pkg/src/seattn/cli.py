"""Command-line entry point: gen-data | train | sample | eval | bench | grad-check.

Exit codes: 0 success, 1 numeric failure (NaN, failed gradient check),
2 usage error (bad flag, missing file, invalid config).
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import DatasetManifest, SynthDataset
from .errors import ConfigurationError, ContractError, NumericError
from .metrics import bench_inference, count_params, write_report
from .ppm import grid, write_ppm
from .text_encoder import tokenize_batch
from .train import Trainer, evaluate, generate_images


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file or directory: {path}")
    return p


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_text(_existing(args.config).read_text(encoding="utf-8")) if args.config else TrainConfig()
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = (v.strip() for v in item.split("=", 1))
        changes[key] = TrainConfig.parse_value(key, val)
    return cfg.replace(**changes) if changes else cfg


def _dataset(cfg: TrainConfig, data_dir):
    if data_dir:
        return SynthDataset.load(_existing(data_dir))
    return None


def _trainer_from_checkpoint(path, data_dir=None) -> Trainer:
    ck = ckpt.load(_existing(path))
    cfg = TrainConfig.from_text(ck.config_text)
    return Trainer.from_checkpoint(ck, _dataset(cfg, data_dir))


def cmd_gen_data(args):
    if args.manifest:
        m = DatasetManifest.from_text(_existing(args.manifest).read_text(encoding="utf-8"))
    else:
        m = DatasetManifest(seed=args.seed, count=args.count, image_size=args.image_size, train_count=args.train_count)
    SynthDataset.generate(m).save(args.out)
    print(f"wrote {m.count} samples to {args.out}")


def cmd_train(args):
    if args.resume:
        tr = _trainer_from_checkpoint(args.resume, args.data)
    else:
        cfg = _load_config(args)
        tr = Trainer(cfg, _dataset(cfg, args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(tr.cfg.to_text(), encoding="utf-8")
    tr.run(out_dir=out, max_steps=args.max_steps, log=None if args.quiet else print)
    if tr.step == tr.total_steps and not args.no_eval:
        write_report(evaluate(tr), out / "eval.txt", out / "eval.json")
        print(f"evaluation written to {out / 'eval.txt'}")


def cmd_sample(args):
    tr = _trainer_from_checkpoint(args.checkpoint)
    caps = [c for c in _existing(args.captions).read_text(encoding="utf-8").splitlines() if c.strip()]
    if not caps:
        raise UsageError(f"{args.captions} holds no captions")
    tokens = tokenize_batch(caps, tr.dataset.vocab)
    images = generate_images(tr.models, tokens, args.seed, tr.cfg.z_dim, tr.cfg.ca_dim)
    write_ppm(args.out, grid(images, cols=args.cols))
    print(f"wrote {len(caps)} samples to {args.out}")


def cmd_eval(args):
    tr = _trainer_from_checkpoint(args.checkpoint, args.data)
    rep = evaluate(tr)
    write_report(rep, args.out, args.json)
    for k, v in rep.items():
        print(f"{k}={v}")


def _inference_fn(text_enc, gen, cfg, vocab_caps):
    from .tensor import no_grad

    tokens_all = vocab_caps

    def run(batch):
        rng = np.random.default_rng(0)
        tok = tokens_all[:batch]
        z = rng.standard_normal((batch, cfg.z_dim)).astype(np.float32)
        eps = rng.standard_normal((batch, cfg.ca_dim)).astype(np.float32)
        with no_grad():
            tf = text_enc(tok)
            return gen(z, tf.sentence, tf.words, tf.mask, eps=eps)

    return run


def _param_bytes(*modules) -> int:
    tensors = OrderedDict()
    for i, m in enumerate(modules):
        tensors.update((f"{i}.{k}", v) for k, v in m.state_dict().items())
    return len(ckpt.encode(ckpt.Checkpoint(0, "", tensors)))


def cmd_bench(args):
    from .reference import ReferenceConfig, ReferenceGenerator

    if args.checkpoint:
        tr = _trainer_from_checkpoint(args.checkpoint)
    else:
        tr = Trainer(_load_config(args))
    cfg, mm = tr.cfg, tr.models
    threads = int(os.environ.get("SEATTN_THREADS", "1"))
    tokens = np.concatenate([tr.dataset.tokens] * 2)[:64]
    targets = [("seattn", mm.text_enc, mm.G)]
    if args.reference:
        ref = ReferenceGenerator(ReferenceConfig(z_dim=cfg.z_dim, ca_dim=cfg.ca_dim), np.random.default_rng(0))
        targets.append(("reference", mm.text_enc, ref))
    lines = []
    for name, enc, gen in targets:
        run = _inference_fn(enc, gen, cfg, tokens)
        for batch in (1, 16):
            rep = bench_inference(run, args.warmup, args.runs, batch, count_params(enc) + count_params(gen),
                                  _param_bytes(enc, gen), threads)
            lines.append(f"[{name} batch={batch}]\n" + rep.to_text())
    text = "\n".join(lines)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")


def cmd_grad_check(args):
    from .gradsuite import REGISTRY, run_all

    names = [n for n in REGISTRY if not args.only or n.startswith(args.only)]
    if not names:
        raise UsageError(f"no registered check matches {args.only!r}")
    reports = run_all(names, log=print)
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seattn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--manifest", help="manifest.txt to reproduce; overrides the other flags")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--count", type=int, default=2200)
    g.add_argument("--train-count", type=int, default=2000)
    g.add_argument("--image-size", type=int, default=32)
    g.set_defaults(fn=cmd_gen_data)

    def config_flags(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    t = sub.add_parser("train", help="train from scratch or resume")
    config_flags(t)
    t.add_argument("--data", help="dataset directory (generated in memory when omitted)")
    t.add_argument("--out", required=True, help="run directory for log, checkpoints and report")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--no-eval", action="store_true", help="skip the final evaluation")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="render a PPM grid for a captions file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--captions", required=True, help="UTF-8 file, one caption per line")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cols", type=int, default=8)
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("eval", help="metrics report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--out", required=True, help="key=value report path")
    e.add_argument("--json", help="optional JSON report path")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="parameter count and inference latency")
    config_flags(b)
    b.add_argument("--checkpoint")
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--reference", action="store_true", help="also time the stacked three-stage baseline")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("grad-check", help="finite-difference gradient suite")
    c.add_argument("--only", help="run checks whose name starts with this prefix")
    c.set_defaults(fn=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    from threadpoolctl import threadpool_limits

    threads = os.environ.get("SEATTN_THREADS")
    try:
        with threadpool_limits(limits=int(threads) if threads else None):
            return args.fn(args) or 0
    except (UsageError, ConfigurationError, ContractError, FileNotFoundError) as exc:
        print(f"seattn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"seattn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
